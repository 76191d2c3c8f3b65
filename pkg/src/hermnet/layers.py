"""Radial filters and small dense building blocks."""

from __future__ import annotations

import numpy as np

from . import _hooks
from . import autodiff as ad
from .autodiff import Tensor

N_RBF = 30


def cosine_cutoff(r, r_cut: float):
    """0.5 * (cos(pi r / r_cut) + 1) inside the cutoff, 0 beyond it."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise ValueError("distances must be non-negative")
    out = np.where(r <= r_cut, 0.5 * (np.cos(np.pi * r / r_cut) + 1.0), 0.0)
    return out if out.ndim else float(out)


def radial_basis(r, r_cut: float, n_rbf: int = N_RBF) -> np.ndarray:
    """sin(n pi r / r_cut) / r for n = 1..n_rbf; shape (..., n_rbf)."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("radial basis needs r > 0")
    n = np.arange(1, n_rbf + 1)
    return np.sin(np.multiply.outer(r, n) * (np.pi / r_cut)) / r[..., None]


def cutoff_t(r: Tensor, r_cut: float) -> Tensor:
    """Differentiable cosine cutoff for edge lengths that are all <= r_cut."""
    inside = (r.data <= r_cut).astype(np.float64)
    fc = ad.mul(ad.add(ad.cos(ad.mul(r, np.pi / r_cut)), 1.0), 0.5)
    power = _hooks.get("cutoff_exponent", 1)
    if power != 1:
        out = Tensor(np.ones(r.shape))
        for _ in range(int(power)):
            out = ad.mul(out, fc)
        fc = out
    return ad.mul(fc, inside) if not inside.all() else fc


def radial_basis_t(r: Tensor, r_cut: float, n_rbf: int = N_RBF) -> Tensor:
    freq = np.arange(1, n_rbf + 1) * (np.pi / r_cut)
    return ad.einsum("ek,e->ek", ad.sin(ad.einsum("e,k->ek", r, freq)), ad.div(1.0, r))


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = ad.matmul(x, weight)
    return y if bias is None else ad.add(y, bias)


def mlp(x: Tensor, params: dict, prefix: str) -> Tensor:
    """Two dense layers with a SiLU between them."""
    h = ad.silu(dense(x, params[f"{prefix}1.weight"], params[f"{prefix}1.bias"]))
    return dense(h, params[f"{prefix}2.weight"], params[f"{prefix}2.bias"])


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(rng, prefix: str, sizes: tuple[int, int, int], zero_last: bool = False) -> dict[str, np.ndarray]:
    d_in, d_hid, d_out = sizes
    out = {
        f"{prefix}1.weight": glorot(rng, d_in, d_hid),
        f"{prefix}1.bias": np.zeros(d_hid),
        f"{prefix}2.weight": np.zeros((d_hid, d_out)) if zero_last else glorot(rng, d_hid, d_out),
        f"{prefix}2.bias": np.zeros(d_out),
    }
    return out
