"""Fast invariant suite run by ``hermnet selfcheck``."""

from __future__ import annotations

import time
from contextlib import ExitStack
from dataclasses import dataclass

import numpy as np

from . import _hooks
from .graph import brute_force_graph, build_cutoff_graph
from .model import ModelConfig, init_params, predict, predict_energy
from .structures import AtomicStructure
from .synthetic import random_cluster, random_crystal


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def small_model(variant: str, elements=(1, 8), seed: int = 0, hidden: int = 8, layers: int = 2, r_cut: float = 4.0):
    """Random-weight model whose readout is switched on (the default init zeroes it)."""
    cfg = ModelConfig(variant, hidden, layers, r_cut, elements)
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    params["readout2.weight"].data[:] = rng.normal(0.0, 1.0, params["readout2.weight"].shape)
    return cfg, params


def _rel(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / max(np.max(np.abs(b)), 1e-300))


def check_equivariance(rng) -> CheckResult:
    worst_e = worst_f = 0.0
    for variant in ("hvnet", "hpnet", "htnet"):
        cfg, params = small_model(variant, seed=int(rng.integers(1 << 30)))
        st = random_cluster(rng, 5, [1, 8], min_dist=0.9)
        e, _, f = predict(st, params, cfg)
        R = random_rotation(rng)
        moved = AtomicStructure(st.species, st.positions @ R.T + rng.normal(size=3), None, st.pbc)
        e2, _, f2 = predict(moved, params, cfg)
        perm = rng.permutation(len(st))
        shuffled = AtomicStructure(st.species[perm], st.positions[perm])
        e3, _, f3 = predict(shuffled, params, cfg)
        worst_e = max(worst_e, abs(e2 - e) / abs(e), abs(e3 - e) / abs(e))
        worst_f = max(worst_f, _rel(f2, f @ R.T), _rel(f3, f[perm]))
    ok = worst_e <= 1e-8 and worst_f <= 1e-7
    return CheckResult("equivariance", ok, f"energy rel {worst_e:.2e}, force rel {worst_f:.2e}")


def check_finite_difference(rng, h: float = 1e-4) -> CheckResult:
    worst = 0.0
    for variant in ("hvnet", "hpnet", "htnet"):
        cfg, params = small_model(variant, seed=int(rng.integers(1 << 30)))
        st = random_cluster(rng, 4, [1, 8], min_dist=0.9)
        _, _, f = predict(st, params, cfg)
        fd = np.zeros_like(f)
        for i in range(len(st)):
            for k in range(3):
                p = st.positions.copy()
                p[i, k] += h
                ep = predict_energy(AtomicStructure(st.species, p), params, cfg)[0]
                p[i, k] -= 2 * h
                em = predict_energy(AtomicStructure(st.species, p), params, cfg)[0]
                fd[i, k] = -(ep - em) / (2 * h)
        worst = max(worst, _rel(f, fd))
    return CheckResult("finite_difference_forces", worst <= 1e-5, f"max rel error {worst:.2e}")


def check_neighbor_list(rng, n_structures: int = 10) -> CheckResult:
    for k in range(n_structures):
        if k % 2:
            st = random_crystal(rng, int(rng.integers(1, 5)), [1, 8], min_dist=0.8)
        else:
            st = random_cluster(rng, 8, [1, 8], min_dist=0.5)
        r_cut = float(rng.uniform(2.0, 5.0))
        if build_cutoff_graph(st, r_cut).edge_set() != brute_force_graph(st, r_cut).edge_set():
            return CheckResult("neighbor_list", False, f"structure {k} differs from brute force")
    return CheckResult("neighbor_list", True, f"{n_structures} structures match brute force")


def check_cutoff_smoothness(rng, delta: float = 1e-3) -> CheckResult:
    cfg, params = small_model("hvnet", seed=int(rng.integers(1 << 30)))
    r_cut = cfg.r_cut
    base = np.array([[0.0, 0.0, 0.0], [1.0, 0.2, 0.0]])
    # third atom straddles the cutoff sphere of atom 0 only
    direction = np.array([-1.0, 0.0, 0.0])
    energies = []
    for r in (r_cut - delta, r_cut + delta):
        pos = np.vstack([base, r * direction])
        energies.append(predict_energy(AtomicStructure([1, 8, 1], pos), params, cfg)[0])
    jump = abs(energies[1] - energies[0])
    return CheckResult("cutoff_smoothness", jump < 1e-6, f"|dE| = {jump:.2e} eV across 2*{delta:g} Å")


CHECKS = (check_equivariance, check_finite_difference, check_neighbor_list, check_cutoff_smoothness)


def run_selfcheck(seed: int = 0, inject: list[str] | None = None) -> list[CheckResult]:
    results = []
    with ExitStack() as stack:
        for name in inject or []:
            stack.enter_context(_hooks.inject(name))
        for check in CHECKS:
            rng = np.random.default_rng(seed)
            t = time.perf_counter()
            res = check(rng)
            res.detail += f" ({time.perf_counter() - t:.1f} s)"
            results.append(res)
    return results
