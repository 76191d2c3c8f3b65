"""Losses, Adam, plateau learning-rate schedule, metrics and the training loop."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import build_cutoff_graph
from .model import HermNet, collate, check_vocabulary, forward
from .structures import Dataset, LabeledFrame

__all__ = [
    "TrainConfig",
    "Metrics",
    "AdamState",
    "TrainingDiverged",
    "fit_reference_energies",
    "loss",
    "adam_step",
    "plateau_scheduler",
    "compute_metrics",
    "evaluate",
    "predict_frames",
    "dataset_loss",
    "train",
]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 3e-4
    plateau_patience: int = 10
    plateau_factor: float = 0.5
    energy_weight: float = 1.0
    force_weight: float = 100.0
    batch_size: int = 4
    max_epochs: int = 100
    seed: int = 0
    threads: int = 1
    lr_floor_ratio: float = 1e-4

    def __post_init__(self):
        if not (self.lr0 > 0 and self.plateau_patience > 0 and self.batch_size > 0 and self.max_epochs > 0):
            raise ValueError("lr0, plateau_patience, batch_size and max_epochs must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.energy_weight < 0 or self.force_weight < 0 or self.energy_weight + self.force_weight == 0:
            raise ValueError("loss weights must be non-negative and not both zero")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class Metrics:
    """Errors in eV, eV/atom and eV/Å. Force fields are NaN without force labels."""

    energy_mae: float
    energy_mae_per_atom: float
    energy_rmse_per_atom: float
    force_mae: float
    force_rmse: float

    def to_dict(self, unit: str = "eV") -> dict:
        scale = {"eV": 1.0, "meV": 1000.0}[unit]
        return {k: (None if math.isnan(v) else v * scale) for k, v in asdict(self).items()}


class TrainingDiverged(RuntimeError):
    pass


# ------------------------------------------------------------ references


def _composition(frames: Sequence[LabeledFrame], elements: Sequence[int]) -> np.ndarray:
    col = {z: k for k, z in enumerate(elements)}
    A = np.zeros((len(frames), len(elements)))
    for i, fr in enumerate(frames):
        for z in fr.structure.species:
            A[i, col[int(z)]] += 1
    return A


def fit_reference_energies(frames: Sequence[LabeledFrame], strict: bool = True) -> dict[int, float]:
    """Per-element energies minimizing sum_frames (E - sum_Z n_Z eps_Z)^2.

    With ``strict`` a rank-deficient composition matrix is an error; otherwise
    the minimum-norm least-squares solution is returned.
    """
    frames = [f for f in frames if f.labeled]
    if not frames:
        raise ValueError("no labeled frames to fit reference energies on")
    elements = sorted({int(z) for f in frames for z in f.structure.species})
    A = _composition(frames, elements)
    y = np.array([f.energy for f in frames])
    if np.linalg.matrix_rank(A) < len(elements):
        if strict:
            raise np.linalg.LinAlgError(
                "element counts are linearly dependent across frames (e.g. a fixed stoichiometry); "
                "reference energies are not identifiable, supply them manually"
            )
        eps = np.linalg.lstsq(A, y, rcond=None)[0]
    else:
        eps = np.linalg.solve(A.T @ A, A.T @ y)
    return {z: float(e) for z, e in zip(elements, eps)}


# ------------------------------------------------------------------ loss


def loss(pred_energy: Tensor, pred_forces: Tensor | None, frames: Sequence[LabeledFrame], w_e: float, w_f: float,
         n_frames: int | None = None, n_components: int | None = None) -> Tensor:
    """w_E * mean((dE / N)^2) + w_F * mean(dF^2) over a batch of labeled frames.

    ``n_frames``/``n_components`` override the denominators so that losses of
    sub-batches add up to the loss of the whole batch.
    """
    if not frames:
        raise ValueError("empty batch")
    if any(not f.labeled for f in frames):
        raise ValueError("loss needs labeled frames")
    sizes = np.array([len(f) for f in frames], dtype=np.float64)
    target = np.array([f.energy for f in frames])
    de = ad.div(ad.sub(pred_energy, target), sizes)
    total = ad.mul(ad.tsum(ad.mul(de, de)), w_e / (n_frames or len(frames)))
    if w_f > 0 and pred_forces is not None:
        mask, labels = _force_labels(frames)
        if mask.any():
            df = ad.mul(ad.sub(pred_forces, labels), mask)
            n = n_components or int(mask.sum())
            total = ad.add(total, ad.mul(ad.tsum(ad.mul(df, df)), w_f / n))
    return total


def _force_labels(frames):
    rows = []
    masks = []
    for f in frames:
        if f.forces is None:
            rows.append(np.zeros((len(f), 3)))
            masks.append(np.zeros((len(f), 3)))
        else:
            rows.append(f.forces)
            masks.append(np.ones((len(f), 3)))
    return np.concatenate(masks), np.concatenate(rows)


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update of ``params[name].data``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ------------------------------------------------------------- schedule


def plateau_scheduler(history: Sequence[float], lr0: float, patience: int, factor: float,
                      floor_ratio: float = 1e-4, threshold: float = 1e-6) -> float:
    """Learning rate after replaying a validation-loss history.

    The rate is multiplied by ``factor`` each time ``patience`` consecutive
    epochs fail to improve the best loss by more than ``threshold`` (relative),
    and never drops below ``lr0 * floor_ratio``.
    """
    if len(history) == 0:
        raise ValueError("empty loss history")
    lr = lr0
    floor = lr0 * floor_ratio
    best = math.inf
    bad = 0
    for value in history:
        improved = not math.isfinite(best) or value < best * (1.0 - threshold)
        if improved:
            best = value
            bad = 0
        else:
            bad += 1
        if bad >= patience:
            lr = max(lr * factor, floor)
            bad = 0
    return lr


# --------------------------------------------------------------- metrics


def compute_metrics(pred_energy, pred_forces, frames: Sequence[LabeledFrame]) -> Metrics:
    """Metrics from predicted arrays; unlabeled frames are skipped."""
    e_err, e_err_pa, f_err = [], [], []
    for e, f, fr in zip(pred_energy, pred_forces, frames):
        if not fr.labeled:
            continue
        d = float(e) - fr.energy
        e_err.append(d)
        e_err_pa.append(d / len(fr))
        if fr.forces is not None and f is not None:
            f_err.append((np.asarray(f) - fr.forces).ravel())
    if not e_err:
        raise ValueError("no labeled frames to evaluate")
    e_err = np.abs(e_err)
    e_err_pa = np.asarray(e_err_pa)
    nan = float("nan")
    fe = np.concatenate(f_err) if f_err else None
    return Metrics(
        energy_mae=float(e_err.mean()),
        energy_mae_per_atom=float(np.abs(e_err_pa).mean()),
        energy_rmse_per_atom=float(np.sqrt((e_err_pa**2).mean())),
        force_mae=nan if fe is None else float(np.abs(fe).mean()),
        force_rmse=nan if fe is None else float(np.sqrt((fe**2).mean())),
    )


def predict_frames(model: HermNet, frames: Sequence[LabeledFrame], forces: bool = True, batch_size: int = 16,
                   graphs=None):
    """Energies (array) and per-frame force arrays (or ``None``)."""
    energies = np.empty(len(frames))
    out_forces: list = [None] * len(frames)
    for start in range(0, len(frames), batch_size):
        chunk = frames[start : start + batch_size]
        structs = [f.structure for f in chunk]
        gs = None if graphs is None else graphs[start : start + batch_size]
        batch = collate(structs, model.config.r_cut, gs)
        pos = Tensor(batch.positions, requires_grad=forces)
        if forces:
            e, _ = forward(model.params, model.config, batch, pos)
            (g,) = ad.grad(ad.tsum(e), [pos])
            f = -g.data
            for k, o in enumerate(batch.node_offsets):
                out_forces[start + k] = f[o : o + batch.n_atoms[k]].copy()
        else:
            with ad.no_grad():
                e, _ = forward(model.params, model.config, batch, pos)
        energies[start : start + len(chunk)] = e.data
    return energies, out_forces


def evaluate(model: HermNet, dataset: Dataset | Sequence[LabeledFrame]) -> Metrics:
    frames = list(dataset)
    for fr in frames:
        check_vocabulary(fr.structure.species, model.config)
    want_forces = any(f.forces is not None for f in frames)
    e, f = predict_frames(model, frames, forces=want_forces)
    return compute_metrics(e, f, frames)


# -------------------------------------------------------------- training


def _batch_loss_and_grads(model: HermNet, frames, graphs, cfg: TrainConfig, n_frames, n_components, names):
    batch = collate([f.structure for f in frames], model.config.r_cut, graphs)
    use_forces = cfg.force_weight > 0 and any(f.forces is not None for f in frames)
    pos = Tensor(batch.positions, requires_grad=use_forces)
    energies, _ = forward(model.params, model.config, batch, pos)
    pred_f = None
    if use_forces:
        (g,) = ad.grad(ad.tsum(energies), [pos], create_graph=True)
        pred_f = ad.neg(g)
    value = loss(energies, pred_f, frames, cfg.energy_weight, cfg.force_weight, n_frames, n_components)
    grads = ad.grad(value, [model.params[n] for n in names])
    return float(value.data), grads


def _step(model, frames, graphs, cfg, names, pool):
    n_frames = len(frames)
    n_comp = sum(3 * len(f) for f in frames if f.forces is not None) or None
    k = min(cfg.threads, len(frames))
    if k == 1 or pool is None:
        return _batch_loss_and_grads(model, frames, graphs, cfg, n_frames, n_comp, names)
    bounds = np.linspace(0, len(frames), k + 1).astype(int)
    jobs = [
        pool.submit(
            _batch_loss_and_grads, model, frames[a:b], graphs[a:b], cfg, n_frames, n_comp, names
        )
        for a, b in zip(bounds[:-1], bounds[1:])
    ]
    results = [j.result() for j in jobs]
    value = sum(r[0] for r in results)
    grads = [sum((r[1][i] for r in results[1:]), results[0][1][i]) for i in range(len(names))]
    return value, grads


def dataset_loss(model: HermNet, frames: Sequence[LabeledFrame], cfg: TrainConfig, graphs=None) -> float:
    """Loss over all labeled frames, evaluated in chunks without parameter gradients."""
    frames = [f for f in frames if f.labeled]
    if graphs is None:
        graphs = [build_cutoff_graph(f.structure, model.config.r_cut) for f in frames]
    want_forces = cfg.force_weight > 0 and any(f.forces is not None for f in frames)
    e, forces = predict_frames(model, frames, forces=want_forces, graphs=graphs)
    n_comp = sum(3 * len(f) for f in frames if f.forces is not None)
    de = np.array([(ei - f.energy) / len(f) for ei, f in zip(e, frames)])
    total = cfg.energy_weight * float(np.mean(de**2))
    if want_forces and n_comp:
        sq = sum(float(((fp - f.forces) ** 2).sum()) for fp, f in zip(forces, frames) if f.forces is not None)
        total += cfg.force_weight * sq / n_comp
    return total


@dataclass
class TrainResult:
    model: HermNet
    best_epoch: int
    history: list[dict]
    log_lines: list[str]


def train(model: HermNet, train_set: Dataset, val_set: Dataset | None, cfg: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None, fit_references: bool = True) -> TrainResult:
    """Adam with a plateau schedule; keeps the parameters with the best validation loss.

    ``model.params`` ends up holding the best parameters.
    """
    train_frames = [f for f in train_set if f.labeled]
    val_frames = [f for f in (val_set or []) if f.labeled]
    if not train_frames:
        raise ValueError("training set has no labeled frames")
    for fr in train_frames + val_frames:
        check_vocabulary(fr.structure.species, model.config)

    if fit_references:
        refs = fit_reference_energies(train_frames, strict=False)
        for z, e in refs.items():
            model.params["reference_energy"].data[z - 1] = e

    r_cut = model.config.r_cut
    train_graphs = [build_cutoff_graph(f.structure, r_cut) for f in train_frames]
    val_graphs = [build_cutoff_graph(f.structure, r_cut) for f in val_frames]
    names = sorted(model.params)
    state = AdamState()
    lr = cfg.lr0
    val_history: list[float] = []
    history: list[dict] = []
    lines: list[str] = []
    best = (math.inf, -1, None)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in range(cfg.max_epochs):
            order = np.random.default_rng(cfg.seed + epoch).permutation(len(train_frames))
            losses, weights = [], []
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                frames = [train_frames[i] for i in idx]
                graphs = [train_graphs[i] for i in idx]
                value, grads = _step(model, frames, graphs, cfg, names, pool)
                if not math.isfinite(value) or any(not np.all(np.isfinite(g.data)) for g in grads):
                    raise TrainingDiverged(
                        f"non-finite loss or gradient at epoch {epoch}; the learning rate ({lr:g}) "
                        "may be too high or gradients are exploding"
                    )
                adam_step(model.params, dict(zip(names, grads)), state, lr)
                losses.append(value)
                weights.append(len(idx))
            train_loss = float(np.average(losses, weights=weights))
            if val_frames:
                val_loss = dataset_loss(model, val_frames, cfg, val_graphs)
                m = evaluate_frames(model, val_frames, val_graphs)
            else:
                val_loss, m = train_loss, None
            if not math.isfinite(val_loss):
                raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
            val_history.append(val_loss)
            if val_loss < best[0]:
                best = (val_loss, epoch, {k: p.data.copy() for k, p in model.params.items()})
            row = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "val_energy_mae_per_atom": float("nan") if m is None else m.energy_mae_per_atom,
                "val_force_mae": float("nan") if m is None else m.force_mae,
            }
            history.append(row)
            lines.append("\t".join(_fmt(row[k]) for k in row))
            if on_epoch is not None:
                on_epoch(row)
            lr = plateau_scheduler(val_history, cfg.lr0, cfg.plateau_patience, cfg.plateau_factor, cfg.lr_floor_ratio)
    finally:
        if pool is not None:
            pool.shutdown()
    for k, arr in best[2].items():
        model.params[k].data[...] = arr
    return TrainResult(model, best[1], history, lines)


def evaluate_frames(model, frames, graphs=None) -> Metrics:
    want_forces = any(f.forces is not None for f in frames)
    e, f = predict_frames(model, frames, forces=want_forces, graphs=graphs)
    return compute_metrics(e, f, frames)


def _fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    return format(x, ".8g")
