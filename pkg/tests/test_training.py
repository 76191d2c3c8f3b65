import math

import numpy as np
import pytest

from hermnet import autodiff as ad
from hermnet.autodiff import Tensor
from hermnet.model import HermNet, ModelConfig
from hermnet.structures import AtomicStructure, Dataset, LabeledFrame
from hermnet.synthetic import lj_cluster_dataset
from hermnet.training import (
    AdamState,
    Metrics,
    TrainConfig,
    TrainingDiverged,
    _batch_loss_and_grads,
    adam_step,
    compute_metrics,
    dataset_loss,
    evaluate,
    fit_reference_energies,
    loss,
    plateau_scheduler,
    train,
)

from conftest import central_difference


def frame(species, energy, forces=None):
    pos = np.arange(3 * len(species), dtype=float).reshape(-1, 3)
    return LabeledFrame(AtomicStructure(species, pos), energy, forces)


def test_reference_energies_exact_system():
    eps = fit_reference_energies([frame([1, 1], -2.0), frame([8, 8], -10.0), frame([8, 1, 1], -7.0)])
    assert eps[1] == pytest.approx(-1.0, abs=1e-12)
    assert eps[8] == pytest.approx(-5.0, abs=1e-12)


def test_reference_energies_single_element():
    eps = fit_reference_energies([frame([6] * 4, -4.0), frame([6] * 8, -8.0)])
    assert eps == {6: pytest.approx(-1.0, abs=1e-12)}


def test_reference_energies_rank_deficient():
    frames = [frame([1, 1, 8], -7.0), frame([1, 1, 8], -7.1)]
    with pytest.raises(np.linalg.LinAlgError, match="not identifiable"):
        fit_reference_energies(frames)
    eps = fit_reference_energies(frames, strict=False)
    assert 2 * eps[1] + eps[8] == pytest.approx(-7.05)


def test_reference_energies_skip_unlabeled():
    eps = fit_reference_energies([frame([6] * 2, -2.0), LabeledFrame(AtomicStructure([7], [[0, 0, 0]]))])
    assert set(eps) == {6}


def test_loss_examples():
    fr = [frame([1, 1], -1.0)]
    assert loss(Tensor([-1.0]), None, fr, 1.0, 0.0).item() == 0.0
    assert loss(Tensor([1.0]), None, fr, 1.0, 0.0).item() == pytest.approx(1.0)
    f = np.ones((2, 3))
    fr = [frame([1, 1], 0.0, f)]
    assert loss(Tensor([0.0]), Tensor(f + 0.5), fr, 1.0, 4.0).item() == pytest.approx(4 * 0.25)


def test_loss_masks_frames_without_forces():
    frames = [frame([1], 0.0, np.ones((1, 3))), frame([1, 1], 0.0)]
    pred_f = Tensor(np.vstack([np.ones((1, 3)), 100 * np.ones((2, 3))]))
    assert loss(Tensor([0.0, 0.0]), pred_f, frames, 1.0, 1.0).item() == 0.0


def test_loss_rejects_empty_batch():
    with pytest.raises(ValueError):
        loss(Tensor(np.zeros(0)), None, [], 1.0, 1.0)


def test_loss_parameter_gradient_matches_finite_difference():
    ds = lj_cluster_dataset(3, seed=1)
    cfg = ModelConfig("hvnet", 6, 2, 5.0, tuple(ds.element_set))
    model = HermNet(cfg, seed=0)
    rng = np.random.default_rng(0)
    model.params["readout2.weight"].data[:] = rng.normal(0, 0.5, (6, 1))
    tc = TrainConfig(force_weight=10.0)
    names = ["readout2.weight", "layer0.radial.v18.filter.weight", "embedding"]
    _, grads = _batch_loss_and_grads(model, ds.frames, None, tc, None, None, names)
    for name, g in zip(names, grads):
        w = model.params[name].data
        if name == "embedding":
            # only rows of present elements matter; check a small slice
            sub = w[17:18, :3]
            fd = central_difference(lambda: dataset_loss(model, ds.frames, tc), sub, 1e-5)
            g_sub = g.data[17:18, :3]
        else:
            sub = w.reshape(-1)[:8] if w.ndim == 1 else w[:2]
            fd = central_difference(lambda: dataset_loss(model, ds.frames, tc), sub, 1e-5)
            g_sub = g.data.reshape(-1)[:8] if w.ndim == 1 else g.data[:2]
        err = np.max(np.abs(g_sub - fd)) / np.max(np.abs(fd))
        assert err < 1e-5, name


def test_adam_first_step_moves_by_lr():
    p = {"x": Tensor(np.array([1.0]))}
    adam_step(p, {"x": np.array([1.0])}, AdamState(), 0.1)
    assert p["x"].data[0] == pytest.approx(1.0 - 0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_is_a_no_op():
    p = {"x": Tensor(np.array([1.0, -2.0]))}
    state = AdamState()
    for _ in range(10):
        adam_step(p, {"x": np.zeros(2)}, state, 0.1)
    assert p["x"].data.tolist() == [1.0, -2.0]


def test_adam_converges_on_quadratic(rng):
    c = rng.normal(size=5)
    x = Tensor(rng.normal(size=5), requires_grad=True)
    state = AdamState()
    for _ in range(200):
        d = ad.sub(x, c)
        (g,) = ad.grad(ad.tsum(ad.mul(d, d)), [x])
        adam_step({"x": x}, {"x": g}, state, 0.1)
    assert np.linalg.norm(x.data - c) < 1e-2


def test_plateau_scheduler():
    assert plateau_scheduler([5, 4, 3, 2, 1], 1e-3, 3, 0.5) == 1e-3
    assert plateau_scheduler([1.0] * 4, 1e-3, 3, 0.5) == pytest.approx(5e-4)
    assert plateau_scheduler([1.0] * 400, 1e-3, 3, 0.5, floor_ratio=1e-2) == pytest.approx(1e-5)
    # an improvement resets the counter
    assert plateau_scheduler([1, 1, 1, 0.5, 0.5, 0.5], 1.0, 3, 0.5) == 1.0


def test_metrics_examples():
    frames = [frame([1], e) for e in (1.0, 2.0, 4.0)]
    m = compute_metrics([1.0, 2.0, 3.0], [None] * 3, frames)
    assert m.energy_mae == pytest.approx(1 / 3)
    assert math.isnan(m.force_mae)
    f = np.zeros((2, 3))
    m = compute_metrics([0.0], [f + 0.1], [frame([1, 1], 0.0, f)])
    assert m.force_mae == pytest.approx(0.1) and m.force_rmse == pytest.approx(0.1)
    m = compute_metrics([0.0], [f], [frame([1, 1], 0.0, f)])
    assert m == Metrics(0.0, 0.0, 0.0, 0.0, 0.0)


def test_metrics_units():
    d = Metrics(0.001, 0.0005, 0.0005, 0.002, float("nan")).to_dict("meV")
    assert d["energy_mae"] == pytest.approx(1.0)
    assert d["force_mae"] == pytest.approx(2.0)
    assert d["force_rmse"] is None


def small_training(**kw):
    ds = lj_cluster_dataset(8, seed=3)
    cfg = ModelConfig("hvnet", 8, 1, 5.0, tuple(ds.element_set))
    tc = TrainConfig(**{"max_epochs": 3, "batch_size": 3, "lr0": 1e-3, **kw})
    return ds, cfg, tc


def test_training_is_deterministic():
    ds, cfg, tc = small_training()
    a = train(HermNet(cfg, seed=0), ds[:6], ds[6:], tc)
    b = train(HermNet(cfg, seed=0), ds[:6], ds[6:], tc)
    assert a.log_lines == b.log_lines
    assert all(np.array_equal(a.model.params[k].data, b.model.params[k].data) for k in a.model.params)


def test_training_lowers_the_loss():
    ds, cfg, tc = small_training(max_epochs=10)
    model = HermNet(cfg, seed=0)
    res = train(model, ds, None, tc)
    assert res.history[-1]["train_loss"] < 0.5 * res.history[0]["train_loss"]
    assert evaluate(model, ds).force_mae < np.mean(np.abs(np.concatenate([f.forces for f in ds])))


def test_threads_give_the_same_result():
    ds, cfg, tc = small_training()
    a = train(HermNet(cfg, seed=0), ds, None, tc)
    b = train(HermNet(cfg, seed=0), ds, None, TrainConfig(**{**tc.__dict__, "threads": 3}))
    for k in a.model.params:
        assert np.allclose(a.model.params[k].data, b.model.params[k].data, rtol=1e-10, atol=1e-12)


def test_energy_only_training():
    ds, cfg, tc = small_training(force_weight=0.0)
    frames = Dataset([LabeledFrame(f.structure, f.energy) for f in ds])
    res = train(HermNet(cfg, seed=0), frames, None, tc)
    assert all(math.isfinite(r["train_loss"]) for r in res.history)


def test_training_keeps_best_parameters():
    ds, cfg, tc = small_training(max_epochs=4)
    res = train(HermNet(cfg, seed=0), ds[:6], ds[6:], tc)
    best = min(res.history, key=lambda r: r["val_loss"])
    assert res.best_epoch == best["epoch"]
    assert dataset_loss(res.model, ds[6:].frames, tc) == pytest.approx(best["val_loss"], rel=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    ds, cfg, tc = small_training()
    bad = Dataset([LabeledFrame(ds[0].structure, float("inf"), ds[0].forces)] + ds.frames[1:])
    with pytest.raises(TrainingDiverged):
        train(HermNet(cfg, seed=0), bad, None, tc, fit_references=False)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(plateau_factor=1.5)
    with pytest.raises(ValueError):
        TrainConfig(energy_weight=0.0, force_weight=0.0)
