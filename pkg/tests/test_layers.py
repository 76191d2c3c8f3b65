import mpmath
import numpy as np
import pytest

from hermnet import autodiff as ad
from hermnet.autodiff import Tensor
from hermnet.graph import VertexKey, build_cutoff_graph, decompose
from hermnet.layers import cosine_cutoff, cutoff_t, radial_basis, radial_basis_t
from hermnet.model import (
    ModelConfig,
    NodeState,
    _edge_geometry,
    angular_invariants,
    angular_message_update,
    init_params,
    radial_message,
    radial_update,
)
from hermnet.selfcheck import random_rotation
from hermnet.structures import AtomicStructure


def test_cosine_cutoff_values():
    assert cosine_cutoff(0.0, 5.0) == 1.0
    assert cosine_cutoff(5.0, 5.0) == 0.0
    assert cosine_cutoff(2.5, 5.0) == pytest.approx(0.5, abs=1e-15)
    assert cosine_cutoff(7.0, 5.0) == 0.0
    assert np.all(np.diff(cosine_cutoff(np.linspace(0, 5, 50), 5.0)) < 0)


def test_radial_basis_values():
    # sin(n * fl(pi)) is zero only up to rounding
    assert np.allclose(radial_basis(5.0, 5.0), 0.0, rtol=0, atol=1e-14)
    b = radial_basis(2.5, 5.0)
    assert b.shape == (30,)
    assert b[0] == pytest.approx(0.4, abs=1e-15)
    assert abs(b[1]) < 1e-15
    with pytest.raises(ValueError):
        radial_basis(0.0, 5.0)


def test_radial_basis_against_high_precision():
    mpmath.mp.dps = 40
    r, rc = mpmath.mpf("1.7"), mpmath.mpf(5)
    ref = [float(mpmath.sin(n * mpmath.pi * r / rc) / r) for n in range(1, 31)]
    assert np.max(np.abs(radial_basis(1.7, 5.0) - ref)) < 1e-14


def test_tensor_versions_match_numpy(rng):
    r = rng.uniform(0.1, 5.0, 20)
    assert np.allclose(cutoff_t(Tensor(r), 5.0).data, cosine_cutoff(r, 5.0), rtol=0, atol=1e-15)
    assert np.allclose(radial_basis_t(Tensor(r), 5.0).data, radial_basis(r, 5.0), rtol=1e-14, atol=1e-14)


def setup(structure, variant="hvnet", seed=0, hidden=6):
    cfg = ModelConfig(variant, hidden, 1, 4.0, tuple(sorted(set(structure.species.tolist()))))
    params = init_params(cfg, seed)
    kind = {"hvnet": "vertex", "hpnet": "pair", "htnet": "vertex"}[variant]
    g = decompose(build_cutoff_graph(structure, cfg.r_cut), kind)
    rng = np.random.default_rng(seed)
    n = len(structure)
    state = NodeState(Tensor(rng.normal(size=(n, hidden))), Tensor(rng.normal(size=(n, 3, hidden))))
    return cfg, params, g, state


def test_isolated_node_receives_nothing():
    st = AtomicStructure([1, 1, 1], [[0, 0, 0], [1.0, 0, 0], [10.0, 0, 0]])
    cfg, params, g, state = setup(st)
    geo = _edge_geometry(g, Tensor(st.positions))
    ds, dv, _ = radial_message(state, g, VertexKey(1), params, 0, geo)
    assert np.all(ds.data[2] == 0) and np.all(dv.data[2] == 0)
    assert np.any(ds.data[0] != 0)


def test_edge_exactly_at_cutoff_contributes_nothing():
    st = AtomicStructure([1, 1], [[0, 0, 0], [4.0, 0, 0]])
    cfg, params, g, state = setup(st)
    assert g.n_edges == 2
    ds, dv, _ = radial_message(state, g, VertexKey(1), params, 0, _edge_geometry(g, Tensor(st.positions)))
    assert np.max(np.abs(ds.data)) < 1e-12 and np.max(np.abs(dv.data)) < 1e-12


def test_radial_message_rotation(rng):
    st = AtomicStructure([1] * 5, rng.uniform(0, 2.5, (5, 3)))
    cfg, params, g, state = setup(st)
    ds, dv, _ = radial_message(state, g, VertexKey(1), params, 0, _edge_geometry(g, Tensor(st.positions)))
    R = random_rotation(rng)
    moved = AtomicStructure(st.species, st.positions @ R.T)
    g2 = decompose(build_cutoff_graph(moved, cfg.r_cut), "vertex")
    rot_v = Tensor(np.einsum("ij,njf->nif", R, state.v.data))
    ds2, dv2, _ = radial_message(NodeState(state.s, rot_v), g2, VertexKey(1), params, 0,
                                 _edge_geometry(g2, Tensor(moved.positions)))
    assert np.max(np.abs(ds2.data - ds.data)) < 1e-10
    assert np.max(np.abs(dv2.data - np.einsum("ij,njf->nif", R, dv.data))) < 1e-10


def test_radial_update_residual(rng):
    s, v = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 3, 4)))
    state = NodeState(s, v)
    same = radial_update(state, Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 3, 4))))
    assert np.array_equal(same.s.data, s.data) and np.array_equal(same.v.data, v.data)
    d1s, d2s = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    d1v, d2v = rng.normal(size=(3, 3, 4)), rng.normal(size=(3, 3, 4))
    both = radial_update(state, Tensor(d1s + d2s), Tensor(d1v + d2v))
    seq = radial_update(radial_update(state, Tensor(d1s), Tensor(d1v)), Tensor(d2s), Tensor(d2v))
    assert np.allclose(both.s.data, seq.s.data) and np.allclose(both.v.data, seq.v.data)


def test_zero_message_weights_leave_state_unchanged(rng):
    st = AtomicStructure([1, 8, 1], rng.uniform(0, 2, (3, 3)))
    cfg, params, g, state = setup(st)
    for name, p in params.items():
        if ".radial." in name and name.endswith("phi2.weight"):
            p.data[:] = 0.0
    geo = _edge_geometry(g, Tensor(st.positions))
    for key in g.relations:
        ds, dv, _ = radial_message(state, g, key, params, 0, geo)
        new = radial_update(state, ds, dv)
        assert np.array_equal(new.s.data, state.s.data) and np.array_equal(new.v.data, state.v.data)


@pytest.mark.parametrize("theta, expected", [(0.0, 4.0), (np.pi / 2, 2.0), (np.pi, 0.0)])
def test_two_unit_edges_angle(theta, expected):
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([np.cos(theta), np.sin(theta), 0.0])
    w = Tensor((e1 + e2).reshape(1, 3, 1))
    eye = Tensor(np.eye(1))
    _, _, inv = angular_invariants(w, w, eye, eye)
    assert inv.data[0, 0] == pytest.approx(expected, abs=1e-12)


def test_angular_stage_with_zero_vectors_is_gated_self_mlp(rng):
    st = AtomicStructure([1, 8], [[0, 0, 0], [1.0, 0, 0]])
    cfg, params, g, state = setup(st)
    state = NodeState(state.s, Tensor(np.zeros((2, 3, cfg.hidden))))
    out = angular_message_update(state, g, params, 0, "vertex", cfg.element_set)
    assert np.all(out.v.data == 0)
    assert np.any(out.s.data != state.s.data)
    # each node's scalar update depends only on its own s
    state2 = NodeState(Tensor(state.s.data * [[1.0], [2.0]]), state.v)
    out2 = angular_message_update(state2, g, params, 0, "vertex", cfg.element_set)
    assert np.array_equal(out2.s.data[0], out.s.data[0])


@pytest.mark.parametrize("variant", ["hvnet", "htnet"])
def test_angular_rotation(variant, rng):
    st = AtomicStructure([1, 8, 1, 8], rng.uniform(0, 2, (4, 3)))
    cfg, params, g, state = setup(st, variant)
    R = random_rotation(rng)

    def run(v_arrays):
        if variant == "hvnet":
            s = NodeState(state.s, Tensor(v_arrays[0] + v_arrays[1]))
        else:
            s = NodeState(state.s, Tensor(v_arrays[0] + v_arrays[1]), {1: Tensor(v_arrays[0]), 8: Tensor(v_arrays[1])})
        return angular_message_update(s, g, params, 0, "vertex" if variant == "hvnet" else "triad", cfg.element_set)

    parts = [rng.normal(size=(4, 3, cfg.hidden)) for _ in range(2)]
    a = run(parts)
    b = run([np.einsum("ij,njf->nif", R, p) for p in parts])
    assert np.max(np.abs(a.s.data - b.s.data)) < 1e-10
    assert np.max(np.abs(np.einsum("ij,njf->nif", R, a.v.data) - b.v.data)) < 1e-10


def test_norm_is_smooth_at_zero():
    v = Tensor(np.zeros((1, 3, 2)), requires_grad=True)
    n = ad.norm(v, 1e-8)
    assert np.all(n.data == 0)
    (g,) = ad.grad(ad.tsum(n), [v])
    assert np.all(np.isfinite(g.data))
