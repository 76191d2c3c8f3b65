import itertools

import numpy as np
import pytest

from hermnet.graph import (
    PairKey,
    TriadKey,
    VertexKey,
    brute_force_graph,
    build_cutoff_graph,
    decompose,
    present_triads,
    relation_count,
    relation_keys,
)
from hermnet.structures import AtomicStructure
from hermnet.synthetic import random_cluster, random_crystal


def water():
    return AtomicStructure([8, 1, 1], [[0.0, 0.0, 0.0], [0.757, 0.586, 0.0], [-0.757, 0.586, 0.0]])


def test_two_atoms():
    g = build_cutoff_graph(AtomicStructure([1, 1], [[0, 0, 0], [0, 0, 3.0]]), 5.0)
    assert g.edge_set() == {(0, 1, 0, 0, 0), (1, 0, 0, 0, 0)}
    assert np.allclose(g.r_norm, 3.0)


def test_edge_vector_convention():
    # r_vec points from the destination to the source
    g = build_cutoff_graph(AtomicStructure([1, 1], [[0, 0, 0], [0, 0, 3.0]]), 5.0)
    e = next(e for e in g.edges() if e.src == 1)
    assert np.allclose(e.r_vec, [0, 0, 3.0])


def test_single_atom_cubic_cell_has_18_self_images():
    st = AtomicStructure([29], [[0.3, 0.1, 0.2]], 3.0 * np.eye(3), (True, True, True))
    g = build_cutoff_graph(st, 5.0)
    assert g.n_edges == 18
    assert np.all(g.src == 0) and np.all(g.dst == 0)
    r = np.sort(g.r_norm)
    assert np.allclose(r[:6], 3.0) and np.allclose(r[6:], 3.0 * np.sqrt(2))
    assert g.edge_set() == brute_force_graph(st, 5.0).edge_set()


def test_no_self_edge_without_periodicity():
    g = build_cutoff_graph(AtomicStructure([1], [[0, 0, 0]]), 5.0)
    assert g.n_edges == 0


def test_random_triclinic_matches_brute_force(rng):
    for _ in range(5):
        st = random_crystal(rng, 20, [1, 8], min_dist=0.5)
        r_cut = float(rng.uniform(2.0, 5.0))
        a, b = build_cutoff_graph(st, r_cut), brute_force_graph(st, r_cut)
        assert a.edge_set() == b.edge_set()
        assert np.allclose(a.r_vec, b.r_vec)


def test_mixed_pbc_and_small_cells(rng):
    for _ in range(10):
        cell = np.diag(rng.uniform(0.8, 2.0, 3)) + rng.uniform(-0.3, 0.3, (3, 3))
        pbc = tuple(bool(x) for x in rng.integers(0, 2, 3))
        st = AtomicStructure([1, 8, 1], rng.uniform(-1, 3, (3, 3)), cell, pbc)
        assert build_cutoff_graph(st, 3.0).edge_set() == brute_force_graph(st, 3.0).edge_set()


def test_positions_outside_cell_are_handled():
    cell = 4.0 * np.eye(3)
    st = AtomicStructure([1, 1], [[0.1, 0, 0], [7.9, 0, 0]], cell, (True, True, True))
    g = build_cutoff_graph(st, 1.0)
    assert g.edge_set() == brute_force_graph(st, 1.0).edge_set()
    assert np.allclose(g.r_norm, 0.2)


def test_edges_are_sorted_and_in_cutoff(rng):
    st = random_cluster(rng, 30, [1, 6], min_dist=0.7)
    g = build_cutoff_graph(st, 3.0)
    assert np.all((g.r_norm > 0) & (g.r_norm <= 3.0))
    keys = list(zip(g.dst, g.src))
    assert keys == sorted(keys)


def test_water_vertex_decomposition():
    g = decompose(build_cutoff_graph(water(), 5.0), "vertex")
    assert set(g.relations) == {VertexKey(1), VertexKey(8)}
    to_h = g.relations[VertexKey(1)]
    assert len(to_h) == 4
    assert sorted(g.species[g.src[to_h]].tolist()) == [1, 1, 8, 8]
    assert len(g.relations[VertexKey(8)]) == 2


def test_water_pair_decomposition():
    g = decompose(build_cutoff_graph(water(), 5.0), "pair")
    assert set(g.relations) == {PairKey(1, 1), PairKey(8, 1), PairKey(1, 8)}
    assert len(g.relations) <= relation_count([1, 8], "pair")


def test_water_triads():
    g = build_cutoff_graph(water(), 5.0)
    # an edge paired with itself counts, so an H with neighbours {O, H} realises HH, HO and OO
    assert present_triads(g) == {TriadKey(8, (1, 1)), TriadKey(1, (1, 1)), TriadKey(1, (1, 8)), TriadKey(1, (8, 8))}
    assert len(relation_keys([1, 8], "triad")) == 6


def test_triad_key_is_unordered():
    assert TriadKey(1, (8, 6)) == TriadKey(1, (6, 8))
    assert str(TriadKey(1, (8, 6))) == "t1:6-8"


@pytest.mark.parametrize("n, expected", [(1, (1, 1, 1)), (3, (3, 9, 18)), (5, (5, 25, 75))])
def test_relation_count(n, expected):
    els = list(range(1, n + 1))
    assert tuple(relation_count(els, k) for k in ("vertex", "pair", "triad")) == expected
    assert tuple(len(relation_keys(els, k)) for k in ("vertex", "pair", "triad")) == expected


def test_decomposition_partitions_edges(rng):
    st = random_cluster(rng, 15, [1, 6, 8], min_dist=0.8)
    g = build_cutoff_graph(st, 4.0)
    for kind in ("vertex", "pair"):
        parts = decompose(g, kind).relations.values()
        joined = np.sort(np.concatenate(list(parts)))
        assert np.array_equal(joined, np.arange(g.n_edges))


def test_dense_structure_realises_every_relation():
    for n in range(1, 6):
        els = list(range(1, n + 1))
        # two atoms of every element, all within the cutoff of one another
        species = [z for z in els for _ in range(2)]
        pos = np.array(list(itertools.product(range(3), repeat=3))[: len(species)], dtype=float) * 1.2
        g = build_cutoff_graph(AtomicStructure(species, pos), 10.0)
        assert len(decompose(g, "vertex").relations) == relation_count(els, "vertex")
        assert len(decompose(g, "pair").relations) == relation_count(els, "pair")
        assert len(present_triads(g)) == relation_count(els, "triad")
