"""Cutoff graphs with periodic images, and their element-typed relations.

Edge vectors point from the destination (center) atom toward its neighbor:
``r_vec = pos[src] + offset @ cell - pos[dst]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .structures import AtomicStructure

__all__ = [
    "VertexKey",
    "PairKey",
    "TriadKey",
    "RelationKey",
    "Edge",
    "RelationalGraph",
    "build_cutoff_graph",
    "brute_force_graph",
    "decompose",
    "relation_keys",
    "relation_count",
    "present_triads",
    "VARIANT_KINDS",
]


@dataclass(frozen=True, order=True)
class VertexKey:
    dst: int

    def __str__(self):
        return f"v{self.dst}"


@dataclass(frozen=True, order=True)
class PairKey:
    src: int
    dst: int

    def __str__(self):
        return f"p{self.src}-{self.dst}"


@dataclass(frozen=True, order=True)
class TriadKey:
    dst: int
    sources: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(sorted(self.sources)))

    def __str__(self):
        return f"t{self.dst}:{self.sources[0]}-{self.sources[1]}"


RelationKey = Union[VertexKey, PairKey, TriadKey]


class Edge(NamedTuple):
    src: int
    dst: int
    offset: tuple[int, int, int]
    r_vec: np.ndarray
    r_norm: float


# graph-decomposition kind used by each model variant's radial stage
VARIANT_KINDS = {"hvnet": "vertex", "hpnet": "pair", "htnet": "triad"}


@dataclass(eq=False)
class RelationalGraph:
    """Directed cutoff graph stored as edge arrays.

    ``relations`` maps a relation key to the indices of its edges. The untyped
    graph has a single relation keyed ``None``.
    """

    species: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    offsets: np.ndarray
    shifts: np.ndarray
    r_vec: np.ndarray
    r_cut: float
    relations: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.species)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def r_norm(self) -> np.ndarray:
        return np.sqrt(np.einsum("ij,ij->i", self.r_vec, self.r_vec))

    def edges(self, key=None) -> list[Edge]:
        idx = self.relations[key] if key in self.relations else np.arange(self.n_edges)
        r = self.r_norm
        return [
            Edge(int(self.src[k]), int(self.dst[k]), tuple(int(x) for x in self.offsets[k]), self.r_vec[k], float(r[k]))
            for k in idx
        ]

    def edge_set(self) -> set[tuple[int, int, int, int, int]]:
        return {(int(s), int(d), *map(int, o)) for s, d, o in zip(self.src, self.dst, self.offsets)}

    def with_relations(self, relations: dict) -> RelationalGraph:
        return RelationalGraph(
            self.species, self.src, self.dst, self.offsets, self.shifts, self.r_vec, self.r_cut, relations
        )


# ------------------------------------------------------------ neighbor search


def _image_ranges(cell: np.ndarray, pbc, r_cut: float) -> list[range]:
    # distance between lattice planes k is 1/|b_k|, b = rows of inv(cell).T
    recip = np.linalg.inv(cell).T
    spans = []
    for k in range(3):
        if pbc[k]:
            m = int(np.ceil(r_cut * np.linalg.norm(recip[k])))
            spans.append(range(-m, m + 1))
        else:
            spans.append(range(0, 1))
    return spans


def _cell_list_pairs(centers: np.ndarray, points: np.ndarray, r_cut: float):
    """All (center, point) index pairs with |point - center| <= r_cut.

    Points are binned into cubes of side >= r_cut; each center only looks at
    the 27 bins around its own.
    """
    if len(points) == 0 or len(centers) == 0:
        return np.empty(0, np.intp), np.empty(0, np.intp)
    lo = np.minimum(points.min(axis=0), centers.min(axis=0))
    hi = np.maximum(points.max(axis=0), centers.max(axis=0))
    nbins = np.maximum(((hi - lo) / r_cut).astype(np.int64), 1)
    side = (hi - lo) / nbins
    side[side <= 0] = r_cut

    def bin_of(x):
        b = np.floor((x - lo) / side).astype(np.int64)
        return np.clip(b, 0, nbins - 1)

    pbin = bin_of(points)
    cbin = bin_of(centers)
    flat = (pbin[:, 0] * nbins[1] + pbin[:, 1]) * nbins[2] + pbin[:, 2]
    order = np.argsort(flat, kind="stable")
    occupied, run_starts, run_counts = np.unique(flat[order], return_index=True, return_counts=True)

    ci_all, pj_all = [], []
    for d in itertools.product((-1, 0, 1), repeat=3):
        nb = cbin + np.array(d)
        ok = np.all((nb >= 0) & (nb < nbins), axis=1)
        if not ok.any():
            continue
        cidx = np.nonzero(ok)[0]
        nflat = (nb[ok, 0] * nbins[1] + nb[ok, 1]) * nbins[2] + nb[ok, 2]
        slot = np.minimum(np.searchsorted(occupied, nflat), len(occupied) - 1)
        hit = occupied[slot] == nflat
        counts = np.where(hit, run_counts[slot], 0)
        total = int(counts.sum())
        if total == 0:
            continue
        ci = np.repeat(cidx, counts)
        # position within each bin's run of sorted points
        run_start = np.repeat(run_starts[slot], counts)
        within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        pj = order[run_start + within]
        ci_all.append(ci)
        pj_all.append(pj)
    if not ci_all:
        return np.empty(0, np.intp), np.empty(0, np.intp)
    ci = np.concatenate(ci_all)
    pj = np.concatenate(pj_all)
    diff = points[pj] - centers[ci]
    keep = np.einsum("ij,ij->i", diff, diff) <= r_cut * r_cut
    return ci[keep], pj[keep]


def _finish(structure, src, dst, offsets, r_cut) -> RelationalGraph:
    pos = structure.positions
    cell = structure.cell if structure.cell is not None else np.zeros((3, 3))
    shifts = offsets.astype(np.float64) @ cell
    r_vec = pos[src] + shifts - pos[dst]
    r2 = np.einsum("ij,ij->i", r_vec, r_vec)
    keep = (r2 > 0.0) & (np.sqrt(r2) <= r_cut)
    src, dst, offsets, shifts, r_vec = src[keep], dst[keep], offsets[keep], shifts[keep], r_vec[keep]
    order = np.lexsort((offsets[:, 2], offsets[:, 1], offsets[:, 0], src, dst))
    n_edges = len(order)
    return RelationalGraph(
        species=structure.species.copy(),
        src=src[order].astype(np.intp),
        dst=dst[order].astype(np.intp),
        offsets=offsets[order].astype(np.int64).reshape(n_edges, 3),
        shifts=shifts[order].reshape(n_edges, 3),
        r_vec=r_vec[order].reshape(n_edges, 3),
        r_cut=float(r_cut),
        relations={None: np.arange(n_edges)},
    )


def build_cutoff_graph(structure: AtomicStructure, r_cut: float) -> RelationalGraph:
    """Every directed pair (src -> dst, image offset) with 0 < |r_vec| <= r_cut.

    Periodic images are enumerated in full, so cells smaller than the cutoff
    are handled; no minimum-image assumption is made.
    """
    if not r_cut > 0:
        raise ValueError("r_cut must be positive")
    pos = structure.positions
    n = len(pos)
    if not structure.periodic:
        ci, pj = _cell_list_pairs(pos, pos, r_cut)
        return _finish(structure, pj, ci, np.zeros((len(ci), 3), np.int64), r_cut)

    cell = structure.cell
    pbc = np.array(structure.pbc)
    frac = np.linalg.solve(cell.T, pos.T).T
    wrap = np.where(pbc, np.floor(frac), 0.0).astype(np.int64)
    wrapped = pos - wrap @ cell
    images = np.array(list(itertools.product(*_image_ranges(cell, structure.pbc, r_cut))), dtype=np.int64)
    points = (wrapped[None, :, :] + (images @ cell)[:, None, :]).reshape(-1, 3)
    ci, pk = _cell_list_pairs(wrapped, points, r_cut)
    img, j = np.divmod(pk, n)
    offsets = images[img] - wrap[j] + wrap[ci]
    return _finish(structure, j, ci, offsets, r_cut)


def brute_force_graph(structure: AtomicStructure, r_cut: float) -> RelationalGraph:
    """O(N^2 * images) reference search on unwrapped positions."""
    pos = structure.positions
    n = len(pos)
    if structure.periodic:
        cell = structure.cell
        frac = np.linalg.solve(cell.T, pos.T).T
        extra = np.ceil(np.abs(frac).max(axis=0)).astype(int) + 1
        spans = []
        for k, r in enumerate(_image_ranges(cell, structure.pbc, r_cut)):
            if structure.pbc[k]:
                spans.append(range(r.start - 2 * extra[k], r.stop + 2 * extra[k]))
            else:
                spans.append(r)
        images = np.array(list(itertools.product(*spans)), dtype=np.int64)
    else:
        images = np.zeros((1, 3), np.int64)
    src, dst, off = [], [], []
    for i in range(n):
        for j in range(n):
            src.append(np.full(len(images), j))
            dst.append(np.full(len(images), i))
            off.append(images)
    return _finish(structure, np.concatenate(src), np.concatenate(dst), np.concatenate(off), r_cut)


# ----------------------------------------------------------------- relations


def decompose(graph: RelationalGraph, variant: str) -> RelationalGraph:
    """Partition edges by relation key.

    ``vertex`` groups inbound edges by destination element, ``pair`` by the
    ordered (source, destination) element pair. ``triad`` groups edges by
    destination element like ``vertex``; triad keys are formed from pairs of
    inbound edges when the angular stage runs (see :func:`present_triads`).
    """
    zs = graph.species[graph.src]
    zd = graph.species[graph.dst]
    relations: dict = {}
    if variant in ("vertex", "triad"):
        for b in np.unique(zd):
            relations[VertexKey(int(b))] = np.nonzero(zd == b)[0]
    elif variant == "pair":
        for a, b in sorted(set(zip(zs.tolist(), zd.tolist()))):
            relations[PairKey(a, b)] = np.nonzero((zs == a) & (zd == b))[0]
    else:
        raise ValueError(f"unknown decomposition {variant!r}")
    return graph.with_relations(relations)


def present_triads(graph: RelationalGraph) -> set[TriadKey]:
    """Triads A->B<-C realised by some pair of inbound edges (j == k counted once)."""
    zs = graph.species[graph.src]
    sources: dict[int, set[int]] = {}
    for d, a in zip(graph.dst.tolist(), zs.tolist()):
        sources.setdefault(d, set()).add(a)
    keys = set()
    for d, elems in sources.items():
        b = int(graph.species[d])
        for a, c in itertools.combinations_with_replacement(sorted(elems), 2):
            keys.add(TriadKey(b, (a, c)))
    return keys


def relation_keys(element_set, variant: str) -> list:
    els = sorted(int(z) for z in element_set)
    if variant == "vertex":
        return [VertexKey(b) for b in els]
    if variant == "pair":
        return [PairKey(a, b) for a in els for b in els]
    if variant == "triad":
        return [TriadKey(b, pair) for b in els for pair in itertools.combinations_with_replacement(els, 2)]
    raise ValueError(f"unknown decomposition {variant!r}")


def relation_count(element_set, variant: str) -> int:
    n = len(set(element_set))
    if n == 0:
        raise ValueError("element set is empty")
    return {"vertex": n, "pair": n * n, "triad": n * n * (n + 1) // 2}[variant]
