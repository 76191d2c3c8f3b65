"""HermNet: heterogeneous relational message passing for energies and forces.

Each HermConv layer runs a radial stage (edge messages, one parameter block
per relation, summed into a residual update) and, except for HPNet, an
angular stage built from inner products of channel-mixed vector features.

Parameter blocks per variant:

=======  ==============  ================
variant  radial blocks   angular blocks
=======  ==============  ================
hvnet    VertexKey       VertexKey
hpnet    PairKey         (none)
htnet    VertexKey       TriadKey
=======  ==============  ================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from . import _hooks
from . import autodiff as ad
from .autodiff import Tensor
from .graph import (
    VARIANT_KINDS,
    PairKey,
    RelationalGraph,
    TriadKey,
    VertexKey,
    build_cutoff_graph,
    decompose,
    relation_keys,
)
from .layers import N_RBF, cutoff_t, dense, glorot, init_mlp, mlp, radial_basis_t
from .structures import MAX_Z, AtomicStructure

__all__ = [
    "VocabularyError",
    "ModelConfig",
    "NodeState",
    "HermNet",
    "init_params",
    "param_names",
    "collate",
    "radial_message",
    "radial_update",
    "angular_invariants",
    "angular_message_update",
    "hermconv_layer",
    "rmconv_layer",
    "forward",
    "predict_energy",
    "predict_forces",
    "predict",
]

VARIANTS = ("hvnet", "hpnet", "htnet")
NORM_EPS = 1e-2


class VocabularyError(ValueError):
    """A structure or relation uses an element the model has no parameters for."""


@dataclass
class ModelConfig:
    variant: str = "hvnet"
    hidden: int = 128
    layers: int = 3
    r_cut: float = 5.0
    element_set: tuple[int, ...] = ()
    n_rbf: int = N_RBF

    def __post_init__(self):
        self.variant = self.variant.lower()
        self.element_set = tuple(sorted({int(z) for z in self.element_set}))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.hidden < 1 or self.layers < 1 or not self.r_cut > 0 or self.n_rbf < 1:
            raise ValueError("hidden, layers, n_rbf must be >= 1 and r_cut > 0")
        if not self.element_set:
            raise ValueError("element_set must not be empty")

    @property
    def radial_kind(self) -> str:
        return "pair" if self.variant == "hpnet" else "vertex"

    @property
    def angular_kind(self) -> str | None:
        return {"hvnet": "vertex", "hpnet": None, "htnet": "triad"}[self.variant]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "hidden": self.hidden,
            "layers": self.layers,
            "r_cut": self.r_cut,
            "element_set": list(self.element_set),
            "n_rbf": self.n_rbf,
        }


@dataclass
class NodeState:
    """Scalar features ``s`` (N, F) and vector features ``v`` (N, 3, F).

    HTNet additionally tracks ``parts``: the vector features split by the
    element of the neighbor they were received from (``v`` is their sum).
    """

    s: Tensor
    v: Tensor
    parts: dict[int, Tensor] | None = None


# ---------------------------------------------------------------- parameters


def _radial_prefix(layer: int, key) -> str:
    return f"layer{layer}.radial.{key}"


def _angular_prefix(layer: int, key) -> str:
    return f"layer{layer}.angular.{key}"


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    F = config.hidden
    raw: dict[str, np.ndarray] = {
        "embedding": rng.normal(0.0, 1.0, size=(MAX_Z, F)),
        "reference_energy": np.zeros(MAX_Z),
    }
    for layer in range(config.layers):
        for key in relation_keys(config.element_set, config.radial_kind):
            p = _radial_prefix(layer, key)
            raw.update(init_mlp(rng, f"{p}.phi", (F, F, 3 * F)))
            raw[f"{p}.filter.weight"] = glorot(rng, config.n_rbf, 3 * F)
        if config.angular_kind is not None:
            for key in relation_keys(config.element_set, config.angular_kind):
                p = _angular_prefix(layer, key)
                raw[f"{p}.U"] = glorot(rng, F, F)
                raw[f"{p}.V"] = glorot(rng, F, F)
                raw.update(init_mlp(rng, f"{p}.mlp", (3 * F, F, 3 * F)))
    raw.update(init_mlp(rng, "readout", (F, F, 1), zero_last=True))
    return {k: Tensor(v, requires_grad=True) for k, v in raw.items()}


def param_names(params: dict) -> list[str]:
    return sorted(params)


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    """Several structures glued into one block-diagonal graph."""

    graph: RelationalGraph
    positions: np.ndarray
    node_frame: np.ndarray
    n_frames: int
    n_atoms: np.ndarray
    node_offsets: np.ndarray = field(default=None)


def collate(structures: Sequence[AtomicStructure], r_cut: float, graphs=None) -> Batch:
    graphs = graphs if graphs is not None else [build_cutoff_graph(st, r_cut) for st in structures]
    sizes = np.array([len(st) for st in structures], dtype=np.intp)
    offs = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
    if len(structures) == 1:
        g = graphs[0]
    else:
        g = RelationalGraph(
            species=np.concatenate([gr.species for gr in graphs]),
            src=np.concatenate([gr.src + o for gr, o in zip(graphs, offs)]),
            dst=np.concatenate([gr.dst + o for gr, o in zip(graphs, offs)]),
            offsets=np.concatenate([gr.offsets for gr in graphs]),
            shifts=np.concatenate([gr.shifts for gr in graphs]),
            r_vec=np.concatenate([gr.r_vec for gr in graphs]),
            r_cut=r_cut,
        )
        g.relations = {None: np.arange(g.n_edges)}
    return Batch(
        graph=g,
        positions=np.concatenate([st.positions for st in structures]),
        node_frame=np.repeat(np.arange(len(structures)), sizes),
        n_frames=len(structures),
        n_atoms=sizes,
        node_offsets=offs,
    )


# -------------------------------------------------------------------- layers


def _edge_geometry(graph: RelationalGraph, positions: Tensor):
    r_vec = ad.add(ad.sub(ad.gather(positions, graph.src), ad.gather(positions, graph.dst)), graph.shifts)
    if _hooks.get("rvec_sign_flip"):
        # edge vectors built with the opposite convention when src > dst
        r_vec = ad.einsum("ei,e->ei", r_vec, np.where(graph.src > graph.dst, -1.0, 1.0))
    return r_vec, ad.sqrt(ad.einsum("ei,ei->e", r_vec, r_vec))


def _edge_messages(state: NodeState, graph, idx, r_vec, r, params, prefix, r_cut, n_rbf):
    """Scalar and vector messages carried by the edges ``idx`` of one relation."""
    src = graph.src[idx]
    F = state.s.shape[1]
    phi = mlp(ad.gather(state.s, src), params, f"{prefix}.phi")
    r_e = ad.gather(r, idx)
    filt = ad.matmul(radial_basis_t(r_e, r_cut, n_rbf), params[f"{prefix}.filter.weight"])
    filt = ad.einsum("ef,e->ef", filt, cutoff_t(r_e, r_cut))
    a, b, c = ad.split(ad.mul(phi, filt), [F, F, F])
    unit = ad.einsum("ei,e->ei", ad.gather(r_vec, idx), ad.div(1.0, r_e))
    vec = ad.add(ad.scale_vector(ad.gather(state.v, src), b), ad.outer(unit, c))
    return a, vec


def radial_message(state: NodeState, graph: RelationalGraph, key, params: dict, layer: int, geometry, block=None):
    """Sum of one relation's edge messages onto destination nodes.

    Returns ``(ds, dv, dparts)`` where ``dparts`` splits ``dv`` by the source
    element (only filled when ``state.parts`` is tracked).
    """
    n = graph.n_nodes
    idx = graph.relations[key]
    r_vec, r = geometry
    prefix = _radial_prefix(layer, key if block is None else block)
    a, vec = _edge_messages(state, graph, idx, r_vec, r, params, prefix, graph.r_cut, _n_rbf(params, prefix))
    dst = graph.dst[idx]
    ds = ad.scatter_sum(a, dst, n)
    dv = ad.scatter_sum(vec, dst, n)
    dparts = None
    if state.parts is not None:
        dparts = {}
        zsrc = graph.species[graph.src[idx]]
        for z in np.unique(zsrc):
            sel = np.nonzero(zsrc == z)[0]
            if len(sel) == len(idx):
                dparts[int(z)] = dv
            else:
                dparts[int(z)] = ad.scatter_sum(ad.gather(vec, sel), dst[sel], n)
    return ds, dv, dparts


def _n_rbf(params, prefix) -> int:
    return params[f"{prefix}.filter.weight"].shape[0]


def _sum(items):
    return reduce(ad.add, items)


def radial_update(state: NodeState, ds: Tensor, dv: Tensor, dparts=None) -> NodeState:
    """Residual update ``s + ds``, ``v + dv``."""
    parts = None
    if state.parts is not None:
        parts = dict(state.parts)
        for z, d in (dparts or {}).items():
            parts[z] = ad.add(parts[z], d) if z in parts else d
    v = ad.add(state.v, dv) if parts is None else _sum([parts[z] for z in sorted(parts)])
    return NodeState(ad.add(state.s, ds), v, parts)


def angular_invariants(u: Tensor, w: Tensor, U: Tensor, V: Tensor):
    """Channel-mix two vector blocks and return ``(Uu, Vw, <Uu, Vw>)``."""
    n, _, F = u.shape
    Uu = ad.reshape(ad.matmul(ad.reshape(u, (n * 3, F)), U), (n, 3, F))
    Vw = ad.reshape(ad.matmul(ad.reshape(w, (n * 3, F)), V), (n, 3, F))
    return Uu, Vw, ad.inner(Uu, Vw)


def _angular_block(s_nodes: Tensor, vecs: list[Tensor], params, prefix):
    """Gated angular update for one block; ``vecs`` are the vector pieces it sees."""
    F = s_nodes.shape[1]
    U, V = params[f"{prefix}.U"], params[f"{prefix}.V"]
    w = _sum(vecs)
    Uw, Vw, inv = angular_invariants(w, w, U, V)
    h = ad.concat([s_nodes, inv, ad.norm(Vw, NORM_EPS)], axis=-1)
    a_ss, a_sv, a_vv = ad.split(mlp(h, params, f"{prefix}.mlp"), [F, F, F])
    ds = ad.add(a_ss, ad.mul(a_sv, inv))
    if len(vecs) == 1:
        dvs = [ad.scale_vector(Uw, a_vv)]
    else:
        dvs = [ad.scale_vector(angular_invariants(x, x, U, V)[0], a_vv) for x in vecs]
    return ds, dvs


def angular_message_update(state: NodeState, graph: RelationalGraph, params: dict, layer: int, kind: str, elements):
    """Angular stage: inner products of vector features carry bond angles.

    ``kind == "vertex"``: one block per destination element acting on the full
    vector feature. ``kind == "triad"``: one block per (B, {A, C}) acting on
    the vector feature received from A and C neighbors only; unordered source
    pairs are visited once, A == C included.
    """
    n = graph.n_nodes
    F = state.s.shape[1]
    species = graph.species
    ds_all, dv_all = [], []
    dparts: dict[int, list[Tensor]] = {}
    for b in np.unique(species):
        nodes = np.nonzero(species == b)[0]
        whole = len(nodes) == n
        pick = (lambda t: t) if whole else (lambda t: ad.gather(t, nodes))
        put = (lambda t: t) if whole else (lambda t: ad.scatter_sum(t, nodes, n))
        s_nodes = pick(state.s)
        if kind == "vertex":
            key = VertexKey(int(b))
            _require(params, _angular_prefix(layer, key), key)
            ds, (dv,) = _angular_block(s_nodes, [pick(state.v)], params, _angular_prefix(layer, key))
            ds_all.append(put(ds))
            dv_all.append(put(dv))
            continue
        zero = None
        for key in relation_keys(elements, "triad"):
            if key.dst != b:
                continue
            _require(params, _angular_prefix(layer, key), key)
            srcs = sorted(set(key.sources))
            vecs = []
            for z in srcs:
                if z in state.parts:
                    vecs.append(pick(state.parts[z]))
                else:
                    zero = zero if zero is not None else Tensor(np.zeros((len(nodes), 3, F)))
                    vecs.append(zero)
            ds, dvs = _angular_block(s_nodes, vecs, params, _angular_prefix(layer, key))
            ds_all.append(put(ds))
            for z, dv in zip(srcs, dvs):
                dparts.setdefault(z, []).append(put(dv))
    s = ad.add(state.s, _sum(ds_all))
    if kind == "vertex":
        return NodeState(s, ad.add(state.v, _sum(dv_all)), None)
    parts = dict(state.parts)
    for z, items in dparts.items():
        d = _sum(items)
        parts[z] = ad.add(parts[z], d) if z in parts else d
    v = _sum([parts[z] for z in sorted(parts)])
    return NodeState(s, v, parts)


def _require(params, prefix, key):
    if f"{prefix}.U" not in params and f"{prefix}.filter.weight" not in params:
        raise VocabularyError(f"no parameter block for relation {key} ({prefix})")


def hermconv_layer(state: NodeState, graph: RelationalGraph, params: dict, config: ModelConfig, layer: int, geometry):
    """One heterogeneous relational layer: per-relation sub-networks, summed."""
    ds_all, dv_all, dparts_all = [], [], {}
    for key in sorted(graph.relations, key=str):
        prefix = _radial_prefix(layer, key)
        if f"{prefix}.filter.weight" not in params:
            raise VocabularyError(f"no parameter block for relation {key}; element unseen at training time")
        ds, dv, dparts = radial_message(state, graph, key, params, layer, geometry)
        ds_all.append(ds)
        dv_all.append(dv)
        for z, d in (dparts or {}).items():
            dparts_all.setdefault(z, []).append(d)
    if ds_all:
        state = radial_update(
            state, _sum(ds_all), _sum(dv_all), {z: _sum(v) for z, v in dparts_all.items()} if state.parts is not None else None
        )
    if config.angular_kind is not None:
        state = angular_message_update(state, graph, params, layer, config.angular_kind, config.element_set)
    return state


def rmconv_layer(state: NodeState, graph: RelationalGraph, params: dict, layer: int, block, geometry, angular=True):
    """A single untyped RMConv sub-network over the whole graph using ``block``'s weights."""
    untyped = graph.with_relations({block: np.arange(graph.n_edges)})
    if graph.n_edges:
        ds, dv, _ = radial_message(state, untyped, block, params, layer, geometry)
        state = radial_update(state, ds, dv)
    if angular:
        ds, (dv,) = _angular_block(state.s, [state.v], params, _angular_prefix(layer, block))
        state = NodeState(ad.add(state.s, ds), ad.add(state.v, dv))
    return state


# ------------------------------------------------------------------- readout


def check_vocabulary(species, config: ModelConfig):
    unknown = sorted(set(np.asarray(species).tolist()) - set(config.element_set))
    if unknown:
        raise VocabularyError(f"elements {unknown} are not in the model vocabulary {list(config.element_set)}")


def initial_state(params: dict, species: np.ndarray, config: ModelConfig) -> NodeState:
    s = ad.gather(params["embedding"], species - 1)
    v = Tensor(np.zeros((len(species), 3, config.hidden)))
    return NodeState(s, v, {} if config.variant == "htnet" else None)


def forward(params: dict, config: ModelConfig, batch: Batch, positions: Tensor):
    """Per-frame energies (B,) and per-atom energies (N,)."""
    check_vocabulary(batch.graph.species, config)
    graph = decompose(batch.graph, {"vertex": "vertex", "pair": "pair"}[config.radial_kind])
    geometry = _edge_geometry(graph, positions)
    state = initial_state(params, graph.species, config)
    for layer in range(config.layers):
        state = hermconv_layer(state, graph, params, config, layer, geometry)
    h = ad.silu(dense(state.s, params["readout1.weight"], params["readout1.bias"]))
    atom_e = ad.reshape(dense(h, params["readout2.weight"], params["readout2.bias"]), (-1,))
    atom_e = ad.add(atom_e, ad.gather(params["reference_energy"], graph.species - 1))
    energies = ad.scatter_sum(atom_e, batch.node_frame, batch.n_frames)
    return energies, atom_e


def predict(structure: AtomicStructure, params: dict, config: ModelConfig, forces: bool = True):
    """Energy (eV), per-atom energies and, optionally, forces (eV/Å)."""
    batch = collate([structure], config.r_cut)
    pos = Tensor(batch.positions, requires_grad=forces)
    if forces:
        energies, atom_e = forward(params, config, batch, pos)
        (g,) = ad.grad(ad.tsum(energies), [pos])
        return float(energies.data[0]), atom_e.data.copy(), -g.data
    with ad.no_grad():
        energies, atom_e = forward(params, config, batch, pos)
    return float(energies.data[0]), atom_e.data.copy(), None


def predict_energy(structure: AtomicStructure, params: dict, config: ModelConfig):
    e, atom_e, _ = predict(structure, params, config, forces=False)
    return e, atom_e


def predict_forces(structure: AtomicStructure, params: dict, config: ModelConfig) -> np.ndarray:
    return predict(structure, params, config, forces=True)[2]


class HermNet:
    """Config plus parameters, with convenience prediction methods."""

    def __init__(self, config: ModelConfig, params: dict | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self.meta: dict = {}

    def energy(self, structure: AtomicStructure) -> float:
        return predict_energy(structure, self.params, self.config)[0]

    def forces(self, structure: AtomicStructure) -> np.ndarray:
        return predict_forces(structure, self.params, self.config)

    def predict(self, structure: AtomicStructure):
        e, _, f = predict(structure, self.params, self.config)
        return e, f

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))
