"""Synthetic structures and pair-potential labels for tests and demos."""

from __future__ import annotations

import itertools

import numpy as np

from .graph import build_cutoff_graph
from .structures import AtomicStructure, Dataset, LabeledFrame

# (sigma Å, epsilon eV) per element; Lorentz-Berthelot mixing between them
DEFAULT_LJ = {18: (2.2, 0.12), 36: (2.5, 0.16)}


def lennard_jones(structure: AtomicStructure, lj: dict = DEFAULT_LJ, r_cut: float | None = None):
    """Energy (eV) and forces (eV/Å) of a Lennard-Jones pair potential.

    Without ``r_cut`` every pair interacts (open systems only).
    """
    if r_cut is None:
        if structure.periodic:
            raise ValueError("periodic systems need an explicit cutoff")
        n = len(structure)
        src, dst = np.nonzero(~np.eye(n, dtype=bool))
        r_vec = structure.positions[src] - structure.positions[dst]
    else:
        g = build_cutoff_graph(structure, r_cut)
        src, dst, r_vec = g.src, g.dst, g.r_vec
    sig = np.array([lj[int(z)][0] for z in structure.species])
    eps = np.array([lj[int(z)][1] for z in structure.species])
    s = 0.5 * (sig[src] + sig[dst])
    e = np.sqrt(eps[src] * eps[dst])
    r = np.linalg.norm(r_vec, axis=1)
    sr6 = (s / r) ** 6
    # each unordered pair appears twice among directed edges
    energy = 0.5 * np.sum(4 * e * (sr6 * sr6 - sr6))
    dEdr = 4 * e * (-12 * sr6 * sr6 + 6 * sr6) / r
    # r_vec = x_src - x_dst; force on dst from one directed edge, doubled by symmetry
    contrib = (0.5 * dEdr / r)[:, None] * r_vec
    forces = np.zeros_like(structure.positions)
    np.add.at(forces, dst, contrib)
    np.add.at(forces, src, -contrib)
    return float(energy), forces


def random_cluster(rng, n: int, species, min_dist: float = 1.0, box: float | None = None) -> AtomicStructure:
    """``n`` atoms placed uniformly in a cube with a minimum separation."""
    box = box or max(2.0, 1.3 * min_dist * n ** (1 / 3))
    pos = []
    while len(pos) < n:
        p = rng.uniform(0.0, box, 3)
        if all(np.linalg.norm(p - q) >= min_dist for q in pos):
            pos.append(p)
    return AtomicStructure(rng.choice(species, n), np.array(pos))


def random_crystal(rng, n: int, species, min_dist: float = 1.0, triclinic: bool = True) -> AtomicStructure:
    """A random periodic cell holding ``n`` atoms, pairwise separated (with images) by ``min_dist``."""
    while True:
        a = rng.uniform(2.5, 4.5)
        cell = np.eye(3) * a * max(1.0, n ** (1 / 3) * 0.9)
        if triclinic:
            cell = cell + rng.uniform(-0.6, 0.6, (3, 3))
        if abs(np.linalg.det(cell)) < 5.0:
            continue
        frac = []
        tries = 0
        while len(frac) < n and tries < 2000:
            tries += 1
            f = rng.uniform(0, 1, 3)
            ok = True
            for g in frac:
                d = f - g
                for shift in itertools.product((-1, 0, 1), repeat=3):
                    if np.linalg.norm((d + shift) @ cell) < min_dist:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                frac.append(f)
        if len(frac) == n:
            return AtomicStructure(rng.choice(species, n), np.array(frac) @ cell, cell, (True, True, True))


def supercell(structure: AtomicStructure, reps=(2, 1, 1)) -> AtomicStructure:
    """Replicate a periodic structure ``reps[k]`` times along cell vector k."""
    if structure.cell is None:
        raise ValueError("supercell needs a cell")
    shifts = np.array(list(itertools.product(*(range(r) for r in reps))), dtype=float) @ structure.cell
    pos = (structure.positions[None, :, :] + shifts[:, None, :]).reshape(-1, 3)
    species = np.tile(structure.species, len(shifts))
    return AtomicStructure(species, pos, structure.cell * np.asarray(reps, dtype=float)[:, None], structure.pbc)


def lj_cluster_dataset(n_frames: int = 50, seed: int = 0, lj: dict = DEFAULT_LJ, jitter: float = 0.08) -> Dataset:
    """MD-like snapshots of one small two-element cluster, labeled with LJ energies and forces."""
    rng = np.random.default_rng(seed)
    zs = sorted(lj)
    # a distorted octahedron near the pair-potential minimum
    base = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float
    ) * 1.9
    species = np.array([zs[0], zs[1], zs[0], zs[1], zs[0], zs[1]])
    frames = []
    for _ in range(n_frames):
        pos = base + rng.normal(0.0, jitter, base.shape)
        st = AtomicStructure(species, pos)
        e, f = lennard_jones(st, lj)
        frames.append(LabeledFrame(st, e, f))
    return Dataset(frames)
