"""Atomic structures, labeled frames and datasets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SYMBOLS",
    "atomic_number",
    "symbol",
    "AtomicStructure",
    "LabeledFrame",
    "Dataset",
    "split_dataset",
]

# fmt: off
SYMBOLS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)
# fmt: on
_NUMBERS = {s: i + 1 for i, s in enumerate(SYMBOLS)}
MAX_Z = len(SYMBOLS)


def atomic_number(sym: str) -> int:
    """Atomic number for a chemical symbol (case-sensitive, e.g. ``"Cu"``)."""
    try:
        return _NUMBERS[sym]
    except KeyError:
        raise KeyError(f"unknown chemical symbol {sym!r}") from None


def symbol(z: int) -> str:
    if not 1 <= z <= MAX_Z:
        raise KeyError(f"atomic number {z} out of range 1..{MAX_Z}")
    return SYMBOLS[z - 1]


@dataclass(eq=False)
class AtomicStructure:
    """Species, Cartesian positions (Å) and an optional periodic cell.

    Cell rows are the lattice vectors. ``pbc`` flags which of them are
    periodic; any periodic direction requires a non-singular cell.
    """

    species: np.ndarray
    positions: np.ndarray
    cell: np.ndarray | None = None
    pbc: tuple[bool, bool, bool] = (False, False, False)

    def __post_init__(self):
        self.species = np.asarray(self.species, dtype=np.int64).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.cell is not None:
            self.cell = np.asarray(self.cell, dtype=np.float64).reshape(3, 3)
        self.pbc = tuple(bool(p) for p in self.pbc)
        if len(self.pbc) != 3:
            raise ValueError("pbc needs three flags")
        n = len(self.species)
        if n < 1:
            raise ValueError("a structure needs at least one atom")
        if len(self.positions) != n:
            raise ValueError(f"{n} species but {len(self.positions)} positions")
        if np.any(self.species < 1) or np.any(self.species > MAX_Z):
            raise ValueError("atomic numbers must lie in 1..118")
        if any(self.pbc):
            if self.cell is None:
                raise ValueError("periodic structure without a cell")
            if abs(np.linalg.det(self.cell)) <= 1e-10:
                raise ValueError("periodic cell is singular")

    def __len__(self):
        return len(self.species)

    @property
    def periodic(self) -> bool:
        return any(self.pbc)

    @property
    def symbols(self) -> list[str]:
        return [symbol(int(z)) for z in self.species]

    def copy(self) -> AtomicStructure:
        return AtomicStructure(
            self.species.copy(),
            self.positions.copy(),
            None if self.cell is None else self.cell.copy(),
            self.pbc,
        )

    def __eq__(self, other):
        if not isinstance(other, AtomicStructure):
            return NotImplemented
        if (self.cell is None) != (other.cell is None):
            return False
        return (
            self.pbc == other.pbc
            and np.array_equal(self.species, other.species)
            and np.array_equal(self.positions, other.positions)
            and (self.cell is None or np.array_equal(self.cell, other.cell))
        )


@dataclass(eq=False)
class LabeledFrame:
    """A structure with optional energy (eV), forces (eV/Å) and scalar targets.

    Frames without an energy are unlabeled: they can be predicted on but are
    excluded from losses and metrics.
    """

    structure: AtomicStructure
    energy: float | None = None
    forces: np.ndarray | None = None
    targets: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.energy is not None:
            self.energy = float(self.energy)
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64).reshape(-1, 3)
            if len(self.forces) != len(self.structure):
                raise ValueError(f"{len(self.forces)} force rows for {len(self.structure)} atoms")

    @property
    def labeled(self) -> bool:
        return self.energy is not None

    def __len__(self):
        return len(self.structure)

    def __eq__(self, other):
        if not isinstance(other, LabeledFrame):
            return NotImplemented
        if (self.forces is None) != (other.forces is None):
            return False
        return (
            self.structure == other.structure
            and self.energy == other.energy
            and (self.forces is None or np.array_equal(self.forces, other.forces))
            and self.targets == other.targets
        )


class Dataset:
    """Ordered frames plus the sorted set of atomic numbers they contain."""

    def __init__(self, frames=()):
        self.frames: list[LabeledFrame] = list(frames)

    @property
    def element_set(self) -> list[int]:
        if not self.frames:
            return []
        return sorted(set(np.concatenate([f.structure.species for f in self.frames]).tolist()))

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Dataset(self.frames[idx])
        if isinstance(idx, (list, np.ndarray)):
            return Dataset([self.frames[int(i)] for i in idx])
        return self.frames[idx]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self.frames, other.frames))

    def __repr__(self):
        return f"Dataset({len(self)} frames, elements={self.element_set})"


def split_dataset(dataset: Dataset, n_train: int, n_val: int, seed: int = 0):
    """Shuffle under ``seed`` and cut into (train, val, test); test is the remainder."""
    n = len(dataset)
    if n_train < 0 or n_val < 0 or n_train + n_val > n:
        raise ValueError(f"cannot take {n_train} + {n_val} frames from a dataset of {n}")
    order = np.random.default_rng(seed).permutation(n)
    return (
        dataset[order[:n_train]],
        dataset[order[n_train : n_train + n_val]],
        dataset[order[n_train + n_val :]],
    )
