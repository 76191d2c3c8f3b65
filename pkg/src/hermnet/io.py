"""Extended-XYZ and DeePMD raw-text readers and writers.

Floats are written with 17 significant digits, so parse(write(x)) == x
bit for bit. Units are eV, Å and eV/Å throughout; nothing is converted.
"""

from __future__ import annotations

import io
import os
import shlex
from pathlib import Path
from typing import TextIO

import numpy as np

from .structures import AtomicStructure, Dataset, LabeledFrame, atomic_number, symbol

__all__ = [
    "ParseError",
    "parse_extxyz",
    "read_extxyz",
    "write_extxyz",
    "parse_deepmd_raw",
    "write_deepmd_raw",
    "load_dataset",
]

_FMT = ".17g"
_SPECIES_NAMES = ("species", "element", "symbols")
_POS_NAMES = ("pos", "positions")
_FORCE_NAMES = ("forces", "force")


class ParseError(ValueError):
    """Malformed input. ``source`` and ``line`` (1-based) locate the problem."""

    def __init__(self, message: str, source: str | None = None, line: int | None = None):
        self.message = message
        self.source = source
        self.line = line
        where = source or "<input>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


def _f(x: float) -> str:
    return format(float(x), _FMT)


# ------------------------------------------------------------ extended XYZ


def _parse_bool(tok: str) -> bool:
    t = tok.strip().upper()
    if t in ("T", "TRUE", "1"):
        return True
    if t in ("F", "FALSE", "0"):
        return False
    raise ValueError(tok)


def _parse_properties(desc: str, err):
    parts = desc.split(":")
    if len(parts) % 3 != 0:
        err(f"Properties descriptor {desc!r} is not a list of name:type:count triples")
    cols = []
    for k in range(0, len(parts), 3):
        name, kind, count = parts[k], parts[k + 1].upper(), parts[k + 2]
        if kind not in ("S", "R", "I", "L") or not count.isdigit() or int(count) < 1:
            err(f"bad Properties entry {':'.join(parts[k:k + 3])!r}")
        cols.append((name.lower(), kind, int(count)))
    return cols


def _parse_comment(line: str, err) -> dict[str, str]:
    if "=" not in line:
        return {}
    try:
        tokens = shlex.split(line, posix=True)
    except ValueError as exc:
        err(f"cannot tokenize comment line ({exc})")
    info: dict[str, str] = {}
    for tok in tokens:
        if "=" not in tok:
            continue
        key, _, value = tok.partition("=")
        info[key] = value
    return info


def _frame_from_lines(natoms: int, comment: str, atom_lines, source: str, first_line: int) -> LabeledFrame:
    def err(msg, line=first_line + 1):
        raise ParseError(msg, source, line)

    info = _parse_comment(comment, err)
    lower = {k.lower(): (k, v) for k, v in info.items()}

    cell = None
    if "lattice" in lower:
        try:
            vals = [float(x) for x in lower["lattice"][1].split()]
        except ValueError:
            err("Lattice entries must be floats")
        if len(vals) != 9 or not np.all(np.isfinite(vals)):
            err(f"Lattice needs 9 finite floats, got {lower['lattice'][1]!r}")
        cell = np.array(vals).reshape(3, 3)

    if "pbc" in lower:
        try:
            pbc = tuple(_parse_bool(t) for t in lower["pbc"][1].split())
        except ValueError:
            err(f"bad pbc value {lower['pbc'][1]!r}")
        if len(pbc) != 3:
            err("pbc needs three flags")
    else:
        pbc = (cell is not None,) * 3

    energy = None
    if "energy" in lower:
        try:
            energy = float(lower["energy"][1])
        except ValueError:
            err(f"energy is not a float: {lower['energy'][1]!r}")
        if not np.isfinite(energy):
            err("energy is not finite")

    if "properties" in lower:
        cols = _parse_properties(lower["properties"][1], err)
    else:
        cols = [("species", "S", 1), ("pos", "R", 3)]

    names = [c[0] for c in cols]
    sp_col = next((n for n in _SPECIES_NAMES if n in names), None)
    pos_col = next((n for n in _POS_NAMES if n in names), None)
    f_col = next((n for n in _FORCE_NAMES if n in names), None)
    if sp_col is None or pos_col is None:
        err("Properties must include species and pos columns")
    offsets, start = {}, 0
    for name, kind, count in cols:
        offsets[name] = (start, kind, count)
        start += count
    ncols = start
    if offsets[pos_col][1:] != ("R", 3):
        err("pos column must be R:3")
    if f_col is not None and offsets[f_col][1:] != ("R", 3):
        err("forces column must be R:3")

    species = np.empty(natoms, dtype=np.int64)
    pos = np.empty((natoms, 3))
    forces = np.empty((natoms, 3)) if f_col is not None else None
    for k, raw in enumerate(atom_lines):
        lineno = first_line + 2 + k
        fields = raw.split()
        if len(fields) != ncols:
            raise ParseError(f"expected {ncols} columns, got {len(fields)}", source, lineno)
        sym = fields[offsets[sp_col][0]]
        try:
            species[k] = atomic_number(sym)
        except KeyError:
            raise ParseError(f"unknown chemical symbol {sym!r}", source, lineno) from None
        try:
            for name, (o, kind, count) in offsets.items():
                if kind == "R":
                    [float(x) for x in fields[o : o + count]]
                elif kind == "I":
                    [int(x) for x in fields[o : o + count]]
            p0 = offsets[pos_col][0]
            pos[k] = [float(x) for x in fields[p0 : p0 + 3]]
            if forces is not None:
                f0 = offsets[f_col][0]
                forces[k] = [float(x) for x in fields[f0 : f0 + 3]]
        except ValueError:
            raise ParseError("non-numeric value in numeric column", source, lineno) from None
        if not np.all(np.isfinite(pos[k])):
            raise ParseError("non-finite coordinate", source, lineno)
        if forces is not None and not np.all(np.isfinite(forces[k])):
            raise ParseError("non-finite force", source, lineno)

    targets = {}
    reserved = {"lattice", "pbc", "energy", "properties"}
    for key, value in info.items():
        if key.lower() in reserved:
            continue
        try:
            targets[key] = float(value)
        except ValueError:
            continue
    try:
        structure = AtomicStructure(species, pos, cell, pbc)
    except ValueError as exc:
        err(str(exc))
    return LabeledFrame(structure, energy, forces, targets)


def parse_extxyz(stream: TextIO | str, source: str = "<extxyz>") -> Dataset:
    """Parse concatenated extended-XYZ frames from a text stream or string."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = stream.read().splitlines()
    frames = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].strip()
        try:
            natoms = int(head)
        except ValueError:
            raise ParseError(f"expected an atom count, got {head[:40]!r}", source, i + 1) from None
        if natoms < 1:
            raise ParseError(f"atom count must be positive, got {natoms}", source, i + 1)
        if i + 2 + natoms > len(lines):
            raise ParseError(
                f"frame declares {natoms} atoms but only {max(len(lines) - i - 2, 0)} lines follow",
                source,
                len(lines),
            )
        frames.append(_frame_from_lines(natoms, lines[i + 1], lines[i + 2 : i + 2 + natoms], source, i + 1))
        i += 2 + natoms
    return Dataset(frames)


def read_extxyz(path: str | os.PathLike) -> Dataset:
    with open(path) as fh:
        return parse_extxyz(fh, str(path))


def _check_token(name: str):
    if not name or any(c.isspace() or c in "=\"'" for c in name):
        raise ValueError(f"target name {name!r} cannot be written to extended XYZ")


def write_extxyz(dataset: Dataset) -> str:
    out = []
    for frame in dataset:
        st = frame.structure
        props = "species:S:1:pos:R:3"
        if frame.forces is not None:
            props += ":forces:R:3"
        info = []
        if st.cell is not None:
            info.append('Lattice="' + " ".join(_f(x) for x in st.cell.reshape(-1)) + '"')
        info.append(f"Properties={props}")
        if frame.energy is not None:
            info.append(f"energy={_f(frame.energy)}")
        if st.cell is not None or st.periodic:
            info.append('pbc="' + " ".join("T" if p else "F" for p in st.pbc) + '"')
        for key, value in frame.targets.items():
            _check_token(key)
            info.append(f"{key}={_f(value)}")
        out.append(str(len(st)))
        out.append(" ".join(info))
        for k in range(len(st)):
            cols = [symbol(int(st.species[k]))] + [_f(x) for x in st.positions[k]]
            if frame.forces is not None:
                cols += [_f(x) for x in frame.forces[k]]
            out.append(" ".join(cols))
    return "\n".join(out) + ("\n" if out else "")


# -------------------------------------------------------------- DeePMD raw


def _read_rows(path: Path, width: int | None, kind=float):
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                row = [kind(x) for x in raw.split()]
            except ValueError:
                raise ParseError("non-numeric entry", str(path), lineno) from None
            if width is not None and len(row) != width:
                raise ParseError(f"expected {width} columns, got {len(row)}", str(path), lineno)
            if kind is float and not np.all(np.isfinite(row)):
                raise ParseError("non-finite entry", str(path), lineno)
            rows.append(row)
    arr = np.array(rows, dtype=np.float64 if kind is float else np.int64)
    return arr.reshape(len(rows), width if width is not None else -1) if rows else arr.reshape(0, width or 0)


def parse_deepmd_raw(directory: str | os.PathLike) -> Dataset:
    """Read a DeePMD raw-text system directory (one frame per line)."""
    d = Path(directory)
    type_path = d / "type.raw"
    if not type_path.is_file():
        raise ParseError("missing type.raw", str(d))
    types = []
    with open(type_path) as fh:
        for lineno, raw in enumerate(fh, 1):
            try:
                types += [int(x) for x in raw.split()]
            except ValueError:
                raise ParseError("type indices must be integers", str(type_path), lineno) from None
    if not types or min(types) < 0:
        raise ParseError("type.raw must list one non-negative index per atom", str(type_path), 1)
    types = np.array(types, dtype=np.int64)
    natoms = len(types)

    map_path = d / "type_map.raw"
    if map_path.is_file():
        names = []
        with open(map_path) as fh:
            for lineno, raw in enumerate(fh, 1):
                if not raw.strip():
                    continue
                sym = raw.strip()
                try:
                    names.append(atomic_number(sym))
                except KeyError:
                    raise ParseError(f"unknown chemical symbol {sym!r}", str(map_path), lineno) from None
        if types.max() >= len(names):
            raise ParseError(f"type index {types.max()} has no entry in type_map.raw", str(type_path), 1)
        species = np.array(names, dtype=np.int64)[types]
    else:
        species = types + 1
        if species.max() > 118:
            raise ParseError("type index too large to stand for an atomic number", str(type_path), 1)

    for required in ("box.raw", "coord.raw"):
        if not (d / required).is_file():
            raise ParseError(f"missing {required}", str(d))
    box = _read_rows(d / "box.raw", 9)
    coord = _read_rows(d / "coord.raw", 3 * natoms)
    nframes = len(coord)
    if len(box) != nframes:
        raise ParseError(f"{len(box)} frames but coord.raw has {nframes}", str(d / "box.raw"), min(len(box), nframes) + 1)
    energy = forces = None
    if (d / "energy.raw").is_file():
        energy = _read_rows(d / "energy.raw", 1)[:, 0]
        if len(energy) != nframes:
            raise ParseError(
                f"{len(energy)} frames but coord.raw has {nframes}",
                str(d / "energy.raw"),
                min(len(energy), nframes) + 1,
            )
    if (d / "force.raw").is_file():
        forces = _read_rows(d / "force.raw", 3 * natoms)
        if len(forces) != nframes:
            raise ParseError(
                f"{len(forces)} frames but coord.raw has {nframes}",
                str(d / "force.raw"),
                min(len(forces), nframes) + 1,
            )

    frames = []
    for k in range(nframes):
        try:
            st = AtomicStructure(species.copy(), coord[k].reshape(natoms, 3), box[k].reshape(3, 3), (True,) * 3)
        except ValueError as exc:
            raise ParseError(str(exc), str(d / "box.raw"), k + 1) from None
        frames.append(
            LabeledFrame(
                st,
                None if energy is None else energy[k],
                None if forces is None else forces[k].reshape(natoms, 3),
            )
        )
    return Dataset(frames)


def write_deepmd_raw(dataset: Dataset, directory: str | os.PathLike) -> None:
    """Write a fixed-composition periodic dataset as DeePMD raw text files."""
    d = Path(directory)
    frames = dataset.frames
    if frames:
        species = frames[0].structure.species
        for k, fr in enumerate(frames):
            st = fr.structure
            if not np.array_equal(st.species, species):
                raise ValueError(f"frame {k} has a different species ordering; deepmd raw needs a fixed composition")
            if st.cell is None or not all(st.pbc):
                raise ValueError(f"frame {k} is not fully periodic; deepmd raw requires a cell and pbc on all axes")
        has_e = {fr.energy is not None for fr in frames}
        has_f = {fr.forces is not None for fr in frames}
        if len(has_e) > 1 or len(has_f) > 1:
            raise ValueError("deepmd raw needs energies and forces on all frames or on none")
    d.mkdir(parents=True, exist_ok=True)
    if not frames:
        return
    elements = sorted(set(species.tolist()))
    index = {z: i for i, z in enumerate(elements)}

    def dump(name, rows):
        with open(d / name, "w") as fh:
            for row in rows:
                fh.write(" ".join(_f(x) for x in np.ravel(row)) + "\n")

    with open(d / "type.raw", "w") as fh:
        fh.write(" ".join(str(index[int(z)]) for z in species) + "\n")
    with open(d / "type_map.raw", "w") as fh:
        fh.write("".join(symbol(z) + "\n" for z in elements))
    dump("box.raw", [fr.structure.cell for fr in frames])
    dump("coord.raw", [fr.structure.positions for fr in frames])
    if frames[0].energy is not None:
        dump("energy.raw", [[fr.energy] for fr in frames])
    if frames[0].forces is not None:
        dump("force.raw", [fr.forces for fr in frames])


def load_dataset(path: str | os.PathLike, fmt: str) -> Dataset:
    if fmt == "extxyz":
        return read_extxyz(path)
    if fmt == "deepmd_raw":
        return parse_deepmd_raw(path)
    raise ValueError(f"unknown dataset format {fmt!r}; expected extxyz or deepmd_raw")
