"""Run configuration: a sectioned ``key = value`` text file.

Example::

    [model]
    variant = hvnet
    hidden = 32
    layers = 2
    r_cut = 5.0

    [data]
    format = extxyz
    train = train.xyz
    val = val.xyz

    [train]
    lr = 3e-4
    epochs = 200

    [output]
    dir = run1

Relative paths are resolved against the config file's directory. Blank lines
and lines starting with ``#`` or ``;`` are ignored. configparser is not used
because every diagnostic here carries the offending line number.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .training import TrainConfig

SCHEMA = {
    "model": {"variant": str, "hidden": int, "layers": int, "r_cut": float, "seed": int},
    "train": {
        "lr": float,
        "plateau_patience": int,
        "plateau_factor": float,
        "energy_weight": float,
        "force_weight": float,
        "batch_size": int,
        "epochs": int,
        "seed": int,
        "threads": int,
    },
    "data": {"format": str, "train": str, "val": str, "test": str, "path": str, "n_train": int, "n_val": int},
    "output": {"dir": str},
}
_TRAIN_KEYS = {
    "lr": "lr0",
    "plateau_patience": "plateau_patience",
    "plateau_factor": "plateau_factor",
    "energy_weight": "energy_weight",
    "force_weight": "force_weight",
    "batch_size": "batch_size",
    "epochs": "max_epochs",
    "seed": "seed",
    "threads": "threads",
}


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.line = line
        where = source if line is None else f"{source}:{line}"
        super().__init__(f"{where}: {message}")


@dataclass
class RunConfig:
    variant: str = "hvnet"
    hidden: int = 128
    layers: int = 3
    r_cut: float = 5.0
    model_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    fmt: str = "extxyz"
    train_path: Path | None = None
    val_path: Path | None = None
    test_path: Path | None = None
    data_path: Path | None = None
    n_train: int | None = None
    n_val: int = 0
    out_dir: Path = Path("hermnet-run")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, tuple[object, int]]]:
    """Typed values keyed by section and key, each paired with its line number."""
    out: dict[str, dict[str, tuple[object, int]]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"unterminated section header {line!r}", source, lineno)
            section = line[1:-1].strip().lower()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", source, lineno)
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", source, lineno)
        if section is None:
            raise ConfigError("key outside of any [section]", source, lineno)
        key, _, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        kind = SCHEMA[section].get(key)
        if kind is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", source, lineno)
        if key in out[section]:
            raise ConfigError(f"duplicate key {key!r} (first set on line {out[section][key][1]})", source, lineno)
        try:
            typed = kind(value)
        except ValueError:
            raise ConfigError(f"{key} must be {kind.__name__}, got {value!r}", source, lineno) from None
        out[section][key] = (typed, lineno)
    return out


def load_run_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    source = str(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", source) from None
    raw = parse_config_text(text, source)
    base = path.parent

    def get(section, key, default=None):
        return raw.get(section, {}).get(key, (default, None))

    rc = RunConfig()
    variant, line = get("model", "variant", "hvnet")
    if variant.lower() not in ("hvnet", "hpnet", "htnet"):
        raise ConfigError(f"variant must be hvnet, hpnet or htnet, got {variant!r}", source, line)
    rc.variant = variant.lower()
    for key, attr in (("hidden", "hidden"), ("layers", "layers"), ("r_cut", "r_cut"), ("seed", "model_seed")):
        value, line = get("model", key, getattr(rc, attr))
        if key != "seed" and not value > 0:
            raise ConfigError(f"{key} must be positive", source, line)
        setattr(rc, attr, value)

    # the library defaults to one thread; runs from a config default to all cores
    tkw = {"threads": os.cpu_count() or 1}
    for key, attr in _TRAIN_KEYS.items():
        value, line = get("train", key)
        if value is not None:
            tkw[attr] = value
    try:
        rc.train = TrainConfig(**tkw)
    except ValueError as exc:
        lines = [v[1] for v in raw.get("train", {}).values()]
        raise ConfigError(str(exc), source, min(lines) if lines else None) from None

    fmt, line = get("data", "format", "extxyz")
    if fmt not in ("extxyz", "deepmd_raw"):
        raise ConfigError(f"format must be extxyz or deepmd_raw, got {fmt!r}", source, line)
    rc.fmt = fmt
    for key in ("train", "val", "test", "path"):
        value, line = get("data", key)
        if value is None:
            continue
        p = (base / value).resolve()
        if not p.exists():
            raise ConfigError(f"dataset path {str(p)!r} does not exist", source, line)
        setattr(rc, "data_path" if key == "path" else f"{key}_path", p)
    if rc.train_path is None and rc.data_path is None:
        raise ConfigError("[data] needs either 'train' or 'path'", source)
    rc.n_train = get("data", "n_train")[0]
    rc.n_val = get("data", "n_val", 0)[0]
    out, _ = get("output", "dir", "hermnet-run")
    rc.out_dir = (base / out).resolve()
    return rc
