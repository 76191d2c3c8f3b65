"""``hermnet`` command line: train, eval, predict, selfcheck.

Exit codes: 0 success, 1 selfcheck failure, 2 bad config/data/checkpoint,
3 training diverged, 4 element vocabulary mismatch. Only the payload goes to
stdout; progress and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import checkpoint
from .config import ConfigError, load_run_config
from .io import ParseError, load_dataset, parse_extxyz, write_extxyz
from .model import HermNet, ModelConfig, VocabularyError
from .structures import Dataset, LabeledFrame, split_dataset
from .training import TrainingDiverged, evaluate, predict_frames, train

log = logging.getLogger("hermnet")

EXIT_OK, EXIT_SELFCHECK, EXIT_INPUT, EXIT_NAN, EXIT_VOCAB = 0, 1, 2, 3, 4


class InputError(Exception):
    """Anything the user can fix by pointing at a different file."""


def _load(path, fmt: str) -> Dataset:
    path = Path(path)
    if fmt == "extxyz" and str(path) == "-":
        return parse_extxyz(sys.stdin.read(), "<stdin>")
    if not path.exists():
        raise InputError(f"{path}: no such file or directory")
    return load_dataset(path, fmt)


def _datasets(rc):
    if rc.train_path is not None:
        train_set = _load(rc.train_path, rc.fmt)
        val_set = _load(rc.val_path, rc.fmt) if rc.val_path else None
        test_set = _load(rc.test_path, rc.fmt) if rc.test_path else None
        return train_set, val_set, test_set
    full = _load(rc.data_path, rc.fmt)
    n_train = rc.n_train if rc.n_train is not None else len(full) - rc.n_val
    if n_train <= 0 or n_train + rc.n_val > len(full):
        raise InputError(f"cannot split {len(full)} frames into n_train={n_train}, n_val={rc.n_val}")
    train_set, val_set, test_set = split_dataset(full, n_train, rc.n_val, rc.train.seed)
    return train_set, (val_set if len(val_set) else None), (test_set if len(test_set) else None)


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    overrides = {}
    if args.seed is not None:
        rc.model_seed = args.seed
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        try:
            rc.train = dataclasses.replace(rc.train, **overrides)
        except ValueError as exc:
            raise InputError(f"bad command-line override: {exc}") from None
    out = Path(args.out).resolve() if args.out else rc.out_dir
    train_set, val_set, test_set = _datasets(rc)
    elements = set(train_set.element_set)
    for ds in (val_set, test_set):
        if ds is not None:
            elements |= set(ds.element_set)
    cfg = ModelConfig(rc.variant, rc.hidden, rc.layers, rc.r_cut, tuple(sorted(elements)))
    model = HermNet(cfg, seed=rc.model_seed)
    log.info("%s with %d parameters on %d training frames, elements %s",
             cfg.variant, model.n_parameters(), len(train_set), list(cfg.element_set))

    def progress(row):
        log.info("epoch %d lr %.3g train %.6g val %.6g", row["epoch"], row["lr"], row["train_loss"], row["val_loss"])

    result = train(model, train_set, val_set, rc.train, on_epoch=progress)
    out.mkdir(parents=True, exist_ok=True)
    header = "epoch\tlr\ttrain_loss\tval_loss\tval_energy_mae_per_atom\tval_force_mae"
    (out / "train.log").write_text("\n".join([header, *result.log_lines]) + "\n")
    summary = {
        "variant": cfg.variant,
        "element_set": list(cfg.element_set),
        "n_parameters": model.n_parameters(),
        "best_epoch": result.best_epoch,
        "epochs": len(result.history),
        "units": "meV, meV/atom, meV/Å",
    }
    for name, ds in (("train", train_set), ("val", val_set), ("test", test_set)):
        if ds is not None and any(f.labeled for f in ds):
            summary[name] = evaluate(model, [f for f in ds if f.labeled]).to_dict("meV")
    checkpoint.save(out / "model.ckpt", model, {"best_epoch": result.best_epoch})
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    log.info("wrote %s", out)
    print(json.dumps(summary))
    return EXIT_OK


def _checkpoint(path) -> HermNet:
    if not Path(path).exists():
        raise InputError(f"{path}: no such checkpoint")
    return checkpoint.load(path)


def cmd_eval(args) -> int:
    model = _checkpoint(args.checkpoint)
    ds = _load(args.data, args.format)
    labeled = [f for f in ds if f.labeled]
    if not labeled:
        raise InputError(f"{args.data}: no frames with energy labels")
    metrics = evaluate(model, labeled)
    print(json.dumps(metrics.to_dict("meV")))
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _checkpoint(args.checkpoint)
    ds = _load(args.data, args.format)
    frames = list(ds)
    if not frames:
        return EXIT_OK
    energies, forces = predict_frames(model, [LabeledFrame(f.structure) for f in frames], forces=True)
    out = [LabeledFrame(fr.structure, float(e), f, dict(fr.targets)) for fr, e, f in zip(frames, energies, forces)]
    sys.stdout.write(write_extxyz(Dataset(out)))
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    results = run_selfcheck(seed=args.seed or 0, inject=args.inject)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        log.error("selfcheck failed: %s", ", ".join(failed))
        return EXIT_SELFCHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hermnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    common(p)
    p.set_defaults(func=cmd_train)

    for name, func, what in (("eval", cmd_eval, "print metrics JSON (meV)"),
                             ("predict", cmd_predict, "write extxyz with predicted energy and forces")):
        p = sub.add_parser(name, help=what)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="dataset path ('-' reads extxyz from stdin)")
        p.add_argument("--format", choices=("extxyz", "deepmd_raw"), default="extxyz")
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("selfcheck", help="run the fast invariant suite")
    p.add_argument("--inject", action="append", choices=("rvec_sign_flip", "cutoff_exponent"),
                   help=argparse.SUPPRESS)
    common(p)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="hermnet: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except (ConfigError, ParseError, InputError, checkpoint.CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except TrainingDiverged as exc:
        log.error("training aborted: %s", exc)
        return EXIT_NAN
    except VocabularyError as exc:
        log.error("%s", exc)
        return EXIT_VOCAB


if __name__ == "__main__":
    sys.exit(main())
