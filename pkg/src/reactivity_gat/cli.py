"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import sys
from pathlib import Path
from typing import Sequence

from threadpoolctl import threadpool_limits

from . import __version__
from .autodiff import NumericalError
from .checkpoint import CheckpointError
from .data import (CSV_COLUMNS, DataError, ScalerParams, fit_scaler,
                   generate_copolymer, ingest_csv, invert_scaler, invert_sqrt, prepare_samples,
                   read_records, shuffle_split, skewness, sqrt_transform, targets, write_records,
                   write_rejections, write_split_manifest, file_digest, DatasetSplit)
from .diagnostics import model_grad_check
from .featurize import FEATURE_GROUPS, featurize_graph, featurize_smiles
from .interpret import (atom_similarity, dump_attention, rank_feature_groups, write_attention,
                        write_importance, write_similarity)
from .model import ModelConfig, init_params, load_model, mimo_forward, save_model
from .smiles import SmilesError, parse
from .training import TrainConfig, evaluate, train, write_parity, write_training_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

MANIFEST_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------- config


def _coerce(name: str, default, text: str):
    text = text.strip()
    if default is None or isinstance(default, float):
        if text.lower() in ("none", ""):
            if default is None:
                return None
            raise UsageError(f"{name} needs a number")
        try:
            return float(text)
        except ValueError:
            raise UsageError(f"{name}: not a number: {text!r}") from None
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise UsageError(f"{name}: not an integer: {text!r}") from None
    return text


def _read_config_file(path: str) -> list[tuple[str, str]]:
    pairs = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def _config_pairs(config_path: str | None, overrides: Sequence[str]) -> list[tuple[str, str]]:
    pairs = _read_config_file(config_path) if config_path else []
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def resolve_configs(config_path: str | None, overrides: Sequence[str], seed: int
                    ) -> tuple[ModelConfig, TrainConfig]:
    """Defaults, then the key=value file, then ``--set`` overrides."""
    pairs = _config_pairs(config_path, overrides)
    model_defaults = {f.name: f.default for f in dataclasses.fields(ModelConfig)}
    train_defaults = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    model_kw, train_kw = {}, {}
    for key, value in pairs:
        if key == "seed":
            raise UsageError("set the seed with --seed")
        if key == "dropout":
            train_kw[key] = model_kw[key] = _coerce(key, 0.0, value)
        elif key in train_defaults:
            train_kw[key] = _coerce(key, train_defaults[key], value)
        elif key in model_defaults:
            model_kw[key] = _coerce(key, model_defaults[key], value)
        else:
            raise UsageError(f"unknown config key {key!r}")
    try:
        return (ModelConfig(seed=seed, **model_kw), TrainConfig(seed=seed, **train_kw))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


# ---------------------------------------------------------------- helpers


def _load_records(path: str):
    """Cleaned split files carry a row_id column; raw CSVs are cleaned on the fly."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    with p.open(newline="") as fh:
        header = next(csv.reader(fh), [])
    if "row_id" in [h.strip() for h in header]:
        return read_records(p)
    records, _ = ingest_csv(p)
    return records


def _load_scaler(path: Path) -> ScalerParams:
    try:
        return ScalerParams.from_dict(json.loads(path.read_text()))
    except FileNotFoundError:
        raise DataError(f"missing scaler: {path}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"unreadable scaler {path}: {exc}") from None


def _checkpoint_scaler(extra: dict, override: str | None) -> ScalerParams:
    if override:
        return _load_scaler(Path(override))
    if "scaler" not in extra:
        raise DataError("missing scaler: checkpoint has none and --scaler was not given")
    return ScalerParams.from_dict(extra["scaler"])


def _load_checked(args):
    """Load ``--model``; explicit ``--config``/``--set`` values must agree with it."""
    params, cfg, extra = load_model(args.model)
    if args.config or args.set:
        wanted, _ = resolve_configs(args.config, args.set, cfg.seed)
        given = {k for k, _ in _config_pairs(args.config, args.set)}
        clash = [f"{k}={getattr(wanted, k)!r} (checkpoint {getattr(cfg, k)!r})"
                 for k in ("fingerprint_dim", "radius", "T")
                 if k in given and getattr(wanted, k) != getattr(cfg, k)]
        if clash:
            raise CheckpointError("configuration does not match checkpoint: " + ", ".join(clash))
    return params, cfg, extra


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------- commands


def cmd_preprocess(args) -> int:
    out = Path(args.out)
    records, rejected = ingest_csv(args.input)
    out.mkdir(parents=True, exist_ok=True)
    write_rejections(out / "rejections.csv", rejected)
    for r in rejected:
        print(f"rejected row {r.row_id}: {r.reason}", file=sys.stderr)
    if not records:
        raise DataError("no records survived cleaning")
    if args.all_train:
        split = DatasetSplit(list(records), list(records), [], args.seed)
        mode = "all-train"
    else:
        if len(records) < 10:
            raise DataError(f"too few records to split ({len(records)} < 10); "
                            "use --all-train to train and validate on every record")
        split = shuffle_split(records, args.seed)
        mode = "shuffle"
    for name in ("train", "validation", "test"):
        write_records(out / f"{name}.csv", getattr(split, name))
    try:
        scaler = fit_scaler(sqrt_transform(targets(split.train)))
    except ValueError as exc:
        raise DataError(f"cannot fit the target scaler: {exc}") from None
    _write_json(out / "scaler.json", scaler.to_dict())
    y_all = targets(records)
    summary = {}
    for j, task in enumerate(("r1", "r2")):
        try:
            summary[task] = {"before": skewness(y_all[:, j]), "after": skewness(sqrt_transform(y_all[:, j]))}
        except ValueError as exc:
            summary[task] = {"before": None, "after": None, "note": str(exc)}
    _write_json(out / "skewness.json", summary)
    write_split_manifest(out / "split_manifest.json", split, file_digest(args.input), mode)
    print(f"accepted {len(records)} rows, rejected {len(rejected)}; "
          f"train/validation/test = {len(split.train)}/{len(split.validation)}/{len(split.test)}")
    return EXIT_OK


def cmd_gen_copolymer(args) -> int:
    print(generate_copolymer(args.m1, args.m2))
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, train_cfg = resolve_configs(args.config, args.set, args.seed)
    data = Path(args.data)
    train_path, val_path, scaler_path = data / "train.csv", data / "validation.csv", data / "scaler.json"
    scaler = _load_scaler(scaler_path)
    train_records, val_records = read_records(train_path), read_records(val_path)
    if not train_records or not val_records:
        raise DataError("train and validation splits must both be non-empty")
    train_samples = prepare_samples(train_records, scaler)
    val_samples = prepare_samples(val_records, scaler)

    params = init_params(model_cfg)
    result = train(params, model_cfg, train_samples, val_samples, train_cfg,
                   on_epoch=(lambda e: print(f"epoch {e.epoch} lr {e.lr:.3g} train {e.train_loss:.6g} "
                                             f"val {e.val_loss:.6g}")) if args.verbose else None)
    params.load_state_dict(result.best_state)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"scaler": scaler.to_dict(), "train": train_cfg.to_dict(), "best_epoch": result.best_epoch}
    save_model(out / "model.ckpt", params, model_cfg, extra)
    write_training_log(out / "training_log.csv", result.history)
    manifest = {
        "version": MANIFEST_VERSION,
        "tool_version": __version__,
        "seed": args.seed,
        "model_config": dataclasses.asdict(model_cfg),
        "train_config": train_cfg.to_dict(),
        "inputs": {p.name: file_digest(p) for p in (train_path, val_path, scaler_path)},
        "artifacts": {"checkpoint": "model.ckpt", "log": "training_log.csv"},
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
    }
    _write_json(out / "manifest.json", manifest)
    print(f"best epoch {result.best_epoch}, validation loss {result.best_val_loss:.6g}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params, cfg, extra = _load_checked(args)
    scaler = _checkpoint_scaler(extra, args.scaler)
    records = _load_records(args.data)
    if not records:
        raise DataError("no records to evaluate")
    metrics = evaluate(params, cfg, prepare_samples(records, scaler), scaler)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", metrics.to_dict())
    write_parity(out / "parity.csv", metrics)
    r2 = metrics.r2_original
    print(f"loss {metrics.loss:.6g}; R2 (original scale) r1 {r2[0]:.4f}, r2 {r2[1]:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    params, cfg, extra = _load_checked(args)
    scaler = _checkpoint_scaler(extra, args.scaler)
    g1, g2 = parse(args.m1), parse(args.m2)
    gco = parse(args.copolymer) if args.copolymer else parse(generate_copolymer(g1, g2))
    y = mimo_forward(featurize_graph(g1), featurize_graph(g2), featurize_graph(gco), params, cfg)
    r = invert_sqrt(invert_scaler(scaler, y))
    print(f"r1 {r[0]:.6g}")
    print(f"r2 {r[1]:.6g}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    params, cfg, extra = _load_checked(args)
    out = Path(args.out)
    if args.ablation:
        if not args.data:
            raise UsageError("--ablation needs --data")
        scaler = _checkpoint_scaler(extra, args.scaler)
        samples = prepare_samples(_load_records(args.data), scaler)
        if not samples:
            raise DataError("no records to ablate")
        groups = args.groups.split(",") if args.groups else None
        if groups:
            unknown = [g for g in groups if g not in FEATURE_GROUPS]
            if unknown:
                raise UsageError(f"unknown feature group(s): {', '.join(unknown)}; "
                                 f"known: {', '.join(FEATURE_GROUPS)}")
        ranked = rank_feature_groups(params, cfg, [s.graphs for s in samples], groups)
        write_importance(out, ranked)
        for res in ranked:
            print(f"{res.rank:2d} {res.group:14s} {res.mean_abs_delta[0]:.6g} {res.mean_abs_delta[1]:.6g}")
        return EXIT_OK
    if not args.smiles:
        raise UsageError("--similarity/--attention need --smiles")
    fg = featurize_smiles(args.smiles)
    if args.similarity:
        sim = atom_similarity(params, cfg, fg)
        write_similarity(out, sim)
        if sim.trivial:
            print("single-atom molecule: trivial 1x1 similarity matrix", file=sys.stderr)
        if sim.degenerate:
            print(f"zero-variance atoms (similarity set to 0): {sim.degenerate}", file=sys.stderr)
    else:
        write_attention(out, dump_attention(params, cfg, fg))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    res = model_grad_check(seed=args.seed, fingerprint_dim=args.hidden, eps=args.eps,
                           max_coords=args.max_coords)
    ok = res.max_rel_error < args.tol
    print(f"molecules: {' | '.join(res.molecules)}")
    print(f"checked {res.checked} coordinates, skipped {res.skipped} kink crossings")
    print(f"max rel err {res.max_rel_error:.3e} {'<' if ok else '>='} {args.tol:g}")
    return EXIT_OK if ok else EXIT_NUMERICAL


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS threads")

    parser = _Parser(prog="reactivity-gat",
                     description="Predict copolymerization reactivity ratios (r1, r2) from monomer SMILES.",
                     epilog="exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", parents=[common], help="clean, split and scale a dataset")
    p.add_argument("--in", dest="input", required=True, help=f"CSV with columns {', '.join(CSV_COLUMNS)}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--all-train", action="store_true",
                   help="use every record for training and validation (tiny datasets)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("gen-copolymer", parents=[common], help="print the head-to-tail dimer SMILES")
    p.add_argument("--m1", required=True)
    p.add_argument("--m2", required=True)
    p.set_defaults(func=cmd_gen_copolymer)

    p = sub.add_parser("train", parents=[common], help="train a model on preprocessed splits")
    p.add_argument("--data", required=True, help="directory written by preprocess")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--verbose", action="store_true", help="print one line per epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="metrics and parity pairs for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="split CSV or raw dataset CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scaler", help="scaler.json overriding the checkpoint's")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="predict r1, r2 for a monomer pair")
    p.add_argument("--model", required=True)
    p.add_argument("--m1", required=True)
    p.add_argument("--m2", required=True)
    p.add_argument("--copolymer", help="copolymer SMILES (generated when omitted)")
    p.add_argument("--scaler", help="scaler.json overriding the checkpoint's")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", parents=[common], help="interpretability exports")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--similarity", action="store_true", help="atom similarity matrix CSV")
    mode.add_argument("--attention", action="store_true", help="attention weights CSV")
    mode.add_argument("--ablation", action="store_true", help="feature-group importance CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--smiles", help="molecule for --similarity/--attention")
    p.add_argument("--data", help="dataset for --ablation")
    p.add_argument("--groups", help="comma-separated feature groups for --ablation")
    p.add_argument("--scaler", help="scaler.json overriding the checkpoint's")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of the model")
    p.add_argument("--hidden", type=int, default=8, help="fingerprint width for the check (default 8)")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=None,
                   help="sample this many coordinates per tensor instead of all")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    limit = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limit:
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SmilesError, CheckpointError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
