"""Command-line interface: ``cxplain {targets,train,explain,ensemble,benchmark}``.

Exit codes: 0 ok, 2 input/config error, 3 numeric/training failure, 4 empty result.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .causal_targets import TargetComputationError, load_omega, save_omega
from .config import ConfigError, RunConfig, load_config
from .core import ContractError, default_threads
from .datasets import DatasetFormatError
from .evaluation import EmptyBenchmarkError
from .explainer import ModelFormatError, explain, load_explainer, save_explainer, train_explainer
from .models import BridgeError, BuiltinClassifier, ClassifierTrainingError
from .nn import SchemaVersionError, TrainingDivergedError
from .pipeline import build_dataset, build_grouping, compute_targets, prepare, run_benchmark
from .uncertainty import MemberTrainingError, aggregate, member_attributions, save_ensemble, train_ensemble

log = logging.getLogger("cxplain")

EXIT_INPUT, EXIT_NUMERIC, EXIT_EMPTY = 2, 3, 4


class CLIError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _run_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _start_run(cfg: RunConfig) -> Path:
    run = _run_dir(cfg)
    (run / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    handler = logging.FileHandler(run / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return run


def _write_matrix(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise CLIError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CLIError(f"{path}: missing header row")
    width = len(rows[0])
    values = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise CLIError(f"{path}: row {lineno} has {len(r)} cells, expected {width}")
        try:
            values.append([float(v) for v in r])
        except ValueError as exc:
            raise CLIError(f"{path}: row {lineno}: {exc}") from exc
    return np.array(values, dtype=np.float64).reshape(len(values), width)


def _omega_for(cfg, omega_path):
    path = Path(omega_path) if omega_path else _run_dir(cfg) / "omega.csv"
    if not path.exists():
        raise CLIError(f"omega file not found: {path}")
    omega, meta = load_omega(path)
    ds = build_dataset(cfg)
    train = ds.train()
    grouping = build_grouping(cfg.grouping, ds)
    if omega.shape != (train.N, grouping.p):
        raise CLIError(f"omega has shape {omega.shape}, expected ({train.N}, {grouping.p}) for this dataset")
    return omega, meta, ds, grouping


def cmd_targets(cfg: RunConfig, threads: int = 1) -> int:
    run = _start_run(cfg)
    ctx = prepare(cfg, threads)
    omega, meta = compute_targets(ctx)
    expected = meta["N"] * (meta["p"] + 1)
    if meta["evaluation_count"] != expected:
        raise CLIError(f"evaluation count {meta['evaluation_count']} != N(p+1) = {expected}", EXIT_NUMERIC)
    save_omega(run / "omega.csv", omega, meta)
    (run / "dataset.json").write_text(json.dumps(ctx.ds.manifest(), indent=2, sort_keys=True) + "\n")
    if isinstance(ctx.model, BuiltinClassifier):
        (run / "target_model.json").write_text(json.dumps(ctx.model.to_dict()) + "\n")
    log.info("wrote omega %s with %d evaluations", omega.shape, meta["evaluation_count"])
    return 0


def cmd_train(cfg: RunConfig, omega_path=None, threads: int = 1) -> int:
    run = _start_run(cfg)
    omega, meta, ds, grouping = _omega_for(cfg, omega_path)
    strategy = {"kind": meta.get("strategy", {}).get("kind", cfg.masking)}
    model = train_explainer(ds.train().X, omega, cfg.explainer.train_config(cfg.seed),
                            cfg.explainer.validation_fraction, grouping=grouping, strategy=strategy,
                            provenance={"target_model": meta.get("model_fingerprint")})
    save_explainer(model, run / "explainer.json")
    hist = model.history
    with open(run / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["train_kl"] + (["validation_kl"] if "validation" in hist else [])
        w.writerow(["epoch", *cols])
        for e, tkl in enumerate(hist["train"]):
            row = [e, repr(tkl)]
            if "validation" in hist:
                row.append(repr(hist["validation"][e]))
            w.writerow(row)
    log.info("trained explainer, best epoch %s", model.provenance["best_epoch"])
    return 0


def cmd_explain(model_path, input_path, out_path) -> int:
    model = load_explainer(model_path)
    X = _read_matrix(input_path)
    header = [f"a_{i}" for i in range(model.p)]
    if X.shape[0] == 0:
        _write_matrix(out_path, header, [])
        return 0
    if X.shape[1] != model.network.d:
        raise CLIError(f"input has {X.shape[1]} columns, explainer expects {model.network.d}")
    _write_matrix(out_path, header, explain(model, X))
    return 0


def cmd_ensemble(cfg: RunConfig, omega_path=None, input_path=None, threads: int = 1) -> int:
    run = _start_run(cfg)
    omega, meta, ds, grouping = _omega_for(cfg, omega_path)
    strategy = {"kind": meta.get("strategy", {}).get("kind", cfg.masking)}
    ens = train_ensemble(ds.train().X, omega, cfg.ensemble.M, cfg.explainer.train_config(cfg.seed),
                         cfg.seed + 1000, cfg.explainer.validation_fraction, threads=threads,
                         grouping=grouping, strategy=strategy)
    save_ensemble(ens, run / "ensemble", cfg.ensemble.gamma)
    X = _read_matrix(input_path) if input_path else ds.test().X
    p = grouping.p
    header = [f"{kind}_{i}" for kind in ("median", "raw_median", "lower", "upper", "u") for i in range(p)]
    if X.shape[0] == 0:
        _write_matrix(run / "ensemble_ci.csv", header, [])
        return 0
    ci = aggregate(member_attributions(ens, X, threads), cfg.ensemble.gamma)
    rows = np.concatenate([ci.median, ci.raw_median, ci.lower, ci.upper, ci.width], axis=1)
    _write_matrix(run / "ensemble_ci.csv", header, rows)
    log.info("trained %d-member ensemble", ens.M)
    return 0


def cmd_benchmark(cfg: RunConfig, threads: int = 1) -> int:
    run = _start_run(cfg)
    ctx = prepare(cfg, threads)
    outcome = run_benchmark(ctx)
    outcome.report.write(run, "benchmark")
    # wall-clock timings vary run to run, so they live outside the report files
    (run / "timings.json").write_text(json.dumps(outcome.timings, indent=2, sort_keys=True) + "\n")
    log.info("benchmark summary written to %s", run)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cxplain", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON run configuration")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="override a config entry (dotted key, JSON value)")
        p.add_argument("--threads", type=int, default=None, help="worker cap (default: $CXPLAIN_THREADS or 1)")

    common(sub.add_parser("targets", help="precompute causal importance targets"))
    p = sub.add_parser("train", help="train an explainer on precomputed targets")
    common(p)
    p.add_argument("--omega", help="omega CSV (default: <output_dir>/omega.csv)")
    p = sub.add_parser("explain", help="attribute new inputs with a trained explainer")
    common(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p = sub.add_parser("ensemble", help="train a bootstrap ensemble and emit CIs")
    common(p)
    p.add_argument("--omega")
    p.add_argument("--input", help="CSV of inputs to attribute (default: test split)")
    common(sub.add_parser("benchmark", help="run the evaluation benchmarks"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads if args.threads is not None else default_threads()
    try:
        if args.command == "explain":
            return cmd_explain(args.model, args.input, args.output)
        cfg = load_config(args.config, args.set)
        if args.command == "targets":
            return cmd_targets(cfg, threads)
        if args.command == "train":
            return cmd_train(cfg, args.omega, threads)
        if args.command == "ensemble":
            return cmd_ensemble(cfg, args.omega, args.input, threads)
        return cmd_benchmark(cfg, threads)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (TrainingDivergedError, MemberTrainingError, ClassifierTrainingError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EmptyBenchmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ConfigError, ContractError, FileNotFoundError, DatasetFormatError, ModelFormatError,
            SchemaVersionError, TargetComputationError, BridgeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        for h in list(log.handlers):
            if isinstance(h, logging.FileHandler):
                log.removeHandler(h)
                h.close()


if __name__ == "__main__":
    sys.exit(main())
