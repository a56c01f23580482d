"""Assemble datasets, target models and benchmarks from a :class:`RunConfig`."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datasets as ds_mod
from .causal_targets import precompute_targets
from .config import GroupingConfig, RunConfig
from .core import BlackBoxModel, ContractError, LossFunction
from .evaluation import (
    EvalReport,
    delta_log_odds_benchmark,
    mww_test,
    per_feature_delta_log_odds,
    random_attributions,
    summarize,
    uncertainty_correlation_benchmark,
)
from .explainer import explain, train_explainer
from .masking import FeatureGrouping, MaskingStrategy, grid_grouping, identity_grouping
from .models import AnalyticModel, ExternalModelBridge, train_builtin_classifier
from .nn import TrainConfig
from .uncertainty import train_ensemble

log = logging.getLogger("cxplain")


def build_dataset(cfg: RunConfig) -> ds_mod.LabeledDataset:
    """Dataset with a seeded train/test split (or the files' own split for IDX)."""
    d = cfg.dataset
    if d.kind == "idx":
        paths = [d.images_path, d.labels_path]
        if all(paths) and all(Path(p).exists() for p in paths):
            train = ds_mod.filter_classes(ds_mod.load_idx(d.images_path, d.labels_path), d.class_a, d.class_b)
            if d.test_images_path and d.test_labels_path:
                test = ds_mod.filter_classes(ds_mod.load_idx(d.test_images_path, d.test_labels_path),
                                             d.class_a, d.class_b)
                X = np.concatenate([train.X, test.X])
                y = np.concatenate([train.y, test.y])
                out = ds_mod.LabeledDataset(X, y, image_shape=train.image_shape, name=train.name,
                                            metadata=train.metadata)
                out.train_idx = np.arange(train.N)
                out.test_idx = np.arange(train.N, out.N)
                out.seed = cfg.seed
                return out
            return train.split(d.test_fraction, cfg.seed)
        if not d.fallback_to_synthetic:
            missing = next(p for p in paths if not p or not Path(p).exists())
            raise FileNotFoundError(f"IDX file not found: {missing}")
        log.warning("IDX files absent; falling back to synthetic patch images")
        out = ds_mod.gen_patch_images(d.n, d.height, d.width, cfg.seed)
        out.metadata["fallback_from"] = "idx"
        return out.split(d.test_fraction, cfg.seed)
    if d.kind == "patch_images":
        ds = ds_mod.gen_patch_images(d.n, d.height, d.width, cfg.seed)
    elif d.kind == "single_informative":
        ds = ds_mod.gen_single_informative(d.n, d.p, cfg.seed)
    elif d.kind == "additive_logit":
        ds = ds_mod.gen_additive_logit(d.n, d.p, d.weights or [1.0] * d.p, cfg.seed)
    else:
        ds = ds_mod.load_csv(d.csv_path, d.target_cols)
    return ds.split(d.test_fraction, cfg.seed)


def build_grouping(gc: GroupingConfig, ds: ds_mod.LabeledDataset) -> FeatureGrouping:
    if gc.kind == "identity":
        return identity_grouping(ds.d)
    if ds.image_shape is None:
        raise ContractError("grid grouping needs an image dataset")
    h, w = ds.image_shape
    return grid_grouping(h, w, gc.patch_h, gc.patch_w)


def build_strategy(kind: str, X_train) -> MaskingStrategy:
    return MaskingStrategy.zero() if kind == "zero" else MaskingStrategy.dataset_mean(X_train)


def build_loss(cfg: RunConfig, ds: ds_mod.LabeledDataset) -> LossFunction:
    if cfg.loss != "auto":
        return LossFunction(cfg.loss)
    y = ds.y
    onehot = y.shape[1] > 1 and np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)
    if onehot:
        return LossFunction("categorical_crossentropy")
    if y.shape[1] == 1 and np.all((y == 0) | (y == 1)):
        return LossFunction("binary_crossentropy")
    return LossFunction("mse")


def build_target_model(cfg: RunConfig, ds: ds_mod.LabeledDataset) -> BlackBoxModel:
    t = cfg.target_model
    if t.kind == "analytic":
        params = dict(t.analytic)
        return AnalyticModel(params.pop("kind", "select_feature"), **params)
    if t.kind == "bridge":
        return ExternalModelBridge(t.command, timeout=t.timeout)
    tc = TrainConfig(hidden=tuple(t.hidden), learning_rate=t.learning_rate, epochs=t.epochs,
                     batch_size=t.batch_size, seed=cfg.seed, patience=t.patience)
    train, test = ds.train(), ds.test()
    return train_builtin_classifier(train.X, train.y, tc, X_test=test.X, y_test=test.y)


@dataclass
class Context:
    cfg: RunConfig
    ds: ds_mod.LabeledDataset
    model: BlackBoxModel
    grouping: FeatureGrouping
    strategy: MaskingStrategy
    loss: LossFunction
    threads: int = 1

    @property
    def train(self):
        return self.ds.train()

    @property
    def test(self):
        return self.ds.test()

    def strategy_record(self) -> dict:
        return {"kind": self.strategy.kind}


def prepare(cfg: RunConfig, threads: int = 1) -> Context:
    ds = build_dataset(cfg)
    model = build_target_model(cfg, ds)
    train_X = ds.X[ds.train_idx]
    return Context(cfg, ds, model, build_grouping(cfg.grouping, ds), build_strategy(cfg.masking, train_X),
                   build_loss(cfg, ds), threads)


def compute_targets(ctx: Context, X=None, y=None, grouping=None):
    """Omega over the training split plus its metadata record."""
    if X is None:
        tr = ctx.train
        X, y = tr.X, tr.y
    grouping = grouping or ctx.grouping
    before = ctx.model.evaluations
    omega = precompute_targets(ctx.model, ctx.loss, X, y, grouping, ctx.strategy,
                               ctx.cfg.negative_delta, threads=ctx.threads)
    meta = {
        "N": int(X.shape[0]),
        "p": grouping.p,
        "grouping": grouping.layout,
        "strategy": ctx.strategy_record(),
        "loss": ctx.loss.kind,
        "negative_delta": ctx.cfg.negative_delta,
        "model_fingerprint": ctx.model.fingerprint(),
        "evaluation_count": int(ctx.model.evaluations - before),
        "seed": ctx.cfg.seed,
    }
    return omega, meta


def model_metadata(model) -> dict:
    meta = {"fingerprint": model.fingerprint(), "name": model.name}
    extra = getattr(model, "metadata", None)
    if extra:
        meta.update({k: v for k, v in extra.items() if k in ("train_accuracy", "test_accuracy", "best_epoch")})
    return meta


@dataclass
class BenchmarkOutcome:
    logodds: dict = field(default_factory=dict)
    uncertainty: object = None
    report: EvalReport = field(default_factory=EvalReport)
    timings: dict = field(default_factory=dict)


def run_benchmark(ctx: Context) -> BenchmarkOutcome:
    """Top-q masked log-odds benchmark and the uncertainty-correlation benchmark."""
    cfg, ev = ctx.cfg, ctx.cfg.evaluation
    out = BenchmarkOutcome()
    eval_strategy = build_strategy(ev.masking, ctx.train.X) if ev.masking else ctx.strategy
    test = ctx.test
    n = min(ev.n_images, test.N)
    X_eval, y_eval = test.X[:n], test.y[:n]
    summary = {
        # output_dir is where results go, not what they are; keep it out so reruns compare equal
        "config": {k: v for k, v in cfg.to_dict().items() if k != "output_dir"},
        "dataset": ctx.ds.manifest(),
        "target_model": model_metadata(ctx.model),
        "target_masking": ctx.strategy_record(),
        "evaluation_masking": {"kind": eval_strategy.kind},
        "seeds": {"master": cfg.seed, "random_attribution": cfg.seed + 1, "random_uncertainty": cfg.seed + 2,
                  "ensemble_master": cfg.seed + 1000},
        "median_renormalised": True,
    }
    per_image = {}

    if ev.run_logodds:
        t0 = time.perf_counter()
        omega, meta = compute_targets(ctx)
        out.timings["targets_seconds"] = time.perf_counter() - t0
        summary["targets"] = meta
        t0 = time.perf_counter()
        ex = train_explainer(ctx.train.X, omega, cfg.explainer.train_config(cfg.seed),
                             cfg.explainer.validation_fraction, grouping=ctx.grouping, strategy=ctx.strategy)
        out.timings["explainer_training_seconds"] = time.perf_counter() - t0
        summary["explainer"] = {"best_epoch": ex.provenance["best_epoch"],
                                "final_train_kl": ex.history["train"][ex.provenance["best_epoch"]]}
        random_rows = random_attributions(n, ctx.grouping.p, cfg.seed + 1)
        attribute = {
            "cxplain": lambda j: explain(ex, X_eval[j:j + 1])[0],
            "direct_omega": lambda j: precompute_targets(ctx.model, ctx.loss, X_eval[j:j + 1], y_eval[j:j + 1],
                                                         ctx.grouping, ctx.strategy, cfg.negative_delta)[0],
            "random": lambda j: random_rows[j],
        }
        methods, timers = {}, {}
        for name, fn in attribute.items():
            rows, secs = [], []
            for j in range(n):
                t0 = time.perf_counter()
                rows.append(fn(j))
                secs.append(time.perf_counter() - t0)
            methods[name] = np.array(rows)
            timers[name] = {"mean": float(np.mean(secs)), "std": float(np.std(secs)), "total": float(np.sum(secs))}
        # per-image wall-clock seconds for each attribution method
        out.timings["attribution_seconds"] = timers
        scores = delta_log_odds_benchmark(ctx.model, X_eval, methods, ev.q, ctx.grouping, eval_strategy)
        out.logodds = scores
        summary["delta_log_odds"] = {name: summarize(v) for name, v in scores.items()}
        summary["mww"] = {}
        names = list(scores)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                r = mww_test(scores[a], scores[b])
                summary["mww"][f"{a}_vs_{b}"] = {"u_a": r.u_a, "u_b": r.u_b, "p_value": r.p_value,
                                                 "method": r.method}
        for name, v in scores.items():
            per_image[f"dlogodds_{name}"] = list(v)

    if ev.run_uncertainty:
        ugroup = build_grouping(ev.uncertainty_grouping, ctx.ds)
        tr = ctx.train
        m = tr.N if ev.uncertainty_train_size is None else min(tr.N, ev.uncertainty_train_size)
        t0 = time.perf_counter()
        omega_u, meta_u = compute_targets(ctx, tr.X[:m], tr.y[:m], ugroup)
        out.timings["uncertainty_targets_seconds"] = time.perf_counter() - t0
        summary["uncertainty_targets"] = meta_u
        sizes = sorted({int(v) for v in ev.M_values})
        tc = cfg.explainer.train_config(cfg.seed)
        if ev.uncertainty_epochs is not None:
            tc = replace(tc, epochs=ev.uncertainty_epochs)
        t0 = time.perf_counter()
        # member seeds are master + index, so smaller ensembles are prefixes of the largest
        full = train_ensemble(tr.X[:m], omega_u, sizes[-1], tc, cfg.seed + 1000,
                              cfg.explainer.validation_fraction, threads=ctx.threads, grouping=ugroup,
                              strategy=ctx.strategy)
        out.timings["ensemble_training_seconds"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        truth = np.stack([per_feature_delta_log_odds(ctx.model, x, ugroup, eval_strategy) for x in X_eval])
        res = uncertainty_correlation_benchmark(
            ctx.model, {M: full.subset(M) for M in sizes}, X_eval, ugroup, eval_strategy,
            top_fraction=ev.top_fraction, gamma=cfg.ensemble.gamma, seed=cfg.seed + 2,
            filter_order=ev.filter_order, min_features=ev.min_features, truth=truth)
        out.timings["uncertainty_benchmark_seconds"] = time.perf_counter() - t0
        out.uncertainty = res
        summary["uncertainty"] = {
            "gamma": cfg.ensemble.gamma,
            "top_fraction": ev.top_fraction,
            "filter_order": ev.filter_order,
            "mean_fisher_z": {str(M): res.mean_z(M) for M in sizes},
            "random_mean_fisher_z": res.random_mean_z,
            "skipped": {str(k): v for k, v in res.skipped.items()},
            "mww_vs_random": {},
        }
        rz = [z for z in res.random_z if z is not None]
        for M in sizes:
            zs = [z for z in res.z_by_M[M] if z is not None]
            per_image[f"fisher_z_M{M}"] = res.z_by_M[M]
            if zs and rz:
                r = mww_test(zs, rz)
                summary["uncertainty"]["mww_vs_random"][str(M)] = {"p_value": r.p_value, "method": r.method}
        per_image["fisher_z_random"] = res.random_z

    out.report = EvalReport(per_image, summary)
    return out
