"""Attribution evaluation: masked log-odds changes, rank errors, correlation tests."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ContractError, as_matrix
from .masking import FeatureGrouping, MaskingStrategy, mask_groups, masked_stack

LOG_ODDS_CLAMP = 1e-7
EXACT_MWW_MAX_N = 20


class UndefinedCorrelationError(ValueError):
    pass


class EmptyBenchmarkError(RuntimeError):
    pass


def log_odds(prob):
    p = np.clip(np.asarray(prob, dtype=np.float64), LOG_ODDS_CLAMP, 1.0 - LOG_ODDS_CLAMP)
    out = np.log(p / (1.0 - p))
    return float(out) if out.ndim == 0 else out


def normalize_explanation(e) -> np.ndarray:
    a = np.abs(np.asarray(e, dtype=np.float64))
    total = a.sum(axis=-1, keepdims=True)
    return np.where(total > 0, a / np.where(total > 0, total, 1.0), 1.0 / a.shape[-1])


# --- confidence extraction -----------------------------------------------------

def predicted_class_probability(original, preds) -> np.ndarray:
    """Probability of the class predicted on the unmasked input.

    Single-output models are read as the positive-class probability.
    """
    preds = np.atleast_2d(preds)
    if preds.shape[1] == 1:
        return preds[:, 0]
    return preds[:, int(np.argmax(original))]


def positive_class_probability(original, preds) -> np.ndarray:
    preds = np.atleast_2d(preds)
    return preds[:, -1]


def top_q_count(q: float, p: int) -> int:
    if not 0.0 < q < 1.0:
        raise ContractError("q must lie in (0, 1)")
    # guard against 0.1 * 30 == 3.0000000000000004
    return min(p, math.ceil(round(q * p, 9)))


def top_groups(attribution, count: int) -> np.ndarray:
    """Indices of the ``count`` largest scores; ties go to the lower index."""
    return np.argsort(-np.asarray(attribution, dtype=np.float64), kind="stable")[:count]


def delta_log_odds_topq(model, x_row, attribution, q: float, grouping: FeatureGrouping,
                        strategy: MaskingStrategy, extractor=predicted_class_probability) -> float:
    attribution = np.asarray(attribution, dtype=np.float64)
    if attribution.shape != (grouping.p,):
        raise ContractError(f"attribution length {attribution.shape} does not match p={grouping.p}")
    chosen = top_groups(attribution, top_q_count(q, grouping.p))
    x = np.asarray(x_row, dtype=np.float64).ravel()
    masked = mask_groups(x, grouping, chosen, strategy)
    preds = model.predict(np.stack([x, masked]))
    probs = extractor(preds[0], preds)
    return float(log_odds(probs[0]) - log_odds(probs[1]))


def per_feature_delta_log_odds(model, x_row, grouping: FeatureGrouping, strategy: MaskingStrategy,
                               extractor=predicted_class_probability) -> np.ndarray:
    """Log-odds change from masking each group on its own."""
    rows = masked_stack(np.asarray(x_row, dtype=np.float64)[None, :], grouping, strategy)
    preds = model.predict(rows)
    lo = log_odds(extractor(preds[0], preds))
    return lo[0] - lo[1:]


def descending_ranks(scores) -> np.ndarray:
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    ranks = np.empty(order.size, dtype=np.int64)
    ranks[order] = np.arange(order.size)
    return ranks


def rank_error(true_scores, est_scores) -> np.ndarray:
    true_scores = np.asarray(true_scores)
    est_scores = np.asarray(est_scores)
    if true_scores.shape != est_scores.shape:
        raise ContractError("rank_error needs equal-length score vectors")
    return np.abs(descending_ranks(true_scores) - descending_ranks(est_scores))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ContractError("pearson needs two equal-length vectors of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def fisher_z(rho: float) -> float:
    if not -1.0 < rho < 1.0:
        raise ValueError(f"fisher_z is undefined for |rho| >= 1 (got {rho})")
    return math.atanh(rho)


# --- Mann-Whitney-Wilcoxon ----------------------------------------------------

@dataclass(frozen=True)
class MWWResult:
    u_a: float
    u_b: float
    p_value: float
    method: str


def _midranks(values):
    order = np.argsort(values, kind="stable")
    sorted_v = values[order]
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks, sorted_v


def mww_test(sample_a, sample_b) -> MWWResult:
    """Two-sided Mann-Whitney U test.

    Exact permutation distribution (ties included) when the pooled size is at
    most 20, otherwise the tie-corrected normal approximation with continuity
    correction.
    """
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise ContractError("both samples must be non-empty")
    u_a = float(np.sum(a[:, None] > b[None, :]) + 0.5 * np.sum(a[:, None] == b[None, :]))
    u_b = na * nb - u_a
    mean = na * nb / 2.0
    n = na + nb
    pooled = np.concatenate([a, b])
    ranks, sorted_v = _midranks(pooled)
    if n <= EXACT_MWW_MAX_N:
        offset = na * (na + 1) / 2.0
        combos = np.array(list(itertools.combinations(range(n), na)), dtype=np.int64)
        u_all = ranks[combos].sum(axis=1) - offset
        dev = abs(u_a - mean)
        p = float(np.mean(np.abs(u_all - mean) >= dev - 1e-9))
        return MWWResult(u_a, u_b, min(1.0, p), "exact")
    _, counts = np.unique(sorted_v, return_counts=True)
    tie = float(np.sum(counts ** 3 - counts))
    var = na * nb / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return MWWResult(u_a, u_b, 1.0, "normal")
    z = max(abs(u_a - mean) - 0.5, 0.0) / math.sqrt(var)
    p = math.erfc(z / math.sqrt(2.0))
    return MWWResult(u_a, u_b, min(1.0, p), "normal")


# --- benchmarks -----------------------------------------------------------------

def random_attributions(n: int, p: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return normalize_explanation(rng.uniform(size=(n, p)))


def delta_log_odds_benchmark(model, X, attributions: dict, q: float, grouping: FeatureGrouping,
                             strategy: MaskingStrategy, extractor=predicted_class_probability) -> dict:
    """Per-method arrays of top-q masked log-odds changes over the rows of ``X``."""
    X = as_matrix(X)
    out = {}
    for name, A in attributions.items():
        A = np.atleast_2d(A)
        if A.shape != (X.shape[0], grouping.p):
            raise ContractError(f"{name}: attribution shape {A.shape} does not match inputs")
        out[name] = np.array([
            delta_log_odds_topq(model, x, a, q, grouping, strategy, extractor) for x, a in zip(X, A)
        ])
    return out


def summarize(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"n": int(v.size), "median": float(med), "q1": float(q1), "q3": float(q3),
            "mean": float(v.mean()), "std": float(v.std())}


def select_evaluable(truth, top_fraction: float, order: str = "positive_first") -> np.ndarray:
    """Features with a positive log-odds change, restricted to the top fraction.

    ``positive_first`` keeps the top ``ceil(f * n_positive)`` of the positive
    features; ``top_first`` takes the top ``ceil(f * p)`` of all features and
    then drops the non-positive ones.
    """
    truth = np.asarray(truth, dtype=np.float64)
    ranked = np.argsort(-truth, kind="stable")
    if order == "positive_first":
        pos = ranked[truth[ranked] > 0]
        k = math.ceil(round(top_fraction * pos.size, 9))
        return pos[:k]
    if order == "top_first":
        k = math.ceil(round(top_fraction * truth.size, 9))
        top = ranked[:k]
        return top[truth[top] > 0]
    raise ContractError(f"unknown filter order {order!r}")


def _image_z(re, u, min_features):
    if re.size < min_features:
        return None, "too_few_features"
    try:
        rho = pearson(re, u)
    except UndefinedCorrelationError:
        return None, "constant_input"
    if abs(rho) >= 1.0:
        return None, "degenerate_correlation"
    return fisher_z(rho), None


@dataclass
class UncertaintyBenchmarkResult:
    z_by_M: dict
    random_z: list
    skipped: dict = field(default_factory=dict)
    n_images: int = 0

    def mean_z(self, M) -> float:
        return _nanmean(self.z_by_M[M])

    @property
    def random_mean_z(self) -> float:
        return _nanmean(self.random_z)


def _nanmean(values):
    v = np.array([x for x in values if x is not None], dtype=np.float64)
    return float(v.mean()) if v.size else float("nan")


def uncertainty_correlation_benchmark(model, ensemble_by_M: dict, X_test, grouping: FeatureGrouping,
                                      strategy: MaskingStrategy, top_fraction: float = 0.025,
                                      gamma: float = 0.9, extractor=predicted_class_probability,
                                      seed: int = 0, filter_order: str = "positive_first",
                                      min_features: int = 2, truth=None) -> UncertaintyBenchmarkResult:
    """Correlate CI widths with rank errors against the per-feature log-odds ground truth.

    For each image and ensemble size the Pearson correlation between rank
    error and CI width over the evaluable features is Fisher-z transformed.
    The random baseline pairs the rank errors of the largest ensemble with
    seeded uniform noise. Skipped images are recorded per reason.
    """
    from .uncertainty import aggregate, member_attributions

    X_test = as_matrix(X_test)
    if truth is None:
        truth = np.stack([per_feature_delta_log_odds(model, x, grouping, strategy, extractor) for x in X_test])
    sizes = sorted(ensemble_by_M)
    for M in sizes:
        if ensemble_by_M[M].grouping.to_dict() != grouping.to_dict():
            raise ContractError(f"ensemble M={M} uses a different grouping")
    cis = {M: aggregate(member_attributions(ensemble_by_M[M], X_test), gamma) for M in sizes}
    rng = np.random.default_rng(seed)
    z_by_M = {M: [] for M in sizes}
    random_z = []
    skipped = {}

    def skip(key, reason):
        skipped.setdefault(key, {}).setdefault(reason, 0)
        skipped[key][reason] += 1

    for j in range(X_test.shape[0]):
        sel = select_evaluable(truth[j], top_fraction, filter_order)
        noise = rng.uniform(size=sel.size)
        for M in sizes:
            re = rank_error(truth[j], cis[M].median[j])[sel].astype(np.float64)
            z, why = _image_z(re, cis[M].width[j][sel], min_features)
            z_by_M[M].append(z)
            if why:
                skip(M, why)
        re = rank_error(truth[j], cis[sizes[-1]].median[j])[sel].astype(np.float64)
        z, why = _image_z(re, noise, min_features)
        random_z.append(z)
        if why:
            skip("random", why)
    result = UncertaintyBenchmarkResult(z_by_M, random_z, skipped, X_test.shape[0])
    if all(z is None for M in sizes for z in z_by_M[M]):
        raise EmptyBenchmarkError("every image was skipped in the uncertainty benchmark")
    return result


# --- reports ------------------------------------------------------------------

@dataclass
class EvalReport:
    per_image: dict = field(default_factory=dict)   # column name -> list of values
    summary: dict = field(default_factory=dict)

    def write(self, directory, prefix: str = "report") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cols = list(self.per_image)
        n = max((len(v) for v in self.per_image.values()), default=0)
        with open(directory / f"{prefix}_per_image.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image", *cols])
            for i in range(n):
                w.writerow([i, *(_fmt(self.per_image[c][i]) if i < len(self.per_image[c]) else "" for c in cols)])
        (directory / f"{prefix}_summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))
