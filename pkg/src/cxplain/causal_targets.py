"""Granger-style causal importance targets via masked re-evaluation.

For every sample the target model is evaluated once on the full input and
once per feature group with that group masked. The loss increase caused by
masking group ``i`` is its causal contribution; normalising the (floored)
increases over groups gives the target distribution the explainer learns.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BlackBoxModel, ContractError, LossFunction, as_matrix, parallel_map
from .masking import FeatureGrouping, MaskingStrategy, masked_stack

# rows of masked inputs per model call
CHUNK_ROWS = 8192


class TargetComputationError(RuntimeError):
    def __init__(self, sample_index: int, cause: BaseException):
        super().__init__(f"target model failed on sample {sample_index}: {cause}")
        self.sample_index = sample_index


@dataclass(frozen=True)
class ErrorPair:
    eps_all: float
    eps_without: np.ndarray


def _chunks(n: int, p: int):
    per = max(1, CHUNK_ROWS // (p + 1))
    return [(s, min(n, s + per)) for s in range(0, n, per)]


def _masked_loss_matrix(model, loss, X, Y, grouping, strategy, threads):
    """Loss table of shape (N, p + 1); column 0 is the unmasked error."""
    p = grouping.p

    def run(span):
        s, e = span
        rows = masked_stack(X[s:e], grouping, strategy)
        try:
            pred = model.predict(rows)
        except Exception as exc:  # noqa: BLE001 - re-raised with the sample index
            raise TargetComputationError(s, exc) from exc
        targets = np.repeat(Y[s:e], p + 1, axis=0)
        if pred.shape != targets.shape:
            raise ContractError(f"model output shape {pred.shape[1:]} does not match targets {Y.shape[1:]}")
        return loss.batch(targets, pred).reshape(e - s, p + 1)

    if model.serial:
        threads = 1
    parts = parallel_map(run, _chunks(X.shape[0], p), threads)
    return np.concatenate(parts, axis=0)


def _validate(X, y, grouping):
    X = as_matrix(X)
    Y = np.asarray(y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ContractError(f"X has {X.shape[0]} rows but y has {Y.shape[0]}")
    if X.shape[1] != grouping.d:
        raise ContractError(f"X has {X.shape[1]} features, grouping expects {grouping.d}")
    return X, Y


def masked_errors(model: BlackBoxModel, loss: LossFunction, X, y, grouping: FeatureGrouping,
                  strategy: MaskingStrategy, threads: int | None = 1) -> list[ErrorPair]:
    X, Y = _validate(X, y, grouping)
    table = _masked_loss_matrix(model, loss, X, Y, grouping, strategy, threads)
    return [ErrorPair(float(r[0]), r[1:].copy()) for r in table]


def delta_eps(pair: ErrorPair) -> np.ndarray:
    return np.asarray(pair.eps_without, dtype=np.float64) - pair.eps_all


def normalize_omega(delta, negative_delta: str = "floor") -> np.ndarray:
    """Map loss increases onto the simplex; all-zero rows become uniform.

    Works on a single vector or row-wise on a matrix.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if negative_delta == "floor":
        pos = np.maximum(delta, 0.0)
    elif negative_delta == "abs":
        pos = np.abs(delta)
    else:
        raise ContractError(f"negative_delta must be 'floor' or 'abs', got {negative_delta!r}")
    total = pos.sum(axis=-1, keepdims=True)
    p = delta.shape[-1]
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, pos / safe, 1.0 / p)


def precompute_targets(model: BlackBoxModel, loss: LossFunction, X, y, grouping: FeatureGrouping,
                       strategy: MaskingStrategy, negative_delta: str = "floor",
                       threads: int | None = 1) -> np.ndarray:
    """Omega matrix (N x p); costs exactly N(p + 1) target-model evaluations."""
    X, Y = _validate(X, y, grouping)
    table = _masked_loss_matrix(model, loss, X, Y, grouping, strategy, threads)
    return normalize_omega(table[:, 1:] - table[:, :1], negative_delta)


# --- persistence -------------------------------------------------------------

def save_omega(path, omega, metadata: dict) -> None:
    """Write Omega as CSV plus a ``<name>.meta.json`` sidecar."""
    path = Path(path)
    omega = np.atleast_2d(np.asarray(omega, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"omega_{i}" for i in range(omega.shape[1])])
        for row in omega:
            w.writerow([repr(float(v)) for v in row])
    meta_path(path).write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def load_omega(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not all(h.startswith("omega_") for h in rows[0]):
        raise ContractError(f"{path}: missing omega header")
    p = len(rows[0])
    values = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != p:
            raise ContractError(f"{path}:{lineno}: expected {p} columns, got {len(r)}")
        values.append([float(v) for v in r])
    omega = np.array(values, dtype=np.float64).reshape(-1, p)
    mp = meta_path(path)
    meta = json.loads(mp.read_text()) if mp.exists() else {}
    return omega, meta
