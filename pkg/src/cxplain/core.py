"""Shared data model: losses, the black-box model contract, simplex checks."""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass

import numpy as np

SIMPLEX_TOL = 1e-6


class ContractError(ValueError):
    """Raised when an input violates an operation's preconditions."""


def as_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ContractError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ContractError(f"{name} contains non-finite values")
    return X


def check_simplex(A, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate that every row of ``A`` lies on the probability simplex."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if np.any(A < 0):
        raise ContractError("attribution has negative entries")
    sums = A.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ContractError(f"attribution rows do not sum to 1 (max dev {np.max(np.abs(sums - 1)):.3g})")
    return A


# --- losses -----------------------------------------------------------------

def _pair(y, p):
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise ContractError(f"length mismatch: target {y.shape} vs prediction {p.shape}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(p))):
        raise ContractError("loss inputs must be finite")
    return y, p


def loss_mse(y_row, p_row) -> float:
    y, p = _pair(y_row, p_row)
    return float(np.mean((y - p) ** 2))


def _check_onehot(y):
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ContractError("categorical crossentropy requires one-hot targets")


def loss_categorical_crossentropy(y_onehot, p_row, eps: float = 1e-12) -> float:
    y, p = _pair(y_onehot, p_row)
    _check_onehot(y)
    return float(-np.sum(y * np.log(np.clip(p, eps, 1.0))))


def loss_binary_crossentropy(y, p, eps: float = 1e-12) -> float:
    y, p = _pair(y, p)
    if not np.all((y == 0) | (y == 1)):
        raise ContractError(f"binary crossentropy requires y in {{0,1}}, got {y}")
    p = np.clip(p, eps, 1.0 - eps)
    return float(np.sum(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


LOSS_KINDS = ("mse", "categorical_crossentropy", "binary_crossentropy")


@dataclass(frozen=True)
class LossFunction:
    """Per-sample loss ``L(y, y_hat)``.

    ``batch`` evaluates the loss row-wise over matching ``(n, k)`` arrays and
    is what the target precomputation uses; ``__call__`` handles one sample.
    """

    kind: str = "mse"
    eps: float = 1e-12

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ContractError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")

    def __call__(self, y_row, p_row) -> float:
        if self.kind == "mse":
            return loss_mse(y_row, p_row)
        if self.kind == "categorical_crossentropy":
            return loss_categorical_crossentropy(y_row, p_row, self.eps)
        return loss_binary_crossentropy(y_row, p_row, self.eps)

    def batch(self, Y, P) -> np.ndarray:
        Y, P = _pair(np.atleast_2d(Y), np.atleast_2d(P))
        if self.kind == "mse":
            return np.mean((Y - P) ** 2, axis=1)
        if self.kind == "categorical_crossentropy":
            _check_onehot(Y)
            return -np.sum(Y * np.log(np.clip(P, self.eps, 1.0)), axis=1)
        if not np.all((Y == 0) | (Y == 1)):
            raise ContractError("binary crossentropy requires targets in {0,1}")
        P = np.clip(P, self.eps, 1.0 - self.eps)
        return np.sum(-(Y * np.log(P) + (1 - Y) * np.log(1 - P)), axis=1)


# --- black-box model contract ----------------------------------------------

class BlackBoxModel:
    """Any deterministic ``predict(n x d) -> n x k`` function.

    Subclasses implement ``_predict``. The public ``predict`` validates the
    input and advances an atomic counter of sample-evaluations served. Set
    ``serial = True`` on implementations that cannot take concurrent calls;
    ``predict`` then holds a lock for the whole request.
    """

    serial = False
    name = "model"

    def __init__(self):
        self._count = 0
        self._count_lock = threading.Lock()
        self._call_lock = threading.Lock()

    @property
    def evaluations(self) -> int:
        return self._count

    def reset_counter(self) -> None:
        with self._count_lock:
            self._count = 0

    def predict(self, X) -> np.ndarray:
        X = as_matrix(X)
        if self.serial:
            with self._call_lock:
                out = self._predict(X)
        else:
            out = self._predict(X)
        out = np.asarray(out, dtype=np.float64)
        if out.ndim == 1:
            out = out[:, None]
        if out.shape[0] != X.shape[0]:
            raise ContractError(f"model returned {out.shape[0]} rows for {X.shape[0]} inputs")
        with self._count_lock:
            self._count += X.shape[0]
        return out

    __call__ = predict

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name}

    def fingerprint(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class FunctionModel(BlackBoxModel):
    """Wrap a plain callable as a counted black box."""

    def __init__(self, fn, name: str = "function"):
        super().__init__()
        self.fn = fn
        self.name = name

    def _predict(self, X):
        return self.fn(X)


def default_threads() -> int:
    import os

    try:
        return max(1, int(os.environ.get("CXPLAIN_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items, threads: int | None = None) -> list:
    """Order-preserving map over a thread pool; ``threads <= 1`` runs inline."""
    items = list(items)
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
