"""Bootstrap ensembles of explainers and per-feature confidence intervals."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import ContractError, as_matrix, parallel_map
from .explainer import explain, load_explainer, save_explainer, train_explainer
from .nn import TrainConfig

MANIFEST_SCHEMA = 1


class MemberTrainingError(RuntimeError):
    def __init__(self, member: int, cause: BaseException):
        super().__init__(f"ensemble member {member} failed: {cause}")
        self.member = member


def bootstrap_indices(N: int, rng_seed: int) -> np.ndarray:
    if N < 1:
        raise ContractError("bootstrap needs N >= 1")
    return np.random.default_rng(rng_seed).integers(0, N, size=N)


@dataclass
class BootstrapEnsemble:
    members: list
    master_seed: int
    indices: list = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ContractError("ensemble needs at least one member")
        g0 = self.members[0].grouping.to_dict()
        for m in self.members[1:]:
            if m.grouping.to_dict() != g0:
                raise ContractError("ensemble members disagree on feature grouping")

    @property
    def M(self) -> int:
        return len(self.members)

    @property
    def grouping(self):
        return self.members[0].grouping

    def subset(self, M: int) -> "BootstrapEnsemble":
        """First ``M`` members; identical to training an M-member ensemble with the same seed."""
        if not 1 <= M <= self.M:
            raise ContractError(f"cannot take {M} of {self.M} members")
        return replace(self, members=self.members[:M], indices=self.indices[:M])


def train_ensemble(X, omega, M: int, config: TrainConfig, master_seed: int,
                   validation_fraction: float = 0.1, threads: int | None = 1,
                   **explainer_kwargs) -> BootstrapEnsemble:
    """Member ``m`` trains on a with-replacement resample drawn with seed ``master_seed + m``."""
    if M < 1:
        raise ContractError("ensemble size M must be >= 1")
    X = as_matrix(X)
    omega = np.asarray(omega, dtype=np.float64)
    N = X.shape[0]

    def fit(m):
        seed = master_seed + m
        idx = bootstrap_indices(N, seed)
        try:
            member = train_explainer(X[idx], omega[idx], replace(config, seed=seed),
                                     validation_fraction, **explainer_kwargs)
        except Exception as exc:  # noqa: BLE001 - tagged with the member index
            raise MemberTrainingError(m, exc) from exc
        return member, idx

    results = parallel_map(fit, range(M), threads)
    return BootstrapEnsemble([r[0] for r in results], master_seed, [r[1] for r in results])


@dataclass
class AttributionWithCI:
    median: np.ndarray       # re-normalised onto the simplex
    raw_median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    gamma: float

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def _renormalise(med):
    total = med.sum(axis=-1, keepdims=True)
    p = med.shape[-1]
    return np.where(total > 0, med / np.where(total > 0, total, 1.0), 1.0 / p)


def aggregate(values, gamma: float) -> AttributionWithCI:
    """Median and central ``gamma`` interval over axis 0 (the member axis).

    Quantiles use sorted linear interpolation at position ``(M - 1) q``.
    """
    if not 0.0 < gamma < 1.0:
        raise ContractError("gamma must lie in (0, 1)")
    values = np.asarray(values, dtype=np.float64)
    alpha = 1.0 - gamma
    lower, med, upper = np.quantile(values, [alpha / 2, 0.5, 1 - alpha / 2], axis=0, method="linear")
    return AttributionWithCI(_renormalise(med), med, lower, upper, gamma)


def member_attributions(ensemble: BootstrapEnsemble, X, threads: int | None = 1) -> np.ndarray:
    """Array of shape (M, n, p)."""
    X = as_matrix(X)
    return np.stack(parallel_map(lambda m: explain(m, X), ensemble.members, threads))


def ensemble_attribute(ensemble: BootstrapEnsemble, x_row, gamma: float = 0.9) -> AttributionWithCI:
    """CI for one input row (batched inputs give per-row arrays)."""
    x = np.asarray(x_row, dtype=np.float64)
    res = aggregate(member_attributions(ensemble, x), gamma)
    if x.ndim == 1:
        res = AttributionWithCI(res.median[0], res.raw_median[0], res.lower[0], res.upper[0], gamma)
    return res


# --- persistence -------------------------------------------------------------

def _digest(idx) -> str:
    return hashlib.sha256(np.asarray(idx, dtype="<i8").tobytes()).hexdigest()


def save_ensemble(ensemble: BootstrapEnsemble, directory, gamma: float = 0.9) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for m, member in enumerate(ensemble.members):
        name = f"member_{m:03d}.json"
        save_explainer(member, directory / name)
        files.append(name)
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "M": ensemble.M,
        "master_seed": ensemble.master_seed,
        "gamma": gamma,
        "members": files,
        "resample_digests": [_digest(i) for i in ensemble.indices],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_ensemble(directory) -> BootstrapEnsemble:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("schema_version") != MANIFEST_SCHEMA:
        raise ContractError(
            f"ensemble manifest version {manifest.get('schema_version')} unsupported (expected {MANIFEST_SCHEMA})"
        )
    members = [load_explainer(directory / f) for f in manifest["members"]]
    if len(members) != manifest["M"]:
        raise ContractError("manifest member count disagrees with M")
    return BootstrapEnsemble(members, manifest["master_seed"], [])
