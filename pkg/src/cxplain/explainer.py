"""Train an explanation network on precomputed causal targets and apply it."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .causal_targets import precompute_targets
from .core import ContractError, as_matrix, check_simplex
from .masking import FeatureGrouping, MaskingStrategy, identity_grouping
from .nn import MLPNetwork, SchemaVersionError, TrainConfig, forward, init_network, kl_loss, train_network

EXPLAINER_SCHEMA = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class ExplainerModel:
    network: MLPNetwork
    grouping: FeatureGrouping
    strategy: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grouping.p != self.network.out_width:
            raise ContractError(
                f"grouping has {self.grouping.p} groups but network emits {self.network.out_width}"
            )

    @property
    def p(self) -> int:
        return self.grouping.p

    def to_dict(self) -> dict:
        return {
            "schema_version": EXPLAINER_SCHEMA,
            "network": self.network.to_dict(),
            "grouping": self.grouping.to_dict(),
            "strategy": self.strategy,
            "history": self.history,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExplainerModel":
        version = data.get("schema_version")
        if version != EXPLAINER_SCHEMA:
            raise SchemaVersionError(
                f"explainer schema version {version} is not supported (expected {EXPLAINER_SCHEMA})"
            )
        return cls(
            network=MLPNetwork.from_dict(data["network"]),
            grouping=FeatureGrouping.from_dict(data["grouping"]),
            strategy=data.get("strategy", {}),
            history=data.get("history", {}),
            provenance=data.get("provenance", {}),
        )


def validation_split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle; the last ceil(fraction * n) positions are validation."""
    if not 0.0 <= fraction <= 0.5:
        raise ContractError("validation_fraction must lie in [0, 0.5]")
    order = np.random.default_rng(seed).permutation(n)
    n_val = math.ceil(fraction * n) if fraction > 0 else 0
    if n_val >= n:
        n_val = n - 1
    return np.sort(order[:n - n_val]), np.sort(order[n - n_val:])


def train_explainer(X, omega, config: TrainConfig = TrainConfig(), validation_fraction: float = 0.1,
                    grouping: FeatureGrouping | None = None, strategy: MaskingStrategy | dict | None = None,
                    provenance: dict | None = None) -> ExplainerModel:
    """Fit an MLP explainer to ``omega`` by minimising the mean KL divergence.

    Returns the parameters of the epoch with the lowest validation KL (or
    training KL when ``validation_fraction`` is 0).
    """
    X = as_matrix(X)
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim != 2 or omega.shape[0] != X.shape[0]:
        raise ContractError(f"X has {X.shape[0]} rows but omega has shape {omega.shape}")
    check_simplex(omega)
    p = omega.shape[1]
    if grouping is None:
        grouping = identity_grouping(p)
    tr, va = validation_split(X.shape[0], validation_fraction, config.seed)
    net = init_network(X.shape[1], config.hidden, p, config.seed)
    result = train_network(net, X[tr], omega[tr], config,
                           X[va] if va.size else None, omega[va] if va.size else None, objective=kl_loss)
    if isinstance(strategy, MaskingStrategy):
        strategy = {"kind": strategy.kind}
    prov = dict(provenance or {})
    prov.update({"seed": config.seed, "train_config": config.to_dict(),
                 "validation_fraction": validation_fraction, "validation_size": int(va.size),
                 "best_epoch": result.best_epoch})
    return ExplainerModel(result.network, grouping, dict(strategy or {}), result.history, prov)


def explain(model: ExplainerModel, X) -> np.ndarray:
    X = as_matrix(X)
    if X.shape[1] != model.network.d:
        raise ContractError(f"input has {X.shape[1]} features, explainer expects {model.network.d}")
    return forward(model.network, X)


def save_explainer(model: ExplainerModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def load_explainer(path) -> ExplainerModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"explainer file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a valid explainer file ({exc})") from exc
    if not isinstance(data, dict):
        raise ModelFormatError(f"{path}: not a valid explainer file")
    try:
        return ExplainerModel.from_dict(data)
    except SchemaVersionError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelFormatError(f"{path}: malformed explainer ({exc})") from exc


def direct_omega_attribution(model, loss, X, y, grouping, strategy, threads=1) -> np.ndarray:
    """Use the causal targets themselves as the explanation (labels required)."""
    return precompute_targets(model, loss, X, y, grouping, strategy, threads=threads)
