"""Run configuration: one JSON document plus ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .nn import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    kind: str = "patch_images"   # patch_images | single_informative | additive_logit | idx | csv
    n: int = 3000
    p: int = 8
    height: int = 28
    width: int = 28
    weights: list | None = None
    images_path: str | None = None
    labels_path: str | None = None
    test_images_path: str | None = None
    test_labels_path: str | None = None
    class_a: int = 8
    class_b: int = 3
    csv_path: str | None = None
    target_cols: int = 1
    test_fraction: float = 0.2
    fallback_to_synthetic: bool = True


@dataclass
class GroupingConfig:
    kind: str = "grid"   # grid | identity
    patch_h: int = 4
    patch_w: int = 4


@dataclass
class TargetModelConfig:
    kind: str = "builtin"   # builtin | analytic | bridge
    hidden: list = field(default_factory=lambda: [128, 64, 32])
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 32
    patience: int | None = 5
    analytic: dict = field(default_factory=dict)
    command: list | None = None
    timeout: float = 30.0


@dataclass
class ExplainerConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 32
    patience: int | None = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    validation_fraction: float = 0.1

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(hidden=tuple(self.hidden), learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, seed=seed, beta1=self.beta1, beta2=self.beta2,
                           adam_eps=self.adam_eps, patience=self.patience)


@dataclass
class EnsembleConfig:
    M: int = 5
    gamma: float = 0.9


@dataclass
class EvaluationConfig:
    q: float = 0.1
    n_images: int = 100
    top_fraction: float = 0.025
    M_values: list = field(default_factory=lambda: [5, 10, 20])
    filter_order: str = "positive_first"
    min_features: int = 2
    masking: str | None = None   # defaults to the target-precomputation strategy
    uncertainty_grouping: GroupingConfig = field(default_factory=lambda: GroupingConfig("identity", 1, 1))
    uncertainty_train_size: int | None = 1000
    uncertainty_epochs: int | None = None
    run_logodds: bool = True
    run_uncertainty: bool = True


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    masking: str = "zero"   # zero | mean
    loss: str = "auto"      # auto | mse | categorical_crossentropy | binary_crossentropy
    negative_delta: str = "floor"
    target_model: TargetModelConfig = field(default_factory=TargetModelConfig)
    explainer: ExplainerConfig = field(default_factory=ExplainerConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        d, g, e = self.dataset, self.grouping, self.evaluation
        _choice("dataset.kind", d.kind, ("patch_images", "single_informative", "additive_logit", "idx", "csv"))
        _choice("grouping.kind", g.kind, ("grid", "identity"))
        _choice("evaluation.uncertainty_grouping.kind", e.uncertainty_grouping.kind, ("grid", "identity"))
        _choice("masking", self.masking, ("zero", "mean"))
        if e.masking is not None:
            _choice("evaluation.masking", e.masking, ("zero", "mean"))
        _choice("loss", self.loss, ("auto", "mse", "categorical_crossentropy", "binary_crossentropy"))
        _choice("negative_delta", self.negative_delta, ("floor", "abs"))
        _choice("target_model.kind", self.target_model.kind, ("builtin", "analytic", "bridge"))
        _choice("evaluation.filter_order", e.filter_order, ("positive_first", "top_first"))
        if d.kind == "idx" and not (d.images_path and d.labels_path) and not d.fallback_to_synthetic:
            raise ConfigError("dataset.kind=idx needs images_path and labels_path")
        if d.kind == "csv" and not d.csv_path:
            raise ConfigError("dataset.kind=csv needs csv_path")
        if self.target_model.kind == "bridge" and not self.target_model.command:
            raise ConfigError("target_model.kind=bridge needs a command")
        if not 0 < d.test_fraction < 1:
            raise ConfigError("dataset.test_fraction must lie in (0, 1)")
        if not 0 < e.q < 1 or not 0 < e.top_fraction < 1:
            raise ConfigError("evaluation.q and evaluation.top_fraction must lie in (0, 1)")
        if not 0 < self.ensemble.gamma < 1:
            raise ConfigError("ensemble.gamma must lie in (0, 1)")
        if self.ensemble.M < 1 or any(int(m) < 1 for m in e.M_values):
            raise ConfigError("ensemble sizes must be >= 1")
        if not 0 <= self.explainer.validation_fraction <= 0.5:
            raise ConfigError("explainer.validation_fraction must lie in [0, 0.5]")
        if self.explainer.learning_rate <= 0 or self.explainer.batch_size < 1:
            raise ConfigError("explainer learning_rate must be > 0 and batch_size >= 1")
        return self


def _choice(key, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{key}={value!r}; expected one of {allowed}")


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(path + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(data: dict, overrides) -> dict:
    data = json.loads(json.dumps(data))
    for text in overrides or []:
        key, value = parse_override(text)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {part} is not an object")
        node[parts[-1]] = value
    return data


def load_config(path=None, overrides=None) -> RunConfig:
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        cfg = _build(RunConfig, apply_overrides(data, overrides))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
