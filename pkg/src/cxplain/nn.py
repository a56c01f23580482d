"""Small numpy MLP engine: dense layers, softmax/sigmoid heads, backprop, Adam."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ContractError, as_matrix

SCHEMA_VERSION = 1
LOG_FLOOR = 1e-12
ACTIVATIONS = ("relu", "identity")
HEADS = ("softmax", "sigmoid")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, max_abs_param: float):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (max |param| = {max_abs_param:.3g})"
        )
        self.epoch = epoch
        self.batch = batch
        self.max_abs_param = max_abs_param


class SchemaVersionError(ValueError):
    pass


@dataclass
class MLPNetwork:
    weights: list
    biases: list
    activations: list
    head: str = "softmax"

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ContractError("layer lists differ in length")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ContractError(f"unknown activation {a!r}")
        if self.head not in HEADS:
            raise ContractError(f"unknown head {self.head!r}")
        for W, W_next in zip(self.weights, self.weights[1:]):
            if W.shape[1] != W_next.shape[0]:
                raise ContractError("adjacent layer sizes are incompatible")
        for W, b in zip(self.weights, self.biases):
            if b.shape != (W.shape[1],):
                raise ContractError("bias shape does not match weight matrix")

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.d] + [W.shape[1] for W in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.params())

    def with_params(self, params) -> "MLPNetwork":
        return replace(self, weights=list(params[0::2]), biases=list(params[1::2]))

    def max_abs_param(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.params())

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "layer_sizes": self.layer_sizes,
            "activations": list(self.activations),
            "head": self.head,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MLPNetwork":
        version = data["schema_version"]
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"network schema version {version} is not supported (expected {SCHEMA_VERSION})"
            )
        weights = [np.array(W, dtype=np.float64) for W in data["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in data["biases"]]
        sizes = [weights[0].shape[0]] + [W.shape[1] for W in weights]
        if sizes != list(data["layer_sizes"]):
            raise ContractError(f"layer_sizes {data['layer_sizes']} disagree with weights {sizes}")
        return cls(weights, biases, list(data["activations"]), data.get("head", "softmax"))


def init_network(d: int, hidden, p: int, seed: int, head: str = "softmax") -> MLPNetwork:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    if head == "softmax" and p < 2:
        raise ContractError("softmax head needs at least 2 outputs")
    rng = np.random.default_rng(seed)
    sizes = [d, *hidden, p]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    acts = ["relu"] * len(hidden) + ["identity"]
    return MLPNetwork(weights, biases, acts, head)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else z


def logits(net: MLPNetwork, X) -> np.ndarray:
    return _forward_cache(net, X)[0][-1]


def _forward_cache(net, X):
    X = as_matrix(X)
    if X.shape[1] != net.d:
        raise ContractError(f"input has {X.shape[1]} features, network expects {net.d}")
    a = X
    acts, pre = [X], []
    for W, b, name in zip(net.weights, net.biases, net.activations):
        z = a @ W + b
        a = _act(name, z)
        pre.append(z)
        acts.append(a)
    return pre, acts


def _head(net, z):
    return softmax(z) if net.head == "softmax" else sigmoid(z)


def forward(net: MLPNetwork, X) -> np.ndarray:
    pre, _ = _forward_cache(net, X)
    return _head(net, pre[-1])


def kl_loss(omega, a_hat) -> float | np.ndarray:
    """KL(omega || a_hat); row-wise when given matrices. 0 * log 0 is 0."""
    omega = np.asarray(omega, dtype=np.float64)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(omega > 0, omega * (np.log(np.where(omega > 0, omega, 1.0))
                                             - np.log(np.maximum(a_hat, LOG_FLOOR))), 0.0)
    out = terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def backward(net: MLPNetwork, X_batch, targets) -> list[np.ndarray]:
    """Gradients of the batch-mean objective, ordered like ``net.params()``.

    With a softmax head the objective is mean KL(target || output); with a
    sigmoid head it is mean binary crossentropy. In both cases the gradient
    at the logits is ``(output - target) / batch_size``.
    """
    return loss_and_grads(net, X_batch, targets)[1]


def loss_and_grads(net: MLPNetwork, X_batch, targets, objective=kl_loss):
    pre, acts = _forward_cache(net, X_batch)
    T = np.asarray(targets, dtype=np.float64)
    n = T.shape[0]
    if n == 0:
        raise ContractError("empty batch")
    out = _head(net, pre[-1])
    loss = float(np.mean(objective(T, out)))
    dz = (out - T) / n
    grads = [None] * (2 * len(net.weights))
    for layer in range(len(net.weights) - 1, -1, -1):
        grads[2 * layer] = acts[layer].T @ dz
        grads[2 * layer + 1] = dz.sum(axis=0)
        if layer > 0:
            da = dz @ net.weights[layer].T
            dz = da * (pre[layer - 1] > 0) if net.activations[layer - 1] == "relu" else da
    return loss, grads


# --- optimisation ------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (64, 64)
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int | None = 20

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning rate must be positive")
        if self.batch_size < 1:
            raise ContractError("batch size must be >= 1")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, net: MLPNetwork) -> "AdamState":
        return cls([np.zeros_like(a) for a in net.params()], [np.zeros_like(a) for a in net.params()], 0)


def adam_step(net: MLPNetwork, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns a new network and state."""
    b1, b2 = config.beta1, config.beta2
    t = state.t + 1
    params = net.params()
    if len(grads) != len(params):
        raise ContractError("gradient list does not match parameters")
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ContractError("gradient shape mismatch")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        new_p.append(p - config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return net.with_params(new_p), AdamState(new_m, new_v, t)


@dataclass
class TrainResult:
    network: MLPNetwork
    history: dict = field(default_factory=dict)
    best_epoch: int = 0


def train_network(net: MLPNetwork, X, T, config: TrainConfig, X_val=None, T_val=None,
                  objective=kl_loss) -> TrainResult:
    """Mini-batch Adam on ``objective`` with best-epoch checkpointing.

    ``history["train"][0]`` is the loss before the first update. The monitor
    for checkpointing and early stopping is the validation loss when a
    validation set is given, otherwise the training loss.
    """
    X = as_matrix(X)
    T = np.asarray(T, dtype=np.float64)
    has_val = X_val is not None and len(X_val) > 0
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(net)

    def mean_loss(Xs, Ts):
        return float(np.mean(objective(Ts, forward(net, Xs))))

    history = {"train": [mean_loss(X, T)]}
    if has_val:
        history["validation"] = [mean_loss(X_val, T_val)]
    monitor = "validation" if has_val else "train"
    best, best_net, best_epoch, stale = history[monitor][0], net, 0, 0
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for b, s in enumerate(range(0, n, config.batch_size)):
            idx = order[s:s + config.batch_size]
            loss, grads = loss_and_grads(net, X[idx], T[idx], objective)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(epoch, b, net.max_abs_param())
            net, state = adam_step(net, grads, state, config)
        history["train"].append(mean_loss(X, T))
        if has_val:
            history["validation"].append(mean_loss(X_val, T_val))
        current = history[monitor][-1]
        if not math.isfinite(current):
            raise TrainingDivergedError(epoch, -1, net.max_abs_param())
        if current < best:
            best, best_net, best_epoch, stale = current, net, epoch, 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    return TrainResult(best_net, history, best_epoch)


def dumps_network(net: MLPNetwork) -> str:
    return json.dumps(net.to_dict())


def loads_network(text: str) -> MLPNetwork:
    return MLPNetwork.from_dict(json.loads(text))
