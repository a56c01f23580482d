"""Target models to be explained."""

from __future__ import annotations

import hashlib
import json
import queue
import subprocess
import sys
import threading

import numpy as np

from .core import BlackBoxModel, ContractError, LossFunction, as_matrix
from .nn import MLPNetwork, TrainConfig, forward, init_network, sigmoid, train_network


# --- analytic models ---------------------------------------------------------

class AnalyticModel(BlackBoxModel):
    """Closed-form models used as oracles in tests and synthetic benchmarks.

    kinds:
      constant        -> c (k=1)
      select_feature  -> x_j (k=1)
      sigmoid_linear  -> sigmoid(w . x + b); with ``two_class`` the output is
                         [1 - s, s] so it can be scored with categorical CE.
    """

    def __init__(self, kind: str, **params):
        super().__init__()
        self.kind = kind
        self.params = params
        if kind == "constant":
            self.c = float(params.get("c", 0.0))
        elif kind == "select_feature":
            self.j = int(params.get("j", 0))
        elif kind == "sigmoid_linear":
            self.w = np.asarray(params["w"], dtype=np.float64)
            self.b = float(params.get("b", 0.0))
            self.two_class = bool(params.get("two_class", False))
            if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
                raise ContractError("sigmoid_linear parameters must be finite")
        else:
            raise ContractError(f"unknown analytic model kind {kind!r}")
        self.name = f"analytic:{kind}"

    def _predict(self, X):
        if self.kind == "constant":
            return np.full((X.shape[0], 1), self.c)
        if self.kind == "select_feature":
            return X[:, [self.j]].copy()
        if X.shape[1] != self.w.size:
            raise ContractError(f"input has {X.shape[1]} features, weights have {self.w.size}")
        s = sigmoid(X @ self.w + self.b)
        if self.two_class:
            return np.stack([1.0 - s, s], axis=1)
        return s[:, None]

    def describe(self):
        params = {k: (np.asarray(v).tolist() if isinstance(v, (list, np.ndarray)) else v)
                  for k, v in self.params.items()}
        return {"name": self.name, "params": params}


def analytic_model(kind: str, **params) -> AnalyticModel:
    return AnalyticModel(kind, **params)


# --- built-in classifier -----------------------------------------------------

class ClassifierTrainingError(RuntimeError):
    pass


class BuiltinClassifier(BlackBoxModel):
    def __init__(self, network: MLPNetwork, classes=None, metadata: dict | None = None):
        super().__init__()
        self.network = network
        self.classes = list(classes) if classes is not None else list(range(network.out_width))
        self.metadata = dict(metadata or {})
        self.name = "builtin_mlp"

    @property
    def accuracy(self) -> float | None:
        return self.metadata.get("test_accuracy")

    def _predict(self, X):
        return forward(self.network, X)

    def describe(self):
        blob = json.dumps(self.network.to_dict()).encode()
        return {"name": self.name, "layers": self.network.layer_sizes,
                "weights_sha256": hashlib.sha256(blob).hexdigest()}

    def to_dict(self) -> dict:
        return {"network": self.network.to_dict(), "classes": self.classes, "metadata": self.metadata}

    @classmethod
    def from_dict(cls, data: dict) -> "BuiltinClassifier":
        return cls(MLPNetwork.from_dict(data["network"]), data["classes"], data.get("metadata"))


def accuracy(model: BlackBoxModel, X, y) -> float:
    P = model.predict(X)
    y = np.asarray(y, dtype=np.float64)
    if P.shape[1] == 1:
        return float(np.mean((P[:, 0] >= 0.5) == (y[:, 0] >= 0.5)))
    return float(np.mean(np.argmax(P, axis=1) == np.argmax(y, axis=1)))


def train_builtin_classifier(X, y, config: TrainConfig = TrainConfig(hidden=(128, 64, 32), epochs=30,
                                                                     patience=5),
                             test_fraction: float = 0.2, X_test=None, y_test=None) -> BuiltinClassifier:
    """Crossentropy-trained MLP; a seeded hold-out split reports accuracy.

    One-hot targets get a softmax head, a single 0/1 column a sigmoid head.
    If ``X_test`` is given it is used as the hold-out set instead of a split.
    """
    X = as_matrix(X)
    Y = np.asarray(y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ContractError("X and y row counts differ")
    k = Y.shape[1]
    head = "sigmoid" if k == 1 else "softmax"
    loss = LossFunction("binary_crossentropy" if k == 1 else "categorical_crossentropy")
    rng = np.random.default_rng(config.seed)
    if X_test is None:
        order = rng.permutation(X.shape[0])
        n_test = int(round(test_fraction * X.shape[0]))
        te, tr = order[:n_test], order[n_test:]
        X_tr, Y_tr, X_te, Y_te = X[tr], Y[tr], X[te], Y[te]
    else:
        X_tr, Y_tr = X, Y
        X_te = as_matrix(X_test)
        Y_te = np.asarray(y_test, dtype=np.float64).reshape(X_te.shape[0], -1)
    net = init_network(X.shape[1], config.hidden, k, config.seed, head=head)
    try:
        result = train_network(net, X_tr, Y_tr, config, objective=loss.batch)
    except Exception as exc:
        raise ClassifierTrainingError(f"classifier training failed: {exc}") from exc
    clf = BuiltinClassifier(result.network, metadata={"train_config": config.to_dict(),
                                                      "best_epoch": result.best_epoch})
    clf.metadata["train_accuracy"] = accuracy(clf, X_tr, Y_tr)
    clf.metadata["test_accuracy"] = accuracy(clf, X_te, Y_te) if len(X_te) else None
    clf.reset_counter()
    return clf


# --- external process bridge -------------------------------------------------

class BridgeError(RuntimeError):
    pass


class BridgeTimeoutError(BridgeError):
    pass


class BridgeProtocolError(BridgeError):
    pass


def _excerpt(text, limit=200):
    text = text if isinstance(text, str) else repr(text)
    return text if len(text) <= limit else text[:limit] + "..."


class ExternalModelBridge(BlackBoxModel):
    """Black box served by a child process over newline-delimited JSON on stdio.

    Handshake: ``{"op": "hello"}`` -> ``{"k": int, "name": str}``.
    Request: ``{"id": n, "op": "predict", "x": [[...], ...]}`` -> ``{"id": n, "y": [[...], ...]}``.
    """

    serial = True

    def __init__(self, command, timeout: float = 30.0):
        super().__init__()
        self.command = list(command)
        self.timeout = timeout
        self._next_id = 0
        self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                      text=True, bufsize=1)
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._send({"op": "hello"})
        hello = self._receive()
        if not isinstance(hello.get("k"), int) or not isinstance(hello.get("name"), str):
            raise BridgeProtocolError(f"bad handshake reply: {_excerpt(json.dumps(hello))}")
        self.k = hello["k"]
        self.name = f"bridge:{hello['name']}"

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _send(self, msg):
        try:
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            self.close()
            raise BridgeError(f"external model is not accepting requests: {exc}") from exc

    def _receive(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise BridgeTimeoutError(f"no reply from {self.command} within {self.timeout} s") from None
        if line is None:
            code = self._proc.poll()
            raise BridgeError(f"external model exited (code {code})")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"reply is not JSON: {_excerpt(line)}") from exc
        if not isinstance(msg, dict):
            raise BridgeProtocolError(f"reply is not an object: {_excerpt(line)}")
        return msg

    def _predict(self, X):
        req_id = self._next_id
        self._next_id += 1
        self._send({"id": req_id, "op": "predict", "x": X.tolist()})
        msg = self._receive()
        if msg.get("id") != req_id or "y" not in msg:
            raise BridgeProtocolError(f"unexpected reply to request {req_id}: {_excerpt(json.dumps(msg))}")
        try:
            Y = np.array(msg["y"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise BridgeProtocolError(f"non-numeric predictions: {_excerpt(json.dumps(msg['y']))}") from exc
        if Y.shape != (X.shape[0], self.k):
            raise BridgeProtocolError(f"expected {X.shape[0]}x{self.k} predictions, got shape {Y.shape}")
        return Y

    def describe(self):
        return {"name": self.name, "command": self.command}

    def close(self):
        if self._proc.poll() is None:
            self._proc.kill()
        self._proc.wait()
        for f in (self._proc.stdin, self._proc.stdout):
            try:
                f.close()
            except (OSError, ValueError):
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def reference_bridge_command(*extra) -> list[str]:
    return [sys.executable, "-m", "cxplain.reference_model", *extra]
