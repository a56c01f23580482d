import math
import sys
import time

import numpy as np
import pytest

from cxplain.causal_targets import precompute_targets
from cxplain.core import ContractError, LossFunction
from cxplain.masking import MaskingStrategy, identity_grouping
from cxplain.models import (
    AnalyticModel,
    BridgeError,
    BridgeProtocolError,
    BridgeTimeoutError,
    BuiltinClassifier,
    ExternalModelBridge,
    accuracy,
    analytic_model,
    reference_bridge_command,
    train_builtin_classifier,
)
from cxplain.nn import TrainConfig


class TestAnalytic:
    def test_constant(self, rng):
        out = analytic_model("constant", c=0.25).predict(rng.normal(size=(3, 4)))
        np.testing.assert_array_equal(out, np.full((3, 1), 0.25))

    def test_select_feature(self):
        out = analytic_model("select_feature", j=1).predict([[1.0, 2.0, 3.0]])
        assert out.tolist() == [[2.0]]

    def test_sigmoid(self):
        m = analytic_model("sigmoid_linear", w=[4.0, 0.0], b=-2.0)
        assert m.predict([[1.0, 5.0]])[0, 0] == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
        assert m.predict([[1.0, 5.0]])[0, 0] == pytest.approx(0.880797, abs=1e-6)

    def test_two_class_rows_sum_to_one(self, rng):
        m = analytic_model("sigmoid_linear", w=rng.normal(size=3), b=0.2, two_class=True)
        np.testing.assert_allclose(m.predict(rng.normal(size=(5, 3))).sum(axis=1), 1.0)

    def test_bad_kind_and_params(self):
        with pytest.raises(ContractError):
            AnalyticModel("spline")
        with pytest.raises(ContractError):
            analytic_model("sigmoid_linear", w=[np.nan], b=0.0)

    def test_counter(self, rng):
        m = analytic_model("select_feature", j=0)
        m.predict(rng.normal(size=(3, 2)))
        m.predict(rng.normal(size=(1, 2)))
        assert m.evaluations == 4
        m.reset_counter()
        assert m.evaluations == 0

    def test_fingerprint_depends_on_params(self):
        a = analytic_model("sigmoid_linear", w=[1.0], b=0.0)
        b = analytic_model("sigmoid_linear", w=[1.0], b=0.5)
        assert a.fingerprint() != b.fingerprint()
        assert a.fingerprint() == analytic_model("sigmoid_linear", w=[1.0], b=0.0).fingerprint()


@pytest.fixture(scope="module")
def blobs():
    rng = np.random.default_rng(0)
    n = 200
    labels = rng.integers(0, 2, size=n)
    X = rng.normal(size=(n, 2)) + 6.0 * labels[:, None] * np.array([1.0, 0.0])
    Y = np.eye(2)[labels]
    return X, Y


class TestBuiltinClassifier:
    def test_separable_blobs(self, blobs):
        X, Y = blobs
        clf = train_builtin_classifier(X, Y, TrainConfig(hidden=(16,), epochs=100, patience=None, seed=1))
        assert clf.evaluations == 0
        # held-out split recorded at training time
        assert clf.accuracy == 1.0
        assert accuracy(clf, X, Y) >= 0.98

    def test_binary_column_uses_sigmoid(self, blobs):
        X, Y = blobs
        clf = train_builtin_classifier(X, Y[:, 1:], TrainConfig(hidden=(16,), epochs=100, patience=None, seed=1))
        assert clf.network.head == "sigmoid"
        assert clf.predict(X).shape == (200, 1)
        assert clf.accuracy == 1.0

    def test_round_trip(self, blobs):
        X, Y = blobs
        clf = train_builtin_classifier(X, Y, TrainConfig(hidden=(8,), epochs=3))
        back = BuiltinClassifier.from_dict(clf.to_dict())
        assert np.array_equal(back.predict(X), clf.predict(X))
        assert back.fingerprint() == clf.fingerprint()

    def test_deterministic(self, blobs):
        X, Y = blobs
        cfg = TrainConfig(hidden=(8,), epochs=5, seed=4)
        a, b = train_builtin_classifier(X, Y, cfg), train_builtin_classifier(X, Y, cfg)
        assert a.fingerprint() == b.fingerprint()


class TestBridge:
    def test_handshake_and_equivalence(self, rng):
        X = rng.normal(size=(20, 3))
        with ExternalModelBridge(reference_bridge_command()) as bridge:
            assert bridge.k == 1 and "echo_first_feature" in bridge.name
            np.testing.assert_allclose(bridge.predict(X), analytic_model("select_feature", j=0).predict(X),
                                       rtol=0, atol=1e-9)

    def test_sigmoid_reference(self, rng):
        w, b = [0.5, -1.5, 2.0], 0.25
        X = rng.normal(size=(10, 3))
        with ExternalModelBridge(reference_bridge_command("--sigmoid", "0.5,-1.5,2.0", "0.25")) as bridge:
            np.testing.assert_allclose(bridge.predict(X), analytic_model("sigmoid_linear", w=w, b=b).predict(X),
                                       rtol=0, atol=1e-9)

    def test_counter_and_targets(self, rng):
        X = rng.uniform(size=(6, 3))
        y = X[:, :1] + 0.1
        ref = analytic_model("select_feature", j=0)
        loss, g, s = LossFunction("mse"), identity_grouping(3), MaskingStrategy.zero()
        with ExternalModelBridge(reference_bridge_command()) as bridge:
            bridge.predict(X[:4])
            assert bridge.evaluations == 4
            bridge.reset_counter()
            omega = precompute_targets(bridge, loss, X, y, g, s, threads=4)
            assert bridge.evaluations == 6 * 4
        np.testing.assert_allclose(omega, precompute_targets(ref, loss, X, y, g, s), atol=1e-9)

    def test_timeout_kills_process(self):
        bridge = ExternalModelBridge(reference_bridge_command("--hang"), timeout=0.5)
        start = time.monotonic()
        with pytest.raises(BridgeTimeoutError):
            bridge.predict(np.zeros((1, 2)))
        assert time.monotonic() - start < 5
        assert bridge._proc.poll() is not None
        with pytest.raises(BridgeError):
            bridge.predict(np.zeros((1, 2)))

    def test_garbage_reply(self):
        with ExternalModelBridge(reference_bridge_command("--garbage"), timeout=5) as bridge:
            with pytest.raises(BridgeProtocolError, match="not JSON"):
                bridge.predict(np.zeros((1, 2)))

    def test_process_that_exits(self):
        with pytest.raises(BridgeError):
            ExternalModelBridge([sys.executable, "-c", "pass"], timeout=5)
