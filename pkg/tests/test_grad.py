import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsteer.encoding import Defense, EncoderSpec, EncodingKind
from qsteer.grad import NumericalError, TrainConfig, input_grad, loss, param_grad, train, write_curve
from qsteer.models import ModelSpec, QuanvolutionClassifier, build_model

from toys import AngleParity, Constant, Logistic, separable


@pytest.fixture(scope="module")
def vqc():
    model = build_model(ModelSpec.default("vqc"))
    return model, model.init_params(np.random.default_rng(7))


@pytest.fixture(scope="module")
def qnn():
    model = QuanvolutionClassifier(ModelSpec.default("qnn", seed=4))
    return model, model.init_params(np.random.default_rng(8))


class TestLoss:
    @pytest.mark.parametrize("k", [2, 3, 10])
    def test_uniform_logits(self, k):
        assert loss(np.zeros(k), 0) == pytest.approx(math.log(k), abs=1e-15)

    def test_confident_limit(self):
        assert loss([0.0, 60.0], 1) < 1e-20
        assert loss([0.0, 60.0], 0) == pytest.approx(60.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=10), st.data())
    def test_matches_direct_formula(self, logits, data):
        label = data.draw(st.integers(0, len(logits) - 1))
        direct = -logits[label] + math.log(sum(math.exp(v) for v in logits))
        assert loss(logits, label) == pytest.approx(direct, abs=1e-12)

    @pytest.mark.parametrize("label", [-1, 2])
    def test_bad_label(self, label):
        with pytest.raises(ValueError):
            loss([0.1, 0.2], label)


class TestParamGrad:
    def test_constant_model_has_zero_gradient(self, rng):
        g = param_grad(Constant(), np.zeros(1), rng.uniform(size=(5, 3)), [0, 1, 0, 1, 1])
        assert np.array_equal(g, [0.0])

    def test_unused_parameter(self, rng):
        x, y = separable(rng, 10)
        g = param_grad(Logistic(), rng.standard_normal(4), x, y)
        assert g[3] == 0.0 and np.any(g[:3] != 0)

    def test_disconnected_hidden_unit(self, qnn, rng):
        model, p = qnn
        W1, b1, W2, b2 = (a.copy() for a in model.unpack(p.theta))
        W2[:, 5] = 0.0
        theta = np.concatenate([W1.ravel(), b1, W2.ravel(), b2])
        g = param_grad(model, theta, rng.uniform(0, 1, (2, 28, 28)), [3, 8])
        gW1, gb1, _, _ = model.unpack(g)
        assert np.all(gW1[5] == 0) and gb1[5] == 0

    def test_empty_batch(self, vqc):
        with pytest.raises(ValueError):
            param_grad(*vqc, np.zeros((0, 16, 16)), [])


class TestInputGrad:
    @pytest.mark.parametrize("x", [0.13, 0.4, 0.77])
    def test_single_qubit_analytic(self, x):
        """z = cos(pi x); label 1 loss log(1 + e^{-2z})."""
        z = math.cos(math.pi * x)
        dz = -math.pi * math.sin(math.pi * x)
        expect = -2 / (1 + math.exp(2 * z)) * dz
        got = input_grad(AngleParity(1), np.zeros(0), np.array([x]), 1)
        # central-difference truncation at h = 1e-3 is O(h^2)
        assert got[0] == pytest.approx(expect, rel=1e-5)

    def test_symmetric_pixels(self):
        """Swapping two equal pixels leaves the model unchanged, so their slopes agree."""
        g = input_grad(AngleParity(3), np.zeros(0), np.array([0.3, 0.3, 0.6]), 0)
        assert g[0] == pytest.approx(g[1], abs=1e-12)
        assert abs(g[2] - g[0]) > 1e-3

    def test_structured_amplitude_path(self, vqc, rng):
        model, p = vqc
        x = rng.uniform(0.05, 0.95, (2, 16, 16))
        fast = input_grad(model, p, x, [0, 1])
        slow = input_grad(model, p, x, [0, 1], method="generic")
        assert np.max(np.abs(fast - slow)) < 1e-9

    def test_structured_patch_path(self, qnn, rng):
        model, p = qnn
        x = rng.uniform(0.05, 0.95, (28, 28))
        fast = input_grad(model, p, x, 6)
        slow = input_grad(model, p, x, 6, method="generic")
        assert fast.shape == (28, 28)
        assert np.max(np.abs(fast - slow)) < 1e-9

    def test_step_size_robust(self, vqc, rng):
        model, p = vqc
        x = rng.uniform(0.05, 0.95, (1, 16, 16))
        a = input_grad(model, p, x, [1], h=1e-3)
        b = input_grad(model, p, x, [1], h=1e-4)
        assert np.max(np.abs(a - b)) <= 1e-4 * np.max(np.abs(b))

    def test_steered_encoder_rejected(self, vqc):
        enc = EncoderSpec(EncodingKind.amplitude, Defense.multi_qubit_steer, 0.3, 2)
        with pytest.raises(ValueError):
            input_grad(*vqc, np.ones((16, 16)), 0, encoder=enc)

    def test_unknown_method(self, vqc):
        with pytest.raises(ValueError):
            input_grad(*vqc, np.ones((16, 16)), 0, method="adjoint")


class TestTrain:
    def test_separable_converges(self, rng):
        x, y = separable(rng)
        cfg = TrainConfig(lr=0.1, epochs=30, batch_size=16)
        p, curve = train(Logistic(), (x, y), cfg, test_data=(x, y))
        losses = [r["loss"] for r in curve]
        assert losses[-1] < 0.5 * losses[0]
        assert np.all(np.diff(losses) <= 1e-12)
        assert curve[-1]["test_acc"] >= 0.95

    def test_zero_learning_rate(self, vqc, rng):
        model, p = vqc
        x = rng.uniform(0, 1, (6, 16, 16))
        out, curve = train(model, (x, [0, 1] * 3), TrainConfig(lr=0.0, epochs=2, batch_size=4), init=p)
        assert np.array_equal(out.theta, p.theta)
        assert curve[0]["loss"] == pytest.approx(curve[1]["loss"], abs=1e-12)

    def test_deterministic(self, rng):
        x = rng.uniform(0, 1, (8, 16, 16))
        y = [0, 1] * 4
        cfg = TrainConfig(epochs=2, batch_size=3, seed=11)
        a, ca = train(ModelSpec.default("vqc"), (x, y), cfg)
        b, cb = train(ModelSpec.default("vqc"), (x, y), cfg)
        assert np.array_equal(a.theta, b.theta)
        assert [r["loss"] for r in ca] == [r["loss"] for r in cb]

    def test_nan_aborts(self, rng):
        x, y = separable(rng, 8)
        x[3, 0] = np.nan
        with pytest.raises(NumericalError):
            train(Logistic(), (x, y), TrainConfig(epochs=1))

    def test_curve_csv(self, tmp_path, rng):
        x, y = separable(rng, 8)
        _, curve = train(Logistic(), (x, y), TrainConfig(epochs=3))
        write_curve(curve, tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,train_acc,test_acc" and len(lines) == 4

    @pytest.mark.parametrize(
        "kw", [dict(lr=-1), dict(optimizer="sgd"), dict(epochs=0), dict(batch_size=0), dict(beta1=1.0)]
    )
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
