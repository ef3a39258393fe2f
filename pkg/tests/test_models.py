import numpy as np
import pytest

from qsteer import qstate as qs
from qsteer.encoding import Defense, EncoderSpec, EncodingKind, encode
from qsteer.losses import cross_entropy
from qsteer.models import (
    QCNN,
    VQC,
    ModelSpec,
    ParamSet,
    QuanvolutionClassifier,
    build_model,
    qcnn_circuit,
    qcnn_forward,
    qnn_head_forward,
    quanv_forward,
    vqc_circuit,
    vqc_forward,
)
from qsteer.models.qnn import image_patches
from qsteer.qstate import PureState

from oracles import circuit_unitary, product_state

AMP = {"qcnn": (QCNN, qcnn_forward), "vqc": (VQC, vqc_forward)}


@pytest.fixture(scope="module")
def qnn():
    return QuanvolutionClassifier(ModelSpec.default("qnn", seed=3))


def random_image16(rng):
    img = rng.uniform(0, 1, (16, 16))
    img[0, 0] = 0.0
    return img


class TestSpec:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(kind="cnn", n_qubits=8, layers=3, n_classes=2),
            dict(kind="qcnn", n_qubits=6, layers=3, n_classes=2),
            dict(kind="vqc", n_qubits=8, layers=3, n_classes=10),
            dict(kind="qnn", n_qubits=8, layers=2, n_classes=10),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ModelSpec(**kw)

    def test_qcnn_split(self):
        c = qcnn_circuit()
        conv = sum(1 for op in c.ops if op.kind == "ry")
        pool = sum(1 for op in c.ops if op.kind.startswith("cr"))
        assert (conv, pool, c.n_params) == (48, 24, 72)

    def test_vqc_count(self):
        assert vqc_circuit(3).n_params == 3 * 8 * 3 == 72

    def test_paramset_roundtrip(self, tmp_path, rng):
        p = build_model(ModelSpec.default("vqc", seed=5)).init_params(rng)
        p.save(tmp_path / "p.json")
        q = ParamSet.load(tmp_path / "p.json")
        assert np.array_equal(p.theta, q.theta) and q.spec == p.spec
        assert q.partition == p.partition and q.digest() == p.digest()

    def test_paramset_version(self, rng):
        d = build_model(ModelSpec.default("vqc")).init_params(rng).to_json()
        d["version"] = 99
        with pytest.raises(ValueError):
            ParamSet.from_json(d)

    def test_paramset_parts(self, qnn, rng):
        p = qnn.init_params(rng)
        assert p.part("head.W1").size == 64 * 784
        assert p.part("head.b2").size == 10
        assert sum(b - a for a, b in p.partition.values()) == p.theta.size


@pytest.mark.parametrize("kind", ["qcnn", "vqc"])
class TestAmplitudeModels:
    def test_unitary_matches_embedded_product(self, kind, rng):
        model = AMP[kind][0](ModelSpec.default(kind))
        theta = rng.uniform(0, 2 * np.pi, 72)
        U = model.circuit.unitary(theta)
        assert np.max(np.abs(U - circuit_unitary(model.circuit, theta))) < 1e-12

    def test_pure_equals_mixed(self, kind, rng):
        cls, fwd = AMP[kind]
        p = cls(ModelSpec.default(kind)).init_params(rng)
        psi = qs.random_pure(8, rng)
        a = fwd(psi, p)
        b = fwd(psi.to_mixed(), p)
        assert np.max(np.abs(a - b)) < 1e-10
        assert a.sum() == pytest.approx(0.0, abs=1e-15)
        assert abs(a[1]) <= 1 + 1e-12

    def test_global_phase(self, kind, rng):
        cls, fwd = AMP[kind]
        p = cls(ModelSpec.default(kind)).init_params(rng)
        psi = qs.random_pure(8, rng)
        rotated = PureState(8, np.exp(0.7j) * psi.amplitudes)
        assert np.max(np.abs(fwd(psi, p) - fwd(rotated, p))) < 1e-12

    def test_zero_params_deterministic(self, kind, rng):
        cls, fwd = AMP[kind]
        p = ParamSet(ModelSpec.default(kind), np.zeros(72))
        psi = qs.random_pure(8, rng)
        assert np.array_equal(fwd(psi, p), fwd(psi, p))

    def test_wrong_qubit_count(self, kind, rng):
        cls, fwd = AMP[kind]
        p = cls(ModelSpec.default(kind)).init_params(rng)
        with pytest.raises(ValueError):
            fwd(qs.random_pure(3, rng), p)

    def test_observable_readout_matches_simulation(self, kind, rng):
        model = AMP[kind][0](ModelSpec.default(kind))
        p = model.init_params(rng)
        imgs = np.stack([random_image16(rng) for _ in range(4)])
        fast = model.logits(p.theta, imgs)
        for img, row in zip(imgs, fast):
            ref = model.forward_state(p.theta, encode(img.ravel(), EncoderSpec(EncodingKind.amplitude)))
            assert np.max(np.abs(row - ref)) < 1e-12

    def test_defended_readout_matches_density_path(self, kind, rng):
        model = AMP[kind][0](ModelSpec.default(kind))
        p = model.init_params(rng)
        img = random_image16(rng)
        enc = EncoderSpec(EncodingKind.amplitude, Defense.multi_qubit_steer, np.pi / 10, 7)
        fast = model.logits(p.theta, img[None], enc)[0]
        ref = model.forward_state(p.theta, encode(img.ravel(), enc))
        assert np.max(np.abs(fast - ref)) < 1e-12

    def test_zero_image_rejected(self, kind):
        model = AMP[kind][0](ModelSpec.default(kind))
        with pytest.raises(ValueError):
            model.features(np.zeros((1, 16, 16)))

    def test_parameter_shift_matches_fd(self, kind, rng):
        model = AMP[kind][0](ModelSpec.default(kind))
        theta = model.init_params(rng).theta
        feats = model.features(np.stack([random_image16(rng) for _ in range(3)]))
        labels = np.array([0, 1, 1])
        _, g = model.loss_grad(theta, feats, labels)
        h = 1e-4

        def L(t):
            return cross_entropy(model.logits_from_features(t, feats), labels).mean()

        fd = np.empty(72)
        for k in range(72):
            e = np.zeros_like(theta)
            e[k] = h
            fd[k] = (L(theta + e) - L(theta - e)) / (2 * h)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-6


class TestQuanvolution:
    def test_shapes_and_range(self, qnn, rng):
        maps = quanv_forward(rng.uniform(0, 1, (28, 28)), qnn.spec)
        assert maps.shape == (4, 14, 14)
        assert np.all(np.abs(maps) <= 1 + 1e-12)

    def test_blank_image_uniform_maps(self, qnn):
        maps = quanv_forward(np.zeros((28, 28)), qnn.spec)
        for k in range(4):
            assert np.ptp(maps[k]) == 0.0

    def test_patch_matches_oracle(self, qnn, rng):
        img = rng.uniform(0, 1, (28, 28))
        maps = qnn.quanv(img[None])[0]
        U = circuit_unitary(qnn.kernel, qnn.kernel_angles)
        r, c = 6, 9
        # qubit order within a patch: (r,c), (r,c+1), (r+1,c), (r+1,c+1)
        px = [img[2 * r, 2 * c], img[2 * r, 2 * c + 1], img[2 * r + 1, 2 * c], img[2 * r + 1, 2 * c + 1]]
        out = U @ product_state(np.pi * np.array(px))
        probs = np.abs(out) ** 2
        for k in range(4):
            zk = sum(p * (1 - 2 * ((i >> k) & 1)) for i, p in enumerate(probs))
            assert maps[k, r, c] == pytest.approx(zk, abs=1e-12)

    def test_full_strength_steer_is_passthrough(self, qnn, rng):
        img = rng.uniform(0, 1, (28, 28))
        enc = EncoderSpec(EncodingKind.angle, Defense.single_qubit_steer, np.pi / 2, 1)
        assert np.max(np.abs(qnn.quanv(img[None], enc) - qnn.quanv(img[None]))) < 1e-10

    @pytest.mark.parametrize("defense", [Defense.single_qubit_steer, Defense.multi_qubit_steer])
    def test_steered_patch_matches_density_path(self, qnn, defense, rng):
        patch = image_patches(rng.uniform(0, 1, (1, 28, 28)))[0, 42]
        enc = EncoderSpec(EncodingKind.angle, defense, np.pi / 16, 20)
        rho = encode(patch, enc, 4).rho
        ref = np.einsum("kij,ji->k", qnn.observables, rho).real
        assert np.max(np.abs(qnn.patch_features(patch, enc) - ref)) < 1e-12

    def test_kernel_seeded(self):
        a = QuanvolutionClassifier(ModelSpec.default("qnn", seed=1))
        b = QuanvolutionClassifier(ModelSpec.default("qnn", seed=1))
        c = QuanvolutionClassifier(ModelSpec.default("qnn", seed=2))
        assert np.array_equal(a.observables, b.observables)
        assert not np.allclose(a.observables, c.observables)

    def test_wrong_size(self, qnn):
        with pytest.raises(ValueError):
            quanv_forward(np.zeros((16, 16)), qnn.spec)


class TestHead:
    def test_zero_weights(self, qnn, rng):
        p = ParamSet(qnn.spec, np.zeros(qnn.n_params))
        assert np.array_equal(qnn_head_forward(rng.uniform(-1, 1, (4, 14, 14)), p), np.zeros(10))

    def test_linear_in_last_layer(self, qnn, rng):
        p = qnn.init_params(rng)
        maps = rng.uniform(-1, 1, (4, 14, 14))
        lo, hi = p.partition["head.W2"]
        d = np.zeros_like(p.theta)
        d[lo:hi] = rng.standard_normal(hi - lo)
        base = qnn_head_forward(maps, p)
        one = qnn_head_forward(maps, p.with_theta(p.theta + d)) - base
        two = qnn_head_forward(maps, p.with_theta(p.theta + 2 * d)) - base
        assert np.allclose(two, 2 * one, atol=1e-12)

    def test_shape_mismatch(self, qnn, rng):
        with pytest.raises(ValueError):
            qnn_head_forward(np.zeros((4, 13, 14)), qnn.init_params(rng))

    def test_backprop_matches_fd(self, qnn, rng):
        p = qnn.init_params(rng)
        feats = rng.uniform(-1, 1, (3, 784))
        labels = np.array([2, 7, 7])
        _, g = qnn.loss_grad(p.theta, feats, labels)
        h = 1e-5
        coords = rng.choice(p.theta.size, 40, replace=False)
        coords = np.concatenate([coords, np.arange(p.theta.size - 10, p.theta.size)])
        for k in coords:
            e = np.zeros_like(p.theta)
            e[k] = h
            fd = (qnn.loss_grad(p.theta + e, feats, labels)[0] - qnn.loss_grad(p.theta - e, feats, labels)[0]) / (2 * h)
            assert g[k] == pytest.approx(fd, abs=1e-8)
