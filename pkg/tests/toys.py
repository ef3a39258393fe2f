"""Small classifiers with hand-derivable gradients, sharing the model interface."""

import numpy as np

from qsteer.encoding import angle_encode
from qsteer.losses import cross_entropy, cross_entropy_grad
from qsteer.models import ModelSpec, ParamSet

PLACEHOLDER = ModelSpec.default("vqc")


class Toy:
    n_params = 0

    def init_params(self, rng):
        return ParamSet(PLACEHOLDER, np.zeros(self.n_params))

    def features(self, images):
        return np.asarray(images, dtype=float)

    def logits(self, theta, images, encoder=None):
        return self.logits_from_features(theta, self.features(images))


class Logistic(Toy):
    """Two logits (0, w.x + b); theta = (w0, w1, b, unused)."""

    input_shape = (2,)
    n_params = 4

    def logits_from_features(self, theta, feats):
        s = feats @ theta[:2] + theta[2]
        return np.stack([np.zeros_like(s), s], axis=1)

    def loss_grad(self, theta, feats, labels):
        logits = self.logits_from_features(theta, feats)
        ds = cross_entropy_grad(logits, labels)[:, 1]
        grad = np.concatenate([ds @ feats, [ds.sum()], [0.0]]) / len(labels)
        return float(cross_entropy(logits, labels).mean()), grad


def z_parity(amps):
    idx = np.arange(amps.size)
    sign = 1 - 2 * (np.array([bin(i).count("1") for i in idx]) % 2)
    return float(np.sum(np.abs(amps) ** 2 * sign))


class AngleParity(Toy):
    """Angle-encode every pixel, read out Z on all qubits; logits (-z, z)."""

    def __init__(self, n_pixels):
        self.input_shape = (n_pixels,)

    def logits_from_features(self, theta, feats):
        z = np.array([z_parity(angle_encode(np.pi * f, f.size).amplitudes) for f in feats])
        return np.stack([-z, z], axis=1)


class Constant(Toy):
    input_shape = (3,)
    n_params = 1

    def logits_from_features(self, theta, feats):
        return np.tile([0.2, -0.1], (len(feats), 1))

    def loss_grad(self, theta, feats, labels):
        logits = self.logits_from_features(theta, feats)
        return float(cross_entropy(logits, labels).mean()), np.zeros(1)


def separable(rng, n=64):
    x = rng.uniform(-1, 1, (n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    return x, y


class SwitchedByRounds(Toy):
    """Predicts class 1 undefended; when steered, only once N reaches ``threshold``."""

    input_shape = (2,)
    encoding = "angle"

    def __init__(self, threshold):
        self.threshold = threshold

    def logits(self, theta, images, encoder=None):
        ok = encoder is None or not encoder.steered or encoder.N >= self.threshold
        row = [0.0, 1.0] if ok else [1.0, 0.0]
        return np.tile(row, (len(images), 1))
