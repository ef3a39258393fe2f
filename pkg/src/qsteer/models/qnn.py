"""Quanvolution front end with a compact dense head (10-class)."""

from __future__ import annotations

from functools import reduce

import numpy as np

from ..encoding import Defense, EncoderSpec, EncodingKind, angle_product_vectors, pixels_to_angles
from ..losses import cross_entropy, cross_entropy_grad
from ..steering import steer_from_ground, steered_qubit_rhos
from .circuit import Op, ParamCircuit
from .spec import ModelSpec, ParamSet

IMAGE_SIDE = 28
PATCHES = (IMAGE_SIDE // 2) ** 2  # 196 positions per channel
N_FEATURES = 4 * PATCHES


def quanv_kernel(layers: int, seed: int):
    """Seeded random 4-qubit circuit: random-axis rotations + CNOT ring per layer.

    Returns the circuit and its frozen angles.
    """
    rng = np.random.default_rng([seed, 0x9A17])
    ops, angles = [], []
    for _ in range(layers):
        for q in range(4):
            axis = ("rx", "ry", "rz")[rng.integers(3)]
            ops.append(Op(axis, (q,), len(angles)))
            angles.append(rng.uniform(0.0, 2 * np.pi))
        ops += [Op("cnot", (q, (q + 1) % 4)) for q in range(4)]
    circ = ParamCircuit(4, ops, len(angles), readout=0)
    return circ, np.array(angles)


def image_patches(images) -> np.ndarray:
    """(B, 28, 28) -> (B, 196, 4); patch order is row-major, pixel order
    (r, c), (r, c+1), (r+1, c), (r+1, c+1) -> qubits 0..3."""
    x = np.asarray(images, dtype=float)
    if x.shape[-2:] != (IMAGE_SIDE, IMAGE_SIDE):
        raise ValueError(f"expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {x.shape[-2:]}")
    B = x.shape[0]
    p = x.reshape(B, 14, 2, 14, 2).transpose(0, 1, 3, 2, 4)
    return p.reshape(B, PATCHES, 4)


def _batched_kron(a, b):
    out = np.einsum("...ab,...cd->...acbd", a, b)
    return out.reshape(out.shape[:-4] + (a.shape[-2] * b.shape[-2], a.shape[-1] * b.shape[-1]))


class QuanvolutionClassifier:
    input_shape = (IMAGE_SIDE, IMAGE_SIDE)
    encoding = EncodingKind.angle

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.kernel, self.kernel_angles = quanv_kernel(spec.layers, spec.seed)
        U = self.kernel.unitary(self.kernel_angles)
        obs = []
        for k in range(4):
            zs = 1.0 - 2.0 * ((np.arange(16) >> k) & 1)
            obs.append(U.conj().T @ (zs[:, None] * U))
        self.observables = np.array(obs)  # (4, 16, 16) Hermitian
        # real inputs only see the symmetric real part
        self._obs_real = self.observables.real
        hid, ncls = spec.head_hidden, spec.n_classes
        sizes = [("head.W1", hid * N_FEATURES), ("head.b1", hid), ("head.W2", ncls * hid), ("head.b2", ncls)]
        self.partition, off = {}, 0
        for name, size in sizes:
            self.partition[name] = (off, off + size)
            off += size
        self.n_params = off

    # -- parameters -------------------------------------------------------

    def init_params(self, rng: np.random.Generator) -> ParamSet:
        hid, ncls = self.spec.head_hidden, self.spec.n_classes
        theta = np.zeros(self.n_params)
        a1 = np.sqrt(6.0 / (N_FEATURES + hid))
        a2 = np.sqrt(6.0 / (hid + ncls))
        s = self.partition
        theta[slice(*s["head.W1"])] = rng.uniform(-a1, a1, hid * N_FEATURES)
        theta[slice(*s["head.W2"])] = rng.uniform(-a2, a2, ncls * hid)
        return ParamSet(self.spec, theta, dict(self.partition))

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} head parameters, got {theta.shape}")
        s = self.partition
        hid, ncls = self.spec.head_hidden, self.spec.n_classes
        W1 = theta[slice(*s["head.W1"])].reshape(hid, N_FEATURES)
        b1 = theta[slice(*s["head.b1"])]
        W2 = theta[slice(*s["head.W2"])].reshape(ncls, hid)
        b2 = theta[slice(*s["head.b2"])]
        return W1, b1, W2, b2

    # -- quanvolution -----------------------------------------------------

    def patch_features(self, patch_pixels, encoder: EncoderSpec | None = None) -> np.ndarray:
        """(..., 4) pixel patches -> (..., 4) Pauli-Z expectations."""
        ang = pixels_to_angles(patch_pixels)
        O = self._obs_real
        if encoder is None or encoder.defense is Defense.none:
            psi = angle_product_vectors(ang)
            return np.einsum("...i,kij,...j->...k", psi, O, psi)
        if encoder.defense is Defense.single_qubit_steer:
            r = steered_qubit_rhos(ang, encoder.J, encoder.N)  # (..., 4, 2, 2)
            # qubit 0 is least significant: kron(r3, r2, r1, r0)
            rho = reduce(_batched_kron, [r[..., q, :, :] for q in (3, 2, 1, 0)])
            return np.einsum("...ij,kij->...k", rho, O)
        t = angle_product_vectors(ang)
        phi, w = steer_from_ground(t, encoder.J, encoder.N)
        Oc = self.observables
        zphi = np.real(np.einsum("...i,kij,...j->...k", phi.conj(), Oc, phi))
        return zphi + w[..., None] * np.einsum("...i,kij,...j->...k", t, O, t)

    def quanv(self, images, encoder: EncoderSpec | None = None) -> np.ndarray:
        """(B, 28, 28) -> (B, 4, 14, 14) feature maps."""
        f = self.patch_features(image_patches(images), encoder)  # (B, 196, 4)
        return f.transpose(0, 2, 1).reshape(-1, 4, 14, 14)

    def features(self, images, encoder: EncoderSpec | None = None) -> np.ndarray:
        return self.quanv(images, encoder).reshape(len(images), N_FEATURES)

    # -- head -------------------------------------------------------------

    def head(self, theta, feats):
        W1, b1, W2, b2 = self.unpack(theta)
        hidden = np.tanh(feats @ W1.T + b1)
        return hidden @ W2.T + b2, hidden

    def logits_from_features(self, theta, feats) -> np.ndarray:
        return self.head(theta, feats)[0]

    def logits(self, theta, images, encoder: EncoderSpec | None = None) -> np.ndarray:
        return self.logits_from_features(theta, self.features(images, encoder))

    def loss_grad(self, theta, feats, labels):
        """Mean loss and its backpropagated gradient w.r.t. the head."""
        W1, b1, W2, b2 = self.unpack(theta)
        logits, hidden = self.head(theta, feats)
        B = feats.shape[0]
        g = cross_entropy_grad(logits, labels) / B
        gW2 = g.T @ hidden
        gb2 = g.sum(axis=0)
        gh = (g @ W2) * (1 - hidden**2)
        gW1 = gh.T @ feats
        gb1 = gh.sum(axis=0)
        grad = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])
        return float(cross_entropy(logits, labels).mean()), grad

    def input_grad(self, theta, images, labels, h: float) -> np.ndarray:
        """Central differences of the loss in every pixel.

        A pixel only enters its own 2x2 patch, so each perturbed forward
        recomputes four quanvolution outputs and updates the head's
        pre-activations by the matching columns of W1.
        """
        W1, b1, W2, b2 = self.unpack(theta)
        images = np.asarray(images, dtype=float)
        labels = np.asarray(labels, dtype=int)
        patches = image_patches(images)  # (B, 196, 4)
        base = self.patch_features(patches)  # (B, 196, 4)
        feats = base.transpose(0, 2, 1).reshape(len(images), N_FEATURES)
        pre = feats @ W1.T + b1  # (B, hid)
        # pixel (patch p, qubit q) for every pixel in patch-major order
        P = np.repeat(np.arange(PATCHES), 4)
        Q = np.tile(np.arange(4), PATCHES)
        cols = np.arange(4)[None, :] * PATCHES + P[:, None]  # (784, 4) feature indices
        Wg = W1[:, cols].transpose(1, 0, 2)  # (784, hid, 4)
        out = np.empty((len(images), N_FEATURES))
        for b in range(len(images)):
            losses = []
            for sign in (1.0, -1.0):
                pp = patches[b, P].copy()  # (784, 4)
                pp[np.arange(P.size), Q] += sign * h
                delta = self.patch_features(pp) - base[b, P]  # (784, 4)
                a = pre[b][None, :] + np.einsum("mhk,mk->mh", Wg, delta)
                logits = np.tanh(a) @ W2.T + b2
                losses.append(cross_entropy(logits, np.full(P.size, labels[b])))
            g = (losses[0] - losses[1]) / (2 * h)  # patch-major pixel order
            out[b] = g
        # patch-major -> image layout
        g = out.reshape(len(images), 14, 14, 2, 2).transpose(0, 1, 3, 2, 4)
        return g.reshape(len(images), IMAGE_SIDE, IMAGE_SIDE)


def quanv_forward(image, spec: ModelSpec, params: ParamSet | None = None, encoder: EncoderSpec | None = None):
    """Four 14x14 feature maps for one 28x28 image."""
    img = np.asarray(image, dtype=float)
    if img.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise ValueError(f"expected a {IMAGE_SIDE}x{IMAGE_SIDE} image, got {img.shape}")
    return QuanvolutionClassifier(spec).quanv(img[None], encoder)[0]


def qnn_head_forward(maps, params: ParamSet) -> np.ndarray:
    maps = np.asarray(maps, dtype=float)
    if maps.shape != (4, 14, 14):
        raise ValueError(f"expected feature maps of shape (4, 14, 14), got {maps.shape}")
    model = QuanvolutionClassifier(params.spec)
    return model.logits_from_features(params.theta, maps.reshape(1, -1))[0]
