"""Fully quantum binary classifiers on amplitude-encoded 16x16 images."""

from __future__ import annotations

import numpy as np

from ..encoding import Defense, EncoderSpec, EncodingError, EncodingKind
from ..losses import cross_entropy, cross_entropy_grad
from ..qstate import MixedState, PureState, State
from ..steering import steer_from_ground
from .circuit import Op, ParamCircuit
from .spec import ModelSpec, ParamSet

N_QUBITS = 8
READOUT = 7


def _conv_block(a: int, b: int, p: int) -> list:
    return [
        Op("ry", (a,), p),
        Op("ry", (b,), p + 1),
        Op("cnot", (a, b)),
        Op("ry", (b,), p + 2),
    ]


def _pool_block(src: int, dst: int, p: int) -> list:
    # controlled Rot(phi, theta, omega) = CRZ(omega) CRY(theta) CRZ(phi)
    return [
        Op("crz", (src, dst), p),
        Op("cry", (src, dst), p + 1),
        Op("crz", (src, dst), p + 2),
    ]


def _ring_pairs(active: list) -> list:
    m = len(active)
    if m == 2:
        a, b = active
        return [(a, b), (b, a)]
    even = [(active[i], active[i + 1]) for i in range(0, m, 2)]
    odd = [(active[i], active[(i + 1) % m]) for i in range(1, m, 2)]
    return even + odd


def qcnn_circuit() -> ParamCircuit:
    """Three conv+pool stages, 8 -> 4 -> 2 -> 1 active qubits, 72 angles.

    Stage conv/pool block counts are (8, 4), (4, 2), (4, 2): 16 conv blocks
    and 8 pool blocks of three angles each. The last stage repeats its
    two-qubit conv ring and pools the surviving control twice.
    """
    ops, p = [], 0
    active = list(range(N_QUBITS))
    for stage in range(3):
        conv_pairs = _ring_pairs(active)
        if stage == 2:
            conv_pairs = conv_pairs * 2
        for a, b in conv_pairs:
            ops += _conv_block(a, b, p)
            p += 3
        drop, keep = active[0::2], active[1::2]
        pool_pairs = list(zip(drop, keep))
        if stage == 2:
            pool_pairs = pool_pairs * 2
        for src, dst in pool_pairs:
            ops += _pool_block(src, dst, p)
            p += 3
        active = keep
    assert active == [READOUT]
    return ParamCircuit(N_QUBITS, ops, p, READOUT)


def vqc_circuit(layers: int = 3) -> ParamCircuit:
    """Strongly entangling layers: per-qubit RZ RY RZ, then a CNOT ring of range ``l % (n-1) + 1``."""
    ops, p = [], 0
    n = N_QUBITS
    for layer in range(layers):
        for q in range(n):
            ops += [Op("rz", (q,), p), Op("ry", (q,), p + 1), Op("rz", (q,), p + 2)]
            p += 3
        r = layer % (n - 1) + 1
        ops += [Op("cnot", (q, (q + r) % n)) for q in range(n)]
    return ParamCircuit(n, ops, p, READOUT)


def binary_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.stack([-z, z], axis=-1)


class AmplitudeClassifier:
    """Shared machinery for QCNN / VQC: 16x16 image -> 8-qubit state -> <Z_7>."""

    input_shape = (16, 16)
    encoding = EncodingKind.amplitude

    def __init__(self, spec: ModelSpec, circuit: ParamCircuit):
        self.spec = spec
        self.circuit = circuit
        self._obs_key = None
        self._obs = None

    @property
    def n_params(self) -> int:
        return self.circuit.n_params

    def init_params(self, rng: np.random.Generator) -> ParamSet:
        theta = rng.uniform(0.0, 2 * np.pi, self.n_params)
        return ParamSet(self.spec, theta, {"circuit": (0, self.n_params)})

    # -- encoding ---------------------------------------------------------

    def features(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=float).reshape(len(images), -1)
        if x.shape[1] != 2**N_QUBITS:
            raise EncodingError(f"expected {2**N_QUBITS} pixels per image, got {x.shape[1]}")
        nrm = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(nrm == 0):
            raise EncodingError("cannot amplitude-encode an all-zero image")
        return x / nrm

    # -- forward ----------------------------------------------------------

    def observable(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key != self._obs_key:
            self._obs = self.circuit.readout_observable(theta)
            self._obs_key = key
        return self._obs

    def forward_state(self, theta, state: State) -> np.ndarray:
        """Logits for one encoded state by direct circuit simulation."""
        if state.n_qubits != N_QUBITS:
            raise ValueError(f"expected an {N_QUBITS}-qubit state, got {state.n_qubits}")
        if isinstance(state, PureState):
            z = self.circuit.expval(theta, state.amplitudes[None])[0]
        else:
            z = self.circuit.expval_dm(theta, state.rho[None])[0]
        return binary_logits(z)

    def logits_from_features(self, theta, feats) -> np.ndarray:
        return binary_logits(self.circuit.expval(theta, feats))

    def readout(self, theta, images, encoder: EncoderSpec | None = None) -> np.ndarray:
        t = self.features(images)
        M = self.observable(theta)
        R = M.real
        if encoder is None or not encoder.steered:
            return np.einsum("bi,ij,bj->b", t, R, t)
        if encoder.defense is not Defense.multi_qubit_steer:
            raise EncodingError(f"{encoder.defense.value} is not available for amplitude encoding")
        phi, w = steer_from_ground(t, encoder.J, encoder.N)
        zphi = np.real(np.einsum("bi,ij,bj->b", phi.conj(), M, phi))
        return zphi + w * np.einsum("bi,ij,bj->b", t, R, t)

    def logits(self, theta, images, encoder: EncoderSpec | None = None) -> np.ndarray:
        return binary_logits(self.readout(theta, images, encoder))

    # -- gradients --------------------------------------------------------

    def loss_grad(self, theta, feats, labels):
        """Mean loss and its parameter-shift gradient."""
        z, jac = self.circuit.jacobian(theta, feats)
        logits = binary_logits(z)
        g = cross_entropy_grad(logits, labels)
        dz = g[:, 1] - g[:, 0]
        grad = (dz[:, None] * jac).mean(axis=0)
        return float(cross_entropy(logits, labels).mean()), grad

    def input_grad(self, theta, images, labels, h: float) -> np.ndarray:
        """Central differences of the loss in every pixel.

        The perturbed forward ``z(x +- h e_p) = (x +- h e_p)^T R (x +- h e_p) / |x +- h e_p|^2``
        is evaluated in closed form from ``R x``, so all pixels cost one
        matrix-vector product.
        """
        x = np.asarray(images, dtype=float).reshape(len(images), -1)
        labels = np.asarray(labels, dtype=int)
        R = self.observable(theta).real
        R = 0.5 * (R + R.T)
        Rx = x @ R
        q = np.einsum("bi,bi->b", Rx, x)[:, None]
        s = np.einsum("bi,bi->b", x, x)[:, None]
        diag = np.diag(R)[None, :]
        out = np.empty_like(x)
        losses = []
        for sign in (1.0, -1.0):
            num = q + sign * 2 * h * Rx + h * h * diag
            den = s + sign * 2 * h * x + h * h
            z = num / den
            lab = np.broadcast_to(labels[:, None], z.shape)
            losses.append(cross_entropy(binary_logits(z), lab))
        out = (losses[0] - losses[1]) / (2 * h)
        return out.reshape(np.shape(images))


class QCNN(AmplitudeClassifier):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec, qcnn_circuit())


class VQC(AmplitudeClassifier):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec, vqc_circuit(spec.layers))


def qcnn_forward(state: State, params: ParamSet) -> np.ndarray:
    return QCNN(params.spec).forward_state(params.theta, state)


def vqc_forward(state: State, params: ParamSet) -> np.ndarray:
    return VQC(params.spec).forward_state(params.theta, state)


def as_state(x) -> State:
    x = np.asarray(x)
    if x.ndim == 1:
        return PureState.from_vector(x)
    return MixedState.from_matrix(x)
