"""Measurement-induced passive steering.

One steering round couples the system to an ancilla prepared in ``|0>``,
evolves both under ``U = exp(-i J H)`` and discards the (measured) ancilla.
The Hamiltonian is

    H = sigma_plus_A (x) L + sigma_minus_A (x) L^dagger,   L = |t><e|,

where ``|t>`` is the target and ``|e>`` the normalized component of the
initial state orthogonal to it. ``H`` acts as ``sigma_x`` on
``span{|0>_A|e>, |1>_A|t>}`` and vanishes elsewhere, so the reduced map has
exactly two Kraus operators

    K0 = I - (1 - cos J) |e><e|,      K1 = -i sin J |t><e|,

and the target fidelity obeys ``F' = F + sin^2 J (1 - F)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .constants import DEGENERATE_GAP, VALIDATION_ATOL
from .qstate import MixedState, PureState, State, basis_state, partial_trace

__all__ = [
    "SteeringMode",
    "SteeringPlan",
    "SteeringChannel",
    "build_channel",
    "steer",
    "steer_dilated",
    "steer_trajectory",
    "fidelity_oracle",
    "steering_hamiltonian",
    "steering_unitary",
    "steered_qubit_rhos",
    "steer_from_ground",
]


class SteeringMode(str, Enum):
    single_qubit = "single_qubit"
    multi_qubit = "multi_qubit"


def _check_strength(J: float) -> None:
    if not (0.0 < J <= np.pi / 2 + 1e-15):
        raise ValueError(f"steering strength J={J!r} outside (0, pi/2]")


@dataclass(frozen=True)
class SteeringPlan:
    J: float
    N: int
    target: PureState
    mode: SteeringMode = SteeringMode.multi_qubit

    def __post_init__(self):
        _check_strength(self.J)
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"iteration count N={self.N!r} must be a positive integer")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "mode", SteeringMode(self.mode))


@dataclass(frozen=True)
class SteeringChannel:
    """One steering round, stored by its plane vectors.

    ``target`` and ``source`` are ``|t>`` and ``|e>``; ``source is None``
    marks the identity channel (initial state already at the target).
    """

    J: float
    target: np.ndarray = field(repr=False)
    source: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.target.shape[0]

    @property
    def is_identity(self) -> bool:
        return self.source is None

    @cached_property
    def kraus_ops(self) -> list:
        d = self.dim
        if self.is_identity:
            return [np.eye(d, dtype=complex)]
        e, t = self.source, self.target
        k0 = np.eye(d, dtype=complex) - (1 - np.cos(self.J)) * np.outer(e, e.conj())
        k1 = -1j * np.sin(self.J) * np.outer(t, e.conj())
        return [k0, k1]

    def completeness_error(self) -> float:
        acc = sum(k.conj().T @ k for k in self.kraus_ops)
        return float(np.max(np.abs(acc - np.eye(self.dim))))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """One round on a density matrix, using the rank-one structure of the Kraus pair."""
        if self.is_identity:
            return rho
        e, t = self.source, self.target
        c, s = np.cos(self.J), np.sin(self.J)
        re = rho @ e
        er = e.conj() @ rho
        ee = np.vdot(e, re)
        g = 1 - c
        out = rho - g * (np.outer(re, e.conj()) + np.outer(e, er)) + g * g * ee * np.outer(e, e.conj())
        out = out + (s * s) * ee * np.outer(t, t.conj())
        return out

    def apply_kraus(self, rho: np.ndarray) -> np.ndarray:
        """One round via explicit ``sum_i K_i rho K_i^dagger``."""
        return sum(k @ rho @ k.conj().T for k in self.kraus_ops)

    def evolve_pure(self, psi: np.ndarray, N: int):
        """Closed form of ``N`` rounds on a pure input lying in the channel plane.

        Returns ``(phi, w)`` with ``rho_N = |phi><phi| + w |t><t|``. Valid when
        ``psi`` has no component outside ``span{t, e}``, which holds for the
        state the channel was built from.
        """
        if self.is_identity or N == 0:
            return np.asarray(psi, dtype=complex), 0.0
        t, e = self.target, self.source
        a = np.vdot(t, psi)
        b = np.vdot(e, psi)
        cn = np.cos(self.J) ** N
        phi = a * t + cn * b * e
        w = float((1 - cn * cn) * abs(b) ** 2)
        return phi, w

    def evolve_pure_dm(self, psi: np.ndarray, N: int) -> np.ndarray:
        phi, w = self.evolve_pure(psi, N)
        return np.outer(phi, phi.conj()) + w * np.outer(self.target, self.target.conj())


def build_channel(plan: SteeringPlan, initial: PureState) -> SteeringChannel:
    if plan.target.n_qubits != initial.n_qubits:
        raise ValueError(
            f"target has {plan.target.n_qubits} qubits, initial state has {initial.n_qubits}"
        )
    return _channel_from_vectors(plan.J, plan.target.amplitudes, initial.amplitudes)


def _channel_from_vectors(J: float, target: np.ndarray, initial: np.ndarray) -> SteeringChannel:
    _check_strength(J)
    t = np.asarray(target, dtype=complex)
    psi = np.asarray(initial, dtype=complex)
    a = np.vdot(t, psi)
    if abs(a) ** 2 > 1 - DEGENERATE_GAP:
        return SteeringChannel(J, t, None)
    r = psi - a * t
    e = r / np.linalg.norm(r)
    return SteeringChannel(J, t, e)


def steer(plan: SteeringPlan, initial: PureState) -> MixedState:
    """Apply ``plan.N`` steering rounds to ``|initial><initial|``."""
    ch = build_channel(plan, initial)
    rho = np.outer(initial.amplitudes, initial.amplitudes.conj())
    for _ in range(plan.N):
        rho = ch.apply_kraus(rho)
    return MixedState(initial.n_qubits, rho)


def steer_trajectory(plan: SteeringPlan, initial: PureState) -> np.ndarray:
    """Target fidelity after 0, 1, ..., N rounds."""
    ch = build_channel(plan, initial)
    t = plan.target.amplitudes
    rho = np.outer(initial.amplitudes, initial.amplitudes.conj())
    out = [np.real(np.vdot(t, rho @ t))]
    for _ in range(plan.N):
        rho = ch.apply(rho)
        out.append(np.real(np.vdot(t, rho @ t)))
    return np.array(out)


def steering_hamiltonian(target: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Dense ``H`` on ancilla (x) system, ancilla as the most significant qubit."""
    L = np.outer(target, np.conj(source))
    sp = np.array([[0, 0], [1, 0]], dtype=complex)  # |1><0|
    return np.kron(sp, L) + np.kron(sp.T, L.conj().T)


def steering_unitary(J: float, target: np.ndarray, source: np.ndarray) -> np.ndarray:
    """``exp(-i J H)`` from the two-level structure of ``H``.

    ``H`` squares to the projector ``P`` onto its active plane, hence
    ``exp(-i J H) = I + (cos J - 1) P - i sin J H``.
    """
    Hm = steering_hamiltonian(target, source)
    d = Hm.shape[0]
    P = Hm @ Hm
    return np.eye(d, dtype=complex) + (np.cos(J) - 1) * P - 1j * np.sin(J) * Hm


def steer_dilated(plan: SteeringPlan, initial: PureState) -> MixedState:
    """Explicit ancilla simulation: couple, trace out the ancilla, reset, repeat."""
    ch = build_channel(plan, initial)
    n = initial.n_qubits
    rho = np.outer(initial.amplitudes, initial.amplitudes.conj())
    if ch.is_identity:
        return MixedState(n, rho)
    U = steering_unitary(plan.J, ch.target, ch.source)
    anc = basis_state(1, 0).to_mixed().rho
    for _ in range(plan.N):
        joint = U @ np.kron(anc, rho) @ U.conj().T
        rho = partial_trace(MixedState(n + 1, joint), range(n)).rho
    return MixedState(n, rho)


def fidelity_oracle(F0: float, J: float, N: int) -> float:
    """Closed-form target fidelity ``1 - (1 - F0) cos^(2N)(J)``."""
    if not (0.0 <= F0 <= 1.0):
        raise ValueError(f"F0={F0!r} outside [0, 1]")
    return float(1.0 - (1.0 - F0) * np.cos(J) ** (2 * N))


def steered_qubit_rhos(angles, J: float, N: int) -> np.ndarray:
    """Per-qubit steered states for targets ``RY(angle)|0>`` started from ``|0>``.

    Vectorized closed form of :func:`steer` on one qubit; returns an array of
    shape ``angles.shape + (2, 2)``.
    """
    _check_strength(J)
    ang = np.asarray(angles, dtype=float)
    a = np.cos(ang / 2)
    b = np.sin(ang / 2)
    cn = np.cos(J) ** N
    # In the {t, e} basis with t = (a, b), e = (b, -a):
    q = (cn * b) ** 2  # weight left on e
    coh = cn * a * b
    p = 1 - q
    rho = np.empty(ang.shape + (2, 2))
    # rho = p tt^T + q ee^T + coh (te^T + et^T)
    rho[..., 0, 0] = p * a * a + q * b * b + 2 * coh * a * b
    rho[..., 1, 1] = p * b * b + q * a * a - 2 * coh * a * b
    off = p * a * b - q * a * b + coh * (b * b - a * a)
    rho[..., 0, 1] = off
    rho[..., 1, 0] = off
    return rho


def steer_from_ground(targets, J: float, N: int):
    """Closed-form ``N``-round steering from ``|0...0>`` toward each target row.

    Returns ``(phi, w)`` with ``rho = |phi><phi| + w |t><t|``. With
    ``c = cos(J)**N`` this reduces to ``phi = c|0> + (1 - c) conj(t_0) t`` and
    ``w = (1 - c^2)(1 - |t_0|^2)``; the degenerate case ``t ~ |0>`` needs no
    special handling.
    """
    _check_strength(J)
    t = np.asarray(targets, dtype=complex)
    cn = np.cos(J) ** N
    t0 = t[..., 0]
    phi = (1 - cn) * np.conj(t0)[..., None] * t
    phi[..., 0] += cn
    w = (1 - cn * cn) * (1 - np.abs(t0) ** 2)
    return phi, np.clip(w, 0.0, None)


def is_valid_channel(ch: SteeringChannel) -> bool:
    return ch.completeness_error() <= VALIDATION_ATOL


def as_density(state: State) -> np.ndarray:
    if isinstance(state, PureState):
        return np.outer(state.amplitudes, state.amplitudes.conj())
    return state.rho
