"""Dense pure/mixed state simulation.

Bit ordering: qubit 0 is the least significant bit of the basis index. For a
4-qubit register the basis state ``|q3 q2 q1 q0>`` has index
``8*q3 + 4*q2 + 2*q1 + q0``. ``tensor(a, b)`` places ``a`` on the high qubits,
so an ancilla prepended with ``tensor(ancilla, system)`` sits at the highest
qubit index.

Multi-qubit gate matrices are written in the local basis where
``targets[0]`` is the most significant bit, e.g. ``CNOT`` with
``targets=(control, target)`` uses the textbook 4x4 matrix.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .constants import EQUIV_ATOL, PSD_ATOL, VALIDATION_ATOL

__all__ = [
    "PureState",
    "MixedState",
    "GateOp",
    "State",
    "apply_gate",
    "apply_matrix",
    "apply_matrix_dm",
    "tensor",
    "partial_trace",
    "fidelity_to_pure",
    "expectation_z",
    "z_signs",
    "basis_state",
    "random_pure",
    "random_mixed",
    "random_unitary",
    "rx",
    "ry",
    "rz",
    "rot",
    "controlled",
    "I2",
    "X",
    "Y",
    "Z",
    "H",
    "CNOT",
    "CZ",
]


class StateError(ValueError):
    """Raised when an array does not describe a valid quantum state."""


def _n_qubits_for_dim(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 2 or (1 << n) != dim:
        raise StateError(f"dimension {dim} is not a power of two >= 2")
    return n


@dataclass(frozen=True)
class PureState:
    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if self.n_qubits < 1:
            raise StateError("n_qubits must be positive")
        if amps.shape[0] != 2**self.n_qubits:
            raise StateError(
                f"expected {2**self.n_qubits} amplitudes, got {amps.shape[0]}"
            )
        if not np.all(np.isfinite(amps)):
            raise StateError("amplitudes must be finite")
        norm = np.vdot(amps, amps).real
        if abs(norm - 1.0) > VALIDATION_ATOL:
            raise StateError(f"squared norm {norm!r} differs from 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, vec, normalize: bool = False) -> "PureState":
        vec = np.asarray(vec, dtype=complex).reshape(-1)
        if normalize:
            nrm = np.linalg.norm(vec)
            if nrm == 0:
                raise StateError("cannot normalize the zero vector")
            vec = vec / nrm
        return cls(_n_qubits_for_dim(vec.shape[0]), vec)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def to_mixed(self) -> "MixedState":
        return MixedState(self.n_qubits, np.outer(self.amplitudes, self.amplitudes.conj()))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class MixedState:
    n_qubits: int
    rho: np.ndarray = field(repr=False)
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        d = 2**self.n_qubits
        if self.n_qubits < 1:
            raise StateError("n_qubits must be positive")
        if rho.shape != (d, d):
            raise StateError(f"expected a {d}x{d} matrix, got {rho.shape}")
        if self.validate:
            herm = np.max(np.abs(rho - rho.conj().T))
            if herm > VALIDATION_ATOL:
                raise StateError(f"matrix is not Hermitian (max deviation {herm:.3e})")
            tr = np.trace(rho).real
            if abs(tr - 1.0) > VALIDATION_ATOL:
                raise StateError(f"trace {tr!r} differs from 1")
            lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
            if lo < -PSD_ATOL:
                raise StateError(f"matrix is not PSD (min eigenvalue {lo:.3e})")
        rho = rho.copy()
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_matrix(cls, rho, validate: bool = True) -> "MixedState":
        rho = np.asarray(rho, dtype=complex)
        return cls(_n_qubits_for_dim(rho.shape[0]), rho, validate)

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def purity(self) -> float:
        return float(np.real(np.trace(self.rho @ self.rho)))

    def probabilities(self) -> np.ndarray:
        return np.real(np.diag(self.rho)).copy()

    def eigen_ensemble(self, cutoff: float = 0.0):
        """Return ``(weights, vectors)`` with ``rho = sum_k w_k |v_k><v_k|``.

        Components with weight <= ``cutoff`` are dropped; ``vectors`` has one
        state per row.
        """
        w, v = np.linalg.eigh(0.5 * (self.rho + self.rho.conj().T))
        keep = w > cutoff
        return w[keep], v[:, keep].T.copy()


State = Union[PureState, MixedState]


@dataclass(frozen=True)
class GateOp:
    matrix: np.ndarray = field(repr=False)
    targets: tuple
    name: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        targets = tuple(int(t) for t in self.targets)
        if len(targets) not in (1, 2):
            raise ValueError("gates act on one or two qubits")
        if m.shape != (2 ** len(targets),) * 2:
            raise ValueError(
                f"{len(targets)}-qubit gate needs a {2**len(targets)}x{2**len(targets)} matrix, got {m.shape}"
            )
        if len(set(targets)) != len(targets):
            raise ValueError(f"target indices must be distinct: {targets}")
        if min(targets) < 0:
            raise ValueError("negative qubit index")
        dev = np.max(np.abs(m @ m.conj().T - np.eye(m.shape[0])))
        if dev > VALIDATION_ATOL:
            raise ValueError(f"gate matrix is not unitary (deviation {dev:.3e})")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "targets", targets)

    @property
    def arity(self) -> int:
        return len(self.targets)


# ---------------------------------------------------------------------------
# gate library

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
CZ = np.diag([1, 1, 1, -1]).astype(complex)


def rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.array(
        [[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex
    )


def rot(phi: float, theta: float, omega: float) -> np.ndarray:
    """General rotation ``RZ(omega) RY(theta) RZ(phi)``."""
    return rz(omega) @ ry(theta) @ rz(phi)


def controlled(u: np.ndarray) -> np.ndarray:
    """4x4 controlled-``u`` with the control as the first target."""
    out = np.eye(4, dtype=complex)
    out[2:, 2:] = u
    return out


# ---------------------------------------------------------------------------
# array-level kernels (leading batch axes allowed)


def apply_matrix(vecs: np.ndarray, mat: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Apply ``mat`` to the qubits ``targets`` of state vectors on the last axis."""
    vecs = np.asarray(vecs)
    k = len(targets)
    batch = vecs.shape[:-1]
    nb = len(batch)
    psi = vecs.reshape(batch + (2,) * n)
    axes = [nb + (n - 1 - t) for t in targets]
    m = np.asarray(mat).reshape((2,) * (2 * k))
    out = np.tensordot(m, psi, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    return out.reshape(vecs.shape)


def apply_matrix_dm(rho: np.ndarray, mat: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """``U rho U^dagger`` for density matrices on the last two axes."""
    left = np.swapaxes(apply_matrix(np.swapaxes(rho, -1, -2), mat, targets, n), -1, -2)
    return apply_matrix(left, np.conj(mat), targets, n)


def z_signs(n: int, qubit: int) -> np.ndarray:
    idx = np.arange(2**n)
    return 1.0 - 2.0 * ((idx >> qubit) & 1)


# ---------------------------------------------------------------------------
# typed operations


def _check_targets(n: int, targets) -> None:
    for t in targets:
        if t >= n:
            raise IndexError(f"qubit index {t} out of range for {n} qubits")


def apply_gate(state: State, g: GateOp) -> State:
    _check_targets(state.n_qubits, g.targets)
    if isinstance(state, PureState):
        out = apply_matrix(state.amplitudes, g.matrix, g.targets, state.n_qubits)
        return PureState(state.n_qubits, out)
    out = apply_matrix_dm(state.rho, g.matrix, g.targets, state.n_qubits)
    return MixedState(state.n_qubits, out)


def tensor(a: State, b: State) -> State:
    """Kronecker product; ``a`` occupies the most significant qubits."""
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(a.n_qubits + b.n_qubits, np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, MixedState) and isinstance(b, MixedState):
        return MixedState(a.n_qubits + b.n_qubits, np.kron(a.rho, b.rho))
    raise TypeError("tensor() needs two states of the same kind")


def partial_trace(rho: MixedState, keep) -> MixedState:
    """Reduced state on ``keep``; kept qubits retain their relative order."""
    n = rho.n_qubits
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep set must be nonempty")
    _check_targets(n, keep)
    letters = string.ascii_letters
    # axis j of the reshaped tensor carries qubit n-1-j
    row = [letters[j] for j in range(n)]
    col = [letters[n + j] for j in range(n)]
    for j in range(n):
        if (n - 1 - j) not in keep:
            col[j] = row[j]
    out_row = [row[n - 1 - q] for q in reversed(keep)]
    out_col = [col[n - 1 - q] for q in reversed(keep)]
    expr = "".join(row) + "".join(col) + "->" + "".join(out_row) + "".join(out_col)
    red = np.einsum(expr, rho.rho.reshape((2,) * (2 * n)))
    d = 2 ** len(keep)
    return MixedState(len(keep), red.reshape(d, d))


def fidelity_to_pure(state: State, target: PureState) -> float:
    if state.n_qubits != target.n_qubits:
        raise ValueError("qubit counts differ")
    t = target.amplitudes
    if isinstance(state, PureState):
        f = abs(np.vdot(t, state.amplitudes)) ** 2
    else:
        f = np.real(np.vdot(t, state.rho @ t))
    return float(min(1.0, max(0.0, f)))


def expectation_z(state: State, qubit: int) -> float:
    _check_targets(state.n_qubits, [qubit])
    s = z_signs(state.n_qubits, qubit)
    return float(np.dot(state.probabilities(), s))


def basis_state(n: int, index: int = 0) -> PureState:
    v = np.zeros(2**n, dtype=complex)
    v[index] = 1.0
    return PureState(n, v)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_pure(n: int, rng: np.random.Generator) -> PureState:
    v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return PureState.from_vector(v, normalize=True)


def random_mixed(n: int, rng: np.random.Generator, rank: int | None = None) -> MixedState:
    d = 2**n
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = g @ g.conj().T
    return MixedState(n, rho / np.trace(rho).real)


def states_close(a: State, b: State, atol: float = EQUIV_ATOL) -> bool:
    ra = a.rho if isinstance(a, MixedState) else np.outer(a.amplitudes, a.amplitudes.conj())
    rb = b.rho if isinstance(b, MixedState) else np.outer(b.amplitudes, b.amplitudes.conj())
    return bool(np.max(np.abs(ra - rb)) <= atol)
