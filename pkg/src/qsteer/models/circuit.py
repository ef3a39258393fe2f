"""Parameterized circuits over dense statevectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..qstate import CNOT, CZ, apply_matrix, apply_matrix_dm, controlled, rx, ry, rz, z_signs

ROTATIONS = {"rx": rx, "ry": ry, "rz": rz}
FIXED = {"cnot": CNOT, "cz": CZ}

_SQ2 = np.sqrt(2.0)
_D_PLUS = (_SQ2 + 1) / (4 * _SQ2)
_D_MINUS = (_SQ2 - 1) / (4 * _SQ2)

# (coefficient, shift) pairs such that df/dtheta = sum c * f(theta + s)
TWO_TERM = ((0.5, np.pi / 2), (-0.5, -np.pi / 2))
FOUR_TERM = (
    (_D_PLUS, np.pi / 2),
    (-_D_PLUS, -np.pi / 2),
    (-_D_MINUS, 3 * np.pi / 2),
    (_D_MINUS, -3 * np.pi / 2),
)


@dataclass(frozen=True)
class Op:
    kind: str
    wires: tuple
    param: int | None = None

    def matrix(self, theta) -> np.ndarray:
        if self.kind in FIXED:
            return FIXED[self.kind]
        if self.kind in ROTATIONS:
            return ROTATIONS[self.kind](theta[self.param])
        if self.kind.startswith("c") and self.kind[1:] in ROTATIONS:
            return controlled(ROTATIONS[self.kind[1:]](theta[self.param]))
        raise ValueError(f"unknown gate {self.kind!r}")

    @property
    def shift_rule(self):
        if self.param is None:
            return ()
        return TWO_TERM if self.kind in ROTATIONS else FOUR_TERM


class ParamCircuit:
    """An ordered gate list; every trainable angle is used by exactly one gate."""

    def __init__(self, n_qubits: int, ops, n_params: int, readout: int):
        self.n_qubits = n_qubits
        self.ops = tuple(ops)
        self.n_params = n_params
        self.readout = readout
        used = [op.param for op in self.ops if op.param is not None]
        if sorted(used) != list(range(n_params)):
            raise ValueError("each parameter must drive exactly one gate")
        self._op_of_param = {op.param: i for i, op in enumerate(self.ops) if op.param is not None}
        self._zs = z_signs(n_qubits, readout)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} circuit parameters, got {theta.shape}")
        return theta

    def run(self, theta, states, start: int = 0) -> np.ndarray:
        theta = self._check(theta)
        psi = np.asarray(states, dtype=complex)
        for op in self.ops[start:]:
            psi = apply_matrix(psi, op.matrix(theta), op.wires, self.n_qubits)
        return psi

    def run_dm(self, theta, rhos) -> np.ndarray:
        theta = self._check(theta)
        rho = np.asarray(rhos, dtype=complex)
        for op in self.ops:
            rho = apply_matrix_dm(rho, op.matrix(theta), op.wires, self.n_qubits)
        return rho

    def unitary(self, theta) -> np.ndarray:
        # rows of the evolved identity are the columns of U
        return self.run(theta, np.eye(self.dim, dtype=complex)).T

    def readout_observable(self, theta) -> np.ndarray:
        """Heisenberg-picture readout ``U^dagger Z_r U``."""
        U = self.unitary(theta)
        return U.conj().T @ (self._zs[:, None] * U)

    def z_of_states(self, psi) -> np.ndarray:
        return np.abs(psi) ** 2 @ self._zs

    def expval(self, theta, states) -> np.ndarray:
        return self.z_of_states(self.run(theta, states))

    def expval_dm(self, theta, rhos) -> np.ndarray:
        rho = self.run_dm(theta, rhos)
        return np.real(np.diagonal(rho, axis1=-2, axis2=-1)) @ self._zs

    def jacobian(self, theta, states) -> tuple[np.ndarray, np.ndarray]:
        """Readout values and their parameter-shift Jacobian.

        Returns ``(z, jac)`` with ``z`` of shape ``(B,)`` and ``jac`` of shape
        ``(B, n_params)``.
        """
        theta = self._check(theta)
        psi = np.asarray(states, dtype=complex)
        prefix = []
        for op in self.ops:
            prefix.append(psi)
            psi = apply_matrix(psi, op.matrix(theta), op.wires, self.n_qubits)
        z = self.z_of_states(psi)
        jac = np.zeros(z.shape + (self.n_params,))
        for k in range(self.n_params):
            g = self._op_of_param[k]
            op = self.ops[g]
            for coef, shift in op.shift_rule:
                shifted = theta.copy()
                shifted[k] += shift
                out = apply_matrix(prefix[g], op.matrix(shifted), op.wires, self.n_qubits)
                out = self.run(shifted, out, start=g + 1)
                jac[..., k] += coef * self.z_of_states(out)
        return z, jac
