"""Angle/amplitude encoders and their steered replacements.

Pixels in [0, 1] become rotation angles ``pi * pixel`` for angle encoding.
Steered encoders start every register from ``|0...0>`` and halt the
steering process after ``N`` rounds, producing a mixed state close to the
state the plain encoder would have prepared.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import reduce

import numpy as np

from .qstate import MixedState, PureState, State, basis_state
from .steering import (
    SteeringMode,
    SteeringPlan,
    _check_strength,
    build_channel,
    steered_qubit_rhos,
)

__all__ = [
    "FeatureVector",
    "EncodingKind",
    "Defense",
    "EncoderSpec",
    "angle_encode",
    "amplitude_encode",
    "encode",
    "pixels_to_angles",
    "angle_product_vectors",
    "amplitude_vectors",
    "steered_image",
]

ANGLE_SCALE = np.pi


class EncodingError(ValueError):
    pass


class EncodingKind(str, Enum):
    angle = "angle"
    amplitude = "amplitude"


class Defense(str, Enum):
    none = "none"
    single_qubit_steer = "single_qubit_steer"
    multi_qubit_steer = "multi_qubit_steer"


@dataclass(frozen=True)
class FeatureVector:
    """Real features; ``scale='pixel'`` means values in [0, 1]."""

    values: np.ndarray
    scale: str = "pixel"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise EncodingError("features must be finite")
        if self.scale not in ("pixel", "angle"):
            raise EncodingError(f"unknown scale {self.scale!r}")
        object.__setattr__(self, "values", v)

    def angles(self) -> np.ndarray:
        return pixels_to_angles(self.values) if self.scale == "pixel" else self.values


def pixels_to_angles(pixels) -> np.ndarray:
    return ANGLE_SCALE * np.asarray(pixels, dtype=float)


@dataclass(frozen=True)
class EncoderSpec:
    kind: EncodingKind = EncodingKind.angle
    defense: Defense = Defense.none
    J: float | None = None
    N: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EncodingKind(self.kind))
        object.__setattr__(self, "defense", Defense(self.defense))
        if self.defense is Defense.single_qubit_steer and self.kind is not EncodingKind.angle:
            raise EncodingError("single-qubit steering needs a per-qubit (angle) encoding")
        if self.defense is not Defense.none:
            if self.J is None or self.N is None:
                raise EncodingError("steered encoders need both J and N")
            _check_strength(self.J)
            if int(self.N) != self.N or self.N < 1:
                raise EncodingError(f"N={self.N!r} must be a positive integer")
            object.__setattr__(self, "N", int(self.N))

    @property
    def steered(self) -> bool:
        return self.defense is not Defense.none

    def undefended(self) -> "EncoderSpec":
        return EncoderSpec(self.kind)


def _as_features(x, scale="pixel") -> FeatureVector:
    return x if isinstance(x, FeatureVector) else FeatureVector(x, scale)


def angle_product_vectors(angles) -> np.ndarray:
    """Statevectors of ``(x) RY(angle_i)|0>`` over the last axis of ``angles``.

    Feature ``i`` is loaded on qubit ``i``; works on batches.
    """
    ang = np.asarray(angles, dtype=float)
    n = ang.shape[-1]
    c, s = np.cos(ang / 2), np.sin(ang / 2)
    out = np.ones(ang.shape[:-1] + (1,))
    for i in range(n):
        q = np.stack([c[..., i], s[..., i]], axis=-1)
        # qubit i becomes the new most significant bit
        out = (q[..., :, None] * out[..., None, :]).reshape(ang.shape[:-1] + (-1,))
    return out


def angle_encode(x, n: int) -> PureState:
    """Product state ``(x) RY(x_i)|0>``; ``x`` holds angles unless given as a FeatureVector."""
    fv = _as_features(x, scale="angle")
    ang = fv.angles()
    if ang.shape[0] != n:
        raise EncodingError(f"expected {n} features, got {ang.shape[0]}")
    if np.any(ang < -1e-12) or np.any(ang > np.pi + 1e-12):
        raise EncodingError("angles must lie in [0, pi]")
    return PureState(n, angle_product_vectors(ang))


def amplitude_vectors(x) -> np.ndarray:
    """L2-normalize along the last axis (batch-friendly, no validation)."""
    x = np.asarray(x, dtype=float)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def amplitude_encode(x, n: int) -> PureState:
    fv = _as_features(x)
    v = fv.values
    if v.shape[0] != 2**n:
        raise EncodingError(f"amplitude encoding on {n} qubits needs {2**n} features, got {v.shape[0]}")
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise EncodingError("cannot amplitude-encode the zero vector")
    return PureState(n, v / nrm)


def encode(x, spec: EncoderSpec, n: int | None = None) -> State:
    """Encode features with the plain or steered encoder described by ``spec``."""
    fv = _as_features(x)
    if spec.kind is EncodingKind.angle:
        n = fv.values.shape[0] if n is None else n
        target = angle_encode(FeatureVector(fv.angles(), "angle"), n)
    else:
        n = int(np.log2(fv.values.shape[0])) if n is None else n
        target = amplitude_encode(fv, n)
    if spec.defense is Defense.none:
        return target
    if spec.defense is Defense.single_qubit_steer:
        rhos = steered_qubit_rhos(fv.angles(), spec.J, spec.N)
        # qubit 0 is least significant: kron(rho_{n-1}, ..., rho_0)
        rho = reduce(np.kron, rhos[::-1])
        return MixedState(n, rho)
    plan = SteeringPlan(spec.J, spec.N, target, SteeringMode.multi_qubit)
    init = basis_state(n, 0)
    ch = build_channel(plan, init)
    return MixedState(n, ch.evolve_pure_dm(init.amplitudes, spec.N))


def steered_image(state: State, shape, pixel_max: float = 1.0) -> np.ndarray:
    """Diagonal of the state in the computational basis, rescaled to pixel range."""
    img = np.clip(state.probabilities(), 0.0, None)
    top = img.max()
    if top > 0:
        img = img / top * pixel_max
    return img.reshape(shape)
