"""Model descriptions and their trainable parameter vectors."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

PARAMSET_VERSION = 1

KINDS = ("qnn", "qcnn", "vqc")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    n_qubits: int
    layers: int
    n_classes: int
    head_hidden: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind in ("qcnn", "vqc") and (self.n_qubits != 8 or self.n_classes != 2):
            raise ValueError(f"{self.kind} is an 8-qubit binary classifier")
        if self.kind == "qnn" and self.n_qubits != 4:
            raise ValueError("the quanvolution kernel acts on 4 qubits (2x2 patches)")

    @classmethod
    def default(cls, kind: str, seed: int = 0) -> "ModelSpec":
        if kind == "qnn":
            return cls("qnn", n_qubits=4, layers=2, n_classes=10, head_hidden=64, seed=seed)
        if kind == "qcnn":
            return cls("qcnn", n_qubits=8, layers=3, n_classes=2, seed=seed)
        if kind == "vqc":
            return cls("vqc", n_qubits=8, layers=3, n_classes=2, seed=seed)
        raise ValueError(f"unknown model kind {kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class ParamSet:
    """Flat parameter vector plus named slices (``circuit`` / ``head.*``)."""

    spec: ModelSpec
    theta: np.ndarray
    partition: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()

    def part(self, name: str) -> np.ndarray:
        a, b = self.partition[name]
        return self.theta[a:b]

    def with_theta(self, theta) -> "ParamSet":
        return ParamSet(self.spec, np.asarray(theta, dtype=float), dict(self.partition))

    def to_json(self) -> dict:
        return {
            "version": PARAMSET_VERSION,
            "model": self.spec.kind,
            "spec": self.spec.to_dict(),
            "seed": self.spec.seed,
            "partition": {k: list(v) for k, v in self.partition.items()},
            "theta": [float(x) for x in self.theta],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ParamSet":
        if d.get("version") != PARAMSET_VERSION:
            raise ValueError(f"unsupported ParamSet version {d.get('version')!r}")
        spec = ModelSpec.from_dict(d["spec"])
        if d["model"] != spec.kind:
            raise ValueError("model field disagrees with spec.kind")
        part = {k: tuple(v) for k, v in d.get("partition", {}).items()}
        return cls(spec, np.array(d["theta"], dtype=float), part)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "ParamSet":
        return cls.from_json(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.spec.to_dict(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.theta).tobytes())
        return h.hexdigest()[:16]
