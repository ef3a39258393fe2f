"""White-box FGSM and PGD against the undefended model."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .grad import input_grad

PGD_ALPHA = 0.02
PGD_STEPS = 20


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float
    alpha: float = PGD_ALPHA
    steps: int = PGD_STEPS

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd"):
            raise ValueError(f"unknown attack {self.kind!r}")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    def with_epsilon(self, eps: float) -> "AttackSpec":
        return AttackSpec(self.kind, float(eps), self.alpha, self.steps)

    def to_dict(self) -> dict:
        return asdict(self)


def project(z, x, eps: float) -> np.ndarray:
    """Clip ``z`` into the L-inf ball of radius ``eps`` around ``x``, then into [0, 1].

    Float rounding in ``x + eps`` can leave ``|z - x|`` one ulp above ``eps``;
    such entries are nudged back toward ``x``.
    """
    z = np.clip(np.clip(z, x - eps, x + eps), 0.0, 1.0)
    bad = np.abs(z - x) > eps
    while np.any(bad):
        z[bad] = np.nextafter(z[bad], x[bad])
        bad = np.abs(z - x) > eps
    return z


def _signed_grad(model, params, x, labels, grad_fn):
    g = grad_fn(x) if grad_fn is not None else input_grad(model, params, x, labels)
    return np.sign(g)


def fgsm(model, params, images, labels, eps: float, grad_fn=None) -> np.ndarray:
    x = np.asarray(images, dtype=float)
    return project(x + eps * _signed_grad(model, params, x, labels, grad_fn), x, eps)


def pgd(model, params, images, labels, spec: AttackSpec, grad_fn=None) -> np.ndarray:
    x = np.asarray(images, dtype=float)
    z = x.copy()
    for _ in range(spec.steps):
        z = project(z + spec.alpha * _signed_grad(model, params, z, labels, grad_fn), x, spec.epsilon)
    return z


def run_attack(model, params, images, labels, spec: AttackSpec, grad_fn=None) -> np.ndarray:
    if spec.kind == "fgsm":
        return fgsm(model, params, images, labels, spec.epsilon, grad_fn)
    return pgd(model, params, images, labels, spec, grad_fn)


def predict(model, params, images, encoder=None) -> np.ndarray:
    theta = getattr(params, "theta", params)
    return np.argmax(model.logits(theta, np.asarray(images, dtype=float), encoder), axis=1)


def attack_curve(model, params, images, labels, spec: AttackSpec, eps_list, encoder=None):
    """Accuracy per epsilon on undefended and (optionally) defended inference.

    Adversarial sets are always crafted on the undefended model. Each row
    carries the per-sample predictions it was computed from.
    """
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(labels) == 0:
        raise ValueError("empty dataset")
    rows = []
    for eps in eps_list:
        s = spec.with_epsilon(eps)
        adv = images if eps == 0 else run_attack(model, params, images, labels, s)
        row = {"attack": s.kind, "epsilon": float(eps)}
        pred = predict(model, params, adv)
        row["undefended"] = float(np.mean(pred == labels))
        row["pred_undefended"] = pred
        if encoder is not None:
            pred_d = predict(model, params, adv, encoder)
            row["defended"] = float(np.mean(pred_d == labels))
            row["pred_defended"] = pred_d
        rows.append(row)
    return rows


def _npy_path(path) -> Path:
    # names like adv_pgd_0.1 carry a dot, so append rather than replace the suffix
    path = Path(path)
    return path if path.suffix == ".npy" else path.with_name(path.name + ".npy")


def save_adversarial(path, adv, spec: AttackSpec, model_hash: str, seed: int) -> Path:
    path = _npy_path(path)
    np.save(path, np.asarray(adv, dtype=float))
    meta = {"attack": spec.to_dict(), "model_hash": model_hash, "seed": int(seed), "shape": list(np.shape(adv))}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1))
    return path


def load_adversarial(path):
    path = _npy_path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing adversarial set {path}")
    meta = json.loads(path.with_suffix(".json").read_text())
    return np.load(path), meta
