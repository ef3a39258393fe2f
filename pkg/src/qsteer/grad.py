"""Loss, gradients and the Adam training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .encoding import EncoderSpec
from .losses import cross_entropy
from .models.spec import ModelSpec, ParamSet

log = logging.getLogger(__name__)

INPUT_H = 1e-3
CURVE_FIELDS = ("epoch", "loss", "train_acc", "test_acc")


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 15
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    n_train: int = 500
    n_test: int = 200

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        for name in ("epochs", "batch_size", "n_train", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def loss(logits, label: int) -> float:
    logits = np.asarray(logits, dtype=float)
    if not 0 <= int(label) < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    return float(cross_entropy(logits[None], [int(label)])[0])


def param_grad(model, params, images, labels) -> np.ndarray:
    """Batch-mean loss gradient w.r.t. the trainable parameters."""
    images = np.asarray(images, dtype=float)
    if len(images) == 0:
        raise ValueError("empty batch")
    theta = params.theta if isinstance(params, ParamSet) else np.asarray(params, dtype=float)
    return model.loss_grad(theta, model.features(images), np.asarray(labels, dtype=int))[1]


def _generic_input_grad(model, theta, images, labels, h):
    B = len(images)
    shape = images.shape[1:]
    P = int(np.prod(shape))
    out = np.empty((B, P))
    eye = np.eye(P).reshape((P,) + shape) * h
    for b in range(B):
        xs = np.concatenate([images[b] + eye, images[b] - eye])
        ls = cross_entropy(model.logits(theta, xs), np.full(2 * P, labels[b]))
        out[b] = (ls[:P] - ls[P:]) / (2 * h)
    return out.reshape(images.shape)


def input_grad(model, params, images, labels, encoder: EncoderSpec | None = None,
               h: float = INPUT_H, method: str = "auto") -> np.ndarray:
    """Central-difference loss gradient w.r.t. every pixel of the undefended model.

    ``method="auto"`` uses the model's structured evaluation when it has one;
    ``"generic"`` perturbs each pixel through the full forward pass.
    """
    if encoder is not None and encoder.steered:
        raise ValueError("input gradients are taken on the undefended model")
    theta = params.theta if isinstance(params, ParamSet) else np.asarray(params, dtype=float)
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=int)
    single = images.ndim == len(model.input_shape)
    if single:
        images, labels = images[None], labels.reshape(1)
    if method == "auto" and hasattr(model, "input_grad"):
        g = model.input_grad(theta, images, labels, h)
    elif method in ("auto", "generic"):
        g = _generic_input_grad(model, theta, images, labels, h)
    else:
        raise ValueError(f"unknown method {method!r}")
    return g[0] if single else g


class Adam:
    def __init__(self, size: int, cfg: TrainConfig):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad**2
        mhat = self.m / (1 - c.beta1**self.t)
        vhat = self.v / (1 - c.beta2**self.t)
        return theta - c.lr * mhat / (np.sqrt(vhat) + c.eps)


def accuracy(model, theta, feats, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    pred = np.argmax(model.logits_from_features(theta, feats), axis=1)
    return float(np.mean(pred == labels))


def train(model, train_data, cfg: TrainConfig, test_data=None, init: ParamSet | None = None):
    """Minibatch Adam on cross-entropy.

    ``train_data``/``test_data`` are ``(images, labels)`` pairs or objects
    with ``images``/``labels``. Returns the final ParamSet and one curve row
    per epoch.
    """
    if isinstance(model, ModelSpec):
        from .models import build_model

        model = build_model(model)
    rng = np.random.default_rng(cfg.seed)
    params = init if init is not None else model.init_params(rng)
    x, y = _unpack(train_data)
    feats = model.features(x)
    if test_data is not None:
        xt, yt = _unpack(test_data)
        test_feats = model.features(xt)
    theta = params.theta.copy()
    opt = Adam(theta.size, cfg)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y))
        losses, weights = [], []
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, g = model.loss_grad(theta, feats[idx], y[idx])
            if not (np.isfinite(value) and np.all(np.isfinite(g))):
                raise NumericalError(f"loss diverged at epoch {epoch}, batch offset {start} (loss={value})")
            theta = opt.step(theta, g)
            losses.append(value)
            weights.append(len(idx))
        row = {
            "epoch": epoch,
            "loss": float(np.average(losses, weights=weights)),
            "train_acc": accuracy(model, theta, feats, y),
            "test_acc": accuracy(model, theta, test_feats, yt) if test_data is not None else float("nan"),
        }
        log.info("epoch %d loss %.4f train %.3f test %.3f", *row.values())
        curve.append(row)
    return params.with_theta(theta), curve


def _unpack(data):
    if hasattr(data, "images"):
        return np.asarray(data.images, dtype=float), np.asarray(data.labels, dtype=int)
    x, y = data
    return np.asarray(x, dtype=float), np.asarray(y, dtype=int)


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        w.writeheader()
        for row in curve:
            w.writerow({k: row[k] for k in CURVE_FIELDS})
