"""Softmax cross-entropy on logit batches."""

import numpy as np


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels) -> np.ndarray:
    """Per-sample ``-log softmax(logits)[label]`` in nats."""
    lp = log_softmax(logits)
    labels = np.asarray(labels, dtype=int)
    return -np.take_along_axis(lp, labels[..., None], axis=-1)[..., 0]


def cross_entropy_grad(logits: np.ndarray, labels) -> np.ndarray:
    """d(per-sample loss)/d(logits)."""
    p = np.exp(log_softmax(logits))
    labels = np.asarray(labels, dtype=int)
    np.put_along_axis(p, labels[..., None], np.take_along_axis(p, labels[..., None], -1) - 1, -1)
    return p
