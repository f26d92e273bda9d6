"""Classification losses over soft targets: cross-entropy and KL divergence.

Both are numerically stabilized through max-subtracted log-softmax and reduce
by the batch mean. Targets enter as plain probability arrays, never as graph
nodes, so no gradient can leak into stored supervision.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, ShapeError, _accum

SIMPLEX_TOL = 1e-6


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def validate_soft_labels(labels: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    """Reject label rows that leave the probability simplex beyond ``tol``."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"soft labels must be (B, C), got {labels.shape}")
    sums = labels.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"soft label rows must sum to 1 within {tol}, worst deviation {worst:.3g}")
    if np.any(labels < -tol):
        raise ValueError(f"soft label entries must be non-negative, min {float(labels.min()):.3g}")


def one_hot(class_ids: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    class_ids = np.asarray(class_ids)
    out = np.zeros((class_ids.size, num_classes), dtype=dtype)
    out[np.arange(class_ids.size), class_ids] = 1.0
    return out


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Batch-mean of -sum_c y_c * log softmax(logits)_c for soft targets."""
    targets = np.asarray(targets, dtype=logits.dtype)
    if logits.ndim != 2 or targets.shape != logits.shape:
        raise ShapeError(f"logits {logits.shape} and targets {targets.shape} must both be (B, C)")
    validate_soft_labels(targets)
    b = logits.shape[0]
    logp = log_softmax(logits.data, axis=1)
    out_data = np.asarray(-(targets * logp).sum(axis=1).mean(), dtype=logits.dtype)

    def backward(g):
        probs = np.exp(logp)
        _accum(logits, g * (probs - targets) / b)

    return Tensor._make(out_data, (logits,), backward)


def kl_div_with_logits(target_probs: np.ndarray, logits: Tensor) -> Tensor:
    """Batch-mean KL(target_probs || softmax(logits)); grads hit logits only."""
    target_probs = np.asarray(target_probs, dtype=logits.dtype)
    if logits.ndim != 2 or target_probs.shape != logits.shape:
        raise ShapeError(f"logits {logits.shape} and target probs {target_probs.shape} must both be (B, C)")
    b = logits.shape[0]
    logp = log_softmax(logits.data, axis=1)
    # 0 * log 0 := 0
    qlogq = np.where(target_probs > 0, target_probs * np.log(np.clip(target_probs, 1e-300, None)), 0.0)
    out_data = np.asarray((qlogq - target_probs * logp).sum(axis=1).mean(), dtype=logits.dtype)

    def backward(g):
        probs = np.exp(logp)
        _accum(logits, g * (probs - target_probs) / b)

    return Tensor._make(out_data, (logits,), backward)
