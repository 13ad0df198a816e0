"""Cross-entropy losses, scalar form and batched graph nodes.

Probabilities are clamped to [PROB_EPS, 1-PROB_EPS] before any log. The
logit-space gradient of the clamped binary CE is (prob - label); the
multiclass analogue is (probs - onehot).
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, ValidationError
from .autodiff import Tensor, accumulate, sigmoid_np

PROB_EPS = 1e-7


def clamp_probs(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax: outputs are nonnegative and sum to 1 along ``axis``."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def binary_ce(prob: float, label: int) -> float:
    """Cross entropy of one binary prediction."""
    if label not in (0, 1):
        raise ValidationError(f"binary label must be 0 or 1, got {label!r}")
    p = float(clamp_probs(prob))
    return -(label * np.log(p) + (1 - label) * np.log(1.0 - p))


def multiclass_ce(probs, label: int) -> float:
    """Cross entropy of one categorical prediction given a distribution."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValidationError(f"probs must be a vector, got shape {probs.shape}")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValidationError(f"probs sum to {probs.sum():.12f}, not 1")
    if not 0 <= label < probs.shape[0]:
        raise ValidationError(f"label {label} out of range for {probs.shape[0]} classes")
    return -float(np.log(clamp_probs(probs[label])))


def binary_ce_logits(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted sum of binary cross entropies over a flat logit vector.

    ``weights`` folds in both masking and normalisation; entries with zero
    weight contribute nothing in either direction.
    """
    if logits.data.ndim != 1:
        raise ShapeError(f"binary_ce_logits: logits must be flat, got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if labels.shape != logits.data.shape or weights.shape != logits.data.shape:
        raise ShapeError(
            f"binary_ce_logits: logits {logits.data.shape}, labels {labels.shape}, "
            f"weights {weights.shape} must match")
    probs = clamp_probs(sigmoid_np(logits.data))
    ce = -(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs))
    out = Tensor((weights * ce).sum(), requires_grad=logits.requires_grad, parents=(logits,))
    if out.requires_grad:
        out._backward = lambda g: accumulate(logits, g * weights * (probs - labels))
    return out


def softmax_ce_logits(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted sum of softmax cross entropies over (N, C) logits."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_ce_logits: logits must be (N, C), got {logits.data.shape}")
    n, c = logits.data.shape
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if labels.shape != (n,) or weights.shape != (n,):
        raise ShapeError(
            f"softmax_ce_logits: logits {logits.data.shape}, labels {labels.shape}, "
            f"weights {weights.shape} must match")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValidationError(f"class labels must lie in [0, {c}), got range "
                              f"[{labels.min()}, {labels.max()}]")
    probs = softmax_np(logits.data, axis=1)
    picked = clamp_probs(probs[np.arange(n), labels])
    out = Tensor((weights * -np.log(picked)).sum(),
                 requires_grad=logits.requires_grad, parents=(logits,))
    if out.requires_grad:
        def _bwd(g):
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            accumulate(logits, g * weights[:, None] * d)
        out._backward = _bwd
    return out
