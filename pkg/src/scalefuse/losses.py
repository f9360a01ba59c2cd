"""Classification, attention-consistency and total losses with exact gradients.

Both losses are means over every element of their inputs, so a leading batch
axis turns them into batch means without changing the per-item definitions.
"""

import numpy as np

from .tensor import ShapeError


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def classification_loss(logits, labels):
    """Multi-label sigmoid cross-entropy averaged over classes.

    ``-(1/K) sum_k [y_k log s(z_k) + (1 - y_k) log(1 - s(z_k))]``, evaluated
    as ``max(z, 0) - y z + log1p(exp(-|z|))``.  Returns ``(loss, grad_logits)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeError(f"classification_loss: logits {z.shape} vs labels {y.shape}")
    per = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean()), (_sigmoid(z) - y) / z.size


def mac_loss(target, attn):
    """Mean squared difference between a fused target and student attention.

    For one ``(K+1, H, W)`` pair this is ``(1/(K+1)) sum_k ||F'_k - M_k||^2``
    with ``||.||^2`` the per-pixel mean.  The target carries no gradient.
    """
    t = np.asarray(target, dtype=np.float64)
    a = np.asarray(attn, dtype=np.float64)
    if t.shape != a.shape:
        raise ShapeError(f"mac_loss: target {t.shape} vs attention {a.shape}")
    diff = a - t
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def total_loss(cls: float, mac: float, alpha: float) -> float:
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    return cls + alpha * mac
