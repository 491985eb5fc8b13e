"""Class-balanced softmax cross-entropy over masked voxel regions.

The per-class weight counters a heavy foreground/background imbalance:
lambda_k = (1 - N_k / N_C) / (K - 1), where N_k counts class-k voxels inside
the region and N_C is the region size.  The weights sum to 1 and a class
absent from the region gets the maximal weight 1 / (K - 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyRegion, ShapeError

# probabilities are floored only inside the log; gradients stay exact
LOG_FLOOR = 1e-12


@dataclass
class ClassStats:
    """Voxel counts per class inside a region of interest."""

    counts: np.ndarray  # (K,) int64
    total: int  # region voxel count N_C


def class_stats(labels: np.ndarray, mask: np.ndarray | None, num_classes: int) -> ClassStats:
    """Count labels (any shape) inside ``mask``; mask=None means everywhere."""
    lab = labels if mask is None else labels[mask]
    counts = np.bincount(lab.ravel().astype(np.int64), minlength=num_classes)
    if counts.size > num_classes:
        raise ShapeError(f"label {counts.size - 1} out of range for {num_classes} classes")
    return ClassStats(counts.astype(np.int64), int(lab.size))


def class_weights(stats: ClassStats) -> np.ndarray:
    """Per-class loss weights lambda_k; float64, sums to exactly 1."""
    k = stats.counts.size
    if k < 2:
        raise ShapeError("class weighting needs at least 2 classes")
    if stats.total <= 0:
        raise EmptyRegion("class statistics cover no voxels")
    frac = stats.counts.astype(np.float64) / float(stats.total)
    return (1.0 - frac) / (k - 1)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Channel-axis softmax (axis 1), stabilized by max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def weighted_ce(
    probs: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    mask: np.ndarray | None = None,
):
    """Weighted cross-entropy over masked voxels.

    Args:
        probs: softmax output, (n, K, z, y, x).
        labels: class indices, (n, z, y, x).
        weights: lambda_k, shape (K,).
        mask: boolean (n, z, y, x); None means all voxels count.

    Returns:
        (loss, grad) where loss is a float and grad is the exact gradient of
        the loss with respect to the *logits* feeding the softmax:
        (lambda_label / N) * (p_j - [j == label]) inside the mask, 0 outside.
    """
    n, k = probs.shape[:2]
    if labels.shape != (n,) + probs.shape[2:]:
        raise ShapeError(f"label shape {labels.shape} does not match probs {probs.shape}")
    if weights.shape != (k,):
        raise ShapeError(f"weight shape {weights.shape}, expected ({k},)")
    if labels.max() >= k:
        raise ShapeError(f"label {int(labels.max())} out of range for {k} classes")
    if mask is None:
        mask = np.ones(labels.shape, bool)
    count = int(mask.sum())
    if count == 0:
        raise EmptyRegion("loss mask selects no voxels")

    scale = (weights[labels] * mask) / count  # lambda_label / N, gated
    idx = labels[:, None].astype(np.intp)
    p_true = np.take_along_axis(probs, idx, axis=1)[:, 0]
    loss = -np.sum(scale * np.log(np.maximum(p_true, LOG_FLOOR)), dtype=np.float64)

    grad = probs * scale[:, None]
    at_label = np.take_along_axis(grad, idx, axis=1)
    np.put_along_axis(grad, idx, at_label - scale[:, None], axis=1)
    return float(loss), grad
