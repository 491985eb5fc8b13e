"""Overlap metrics and the per-class Dice report table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClassAbsent, InvalidMode, ShapeError
from .volume import BinaryMask, LabelVolume


def _as_bool(m) -> np.ndarray:
    return m.data if isinstance(m, BinaryMask) else np.asarray(m, bool)


def _class_mask(v, k) -> np.ndarray:
    """Boolean view of a mask, or of one class of a label volume."""
    if isinstance(v, BinaryMask):
        return v.data
    arr = v.data if isinstance(v, LabelVolume) else np.asarray(v)
    if arr.dtype == bool:
        return arr
    if k is None:
        raise InvalidMode("label input needs an explicit class index")
    return arr == k


def dice(pred, gt) -> float:
    """Dice overlap 2|A n B| / (|A| + |B|); two empty sets count as 1.0."""
    a, b = _as_bool(pred), _as_bool(gt)
    if a.shape != b.shape:
        raise ShapeError(f"dice shapes differ: {a.shape} vs {b.shape}")
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def sensitivity_fpr(pred, gt, k=None) -> tuple:
    """(sensitivity, false-positive rate) of a predicted set against truth.

    Inputs may be boolean masks or label volumes with a class index k.
    sensitivity = |pred n gt| / |gt|; fpr = |pred \\ gt| / |volume \\ gt|.
    """
    a, b = _class_mask(pred, k), _class_mask(gt, k)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    npos = int(b.sum())
    if npos == 0:
        raise ClassAbsent("ground truth mask is empty")
    nneg = b.size - npos
    recall = int((a & b).sum()) / npos
    fpr = 0.0 if nneg == 0 else int((a & ~b).sum()) / nneg
    return recall, fpr


_STAT_ROWS = ("Mean", "Std", "Median", "Min", "Max")


@dataclass
class DiceReport:
    """Per-case, per-class Dice values plus aggregate statistic rows."""

    class_names: list
    classes: list
    per_case: np.ndarray  # (cases, classes) float
    both_empty: np.ndarray  # (cases, classes) bool, flags Dice-1.0-by-absence

    def aggregates(self) -> dict:
        v = self.per_case
        return {
            "Mean": v.mean(axis=0),
            "Std": v.std(axis=0),  # population std
            "Median": np.median(v, axis=0),
            "Min": v.min(axis=0),
            "Max": v.max(axis=0),
        }

    def to_text(self) -> str:
        lines = ["\t".join(["case"] + list(self.class_names) + ["mean"])]
        for i, row in enumerate(self.per_case):
            cells = [
                f"{val:.4f}" + ("*" if self.both_empty[i, j] else "")
                for j, val in enumerate(row)
            ]
            lines.append("\t".join([f"{i:03d}"] + cells + [f"{row.mean():.4f}"]))
        for name, vals in self.aggregates().items():
            cells = [f"{v:.4f}" for v in vals]
            lines.append("\t".join([name] + cells + [f"{vals.mean():.4f}"]))
        return "\n".join(lines) + "\n"


def dice_table(pairs, class_names, classes=None) -> DiceReport:
    """Per-class Dice over (predicted, truth) LabelVolume pairs.

    ``class_names[j]`` names label value ``classes[j]``; by default the
    foreground labels 1..len(class_names).  A class absent from both volumes
    of a case scores 1.0 and is flagged.
    """
    if classes is None:
        classes = list(range(1, len(class_names) + 1))
    if len(classes) != len(class_names):
        raise ShapeError("class_names and classes lengths differ")
    values = np.zeros((len(pairs), len(classes)))
    empty = np.zeros_like(values, bool)
    for i, (pred, gt) in enumerate(pairs):
        p = pred.data if isinstance(pred, LabelVolume) else np.asarray(pred)
        g = gt.data if isinstance(gt, LabelVolume) else np.asarray(gt)
        for j, k in enumerate(classes):
            a, b = p == k, g == k
            values[i, j] = dice(a, b)
            empty[i, j] = not (a.any() or b.any())
    return DiceReport(list(class_names), list(classes), values, empty)
