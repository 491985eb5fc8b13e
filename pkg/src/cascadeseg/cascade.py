"""Candidate-region generation and the dilation-radius trade-off analysis.

Stage 1 restricts learning and inference to the patient's body; stage 2
restricts them further to a dilated version of the stage-1 foreground.
The radius sweep quantifies how recall and false-positive rate grow with
the dilation radius so a good trade-off can be picked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoForeground
from .metrics import sensitivity_fpr
from .volume import (
    BinaryMask,
    LabelVolume,
    Volume3,
    dilate_ball,
    fill_holes_3d,
    largest_component,
    threshold,
)


@dataclass(frozen=True)
class CascadeConfig:
    body_threshold: float = -200.0  # HU
    dilation_radius: int = 3  # voxels
    stage: int = 1

    def __post_init__(self):
        if self.dilation_radius < 0:
            raise ValueError("dilation_radius must be non-negative")
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")


@dataclass
class CandidateRegion:
    mask: BinaryMask

    @property
    def voxel_fraction(self) -> float:
        return self.mask.fraction


def body_mask(ct: Volume3, config: CascadeConfig = CascadeConfig()) -> CandidateRegion:
    """Threshold, keep the largest component, then fill internal holes."""
    rough = threshold(ct, config.body_threshold)
    if not rough.data.any():
        raise NoForeground(
            f"nothing above body threshold {config.body_threshold}"
        )
    return CandidateRegion(fill_holes_3d(largest_component(rough)))


def candidate_from_prediction(
    pred_labels: LabelVolume, r: int, foreground_min_label: int = 1
) -> CandidateRegion:
    """Dilate the predicted foreground by a ball of radius r voxels.

    foreground_min_label lets callers whose label scheme reserves low
    indices for in-body background raise the cut; the default treats
    every nonzero label as foreground.
    """
    fg = BinaryMask(pred_labels.data >= foreground_min_label, pred_labels.spacing)
    return CandidateRegion(dilate_ball(fg, r))


def recall_fpr(candidate: BinaryMask, gt: LabelVolume, k: int) -> tuple:
    """Per-class recall and false-positive rate of a candidate region."""
    return sensitivity_fpr(candidate, gt, k)


def radius_curve(
    pred: LabelVolume, gt: LabelVolume, r_max: int, classes=None
) -> list:
    """Rows (r, class, recall, fpr) for r = 0..r_max.

    Classes default to the foreground labels present in the ground truth.
    """
    if r_max < 0:
        raise ValueError("r_max must be non-negative")
    if classes is None:
        classes = [int(k) for k in np.unique(gt.data) if k != 0]
    rows = []
    for r in range(r_max + 1):
        cand = candidate_from_prediction(pred, r)
        for k in classes:
            rec, fpr = recall_fpr(cand.mask, gt, k)
            rows.append((r, int(k), rec, fpr))
    return rows


def curve_text(rows) -> str:
    lines = ["r\tclass\trecall\tfpr"]
    for r, k, rec, fpr in rows:
        lines.append(f"{r}\t{k}\t{rec:.6f}\t{fpr:.6f}")
    return "\n".join(lines) + "\n"
