"""Sliding-window inference over whole volumes.

The network maps a fixed input tile to a smaller output tile, so a volume
is covered by a grid of output regions whose input windows extend past
them; border windows mirror into the volume.  Overlapping predictions are
fused by averaging per-voxel class probabilities; the label map is the
per-voxel argmax with ties to the lowest class.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .cascade import CascadeConfig, body_mask, candidate_from_prediction
from .errors import EngineError, InvalidMode, ShapeError
from .loss import softmax
from .network import UNet, output_shape
from .volume import (
    BinaryMask,
    LabelVolume,
    Volume3,
    extract_mirror,
    resample_down2,
    upsample,
    xyz_to_zyx,
)

MODES = ("none", "xy_half")


@dataclass
class TilePlan:
    input_dims: tuple  # (x, y, z)
    output_dims: tuple  # (x, y, z)
    origins: list  # output-region origins, (x, y, z) each
    mode: str
    margins: tuple  # ((xl, xh), (yl, yh), (zl, zh)) input overhang per face
    vol_dims: tuple  # (x, y, z)


def _axis_starts(n: int, out: int, half: bool) -> list:
    count = -(-n // out)  # ceil; last tile may overhang into padding
    if not half:
        return [i * out for i in range(count)]
    if out % 2:
        raise ShapeError(f"half-stride tiling needs an even output dim, got {out}")
    return [i * (out // 2) for i in range(2 * count - 1)]


def plan_tiles(vol_dims, config, mode: str = "none", restrict=None) -> TilePlan:
    """Output-region grid covering the volume, optionally restricted.

    Mode none strides by the full output tile (disjoint regions);
    xy_half strides by half a tile in x and y so interior voxels are
    predicted four times.  Tiles whose output region misses ``restrict``
    are dropped.
    """
    if mode not in MODES:
        raise InvalidMode(f"overlap mode {mode!r}, expected one of {MODES}")
    nx, ny, nz = (int(d) for d in vol_dims)
    if min(nx, ny, nz) < 1:
        raise ShapeError(f"volume dims {vol_dims}")
    in_xyz = config.input_tile
    out_xyz = output_shape(config)
    margins = tuple(
        ((i - o) // 2, (i - o) - (i - o) // 2) for i, o in zip(in_xyz, out_xyz)
    )
    half = mode == "xy_half"
    xs = _axis_starts(nx, out_xyz[0], half)
    ys = _axis_starts(ny, out_xyz[1], half)
    zs = _axis_starts(nz, out_xyz[2], False)

    rmask = None
    if restrict is not None:
        rmask = restrict.data if isinstance(restrict, BinaryMask) else np.asarray(restrict, bool)
        if rmask.shape != (nz, ny, nx):
            raise ShapeError("restrict mask does not match volume dims")

    origins = []
    for z in zs:
        for y in ys:
            for x in xs:
                if rmask is not None:
                    window = rmask[
                        z : min(z + out_xyz[2], nz),
                        y : min(y + out_xyz[1], ny),
                        x : min(x + out_xyz[0], nx),
                    ]
                    if not window.any():
                        continue
                origins.append((x, y, z))
    return TilePlan(tuple(in_xyz), tuple(out_xyz), origins, mode, margins, (nx, ny, nz))


def coverage_counts(plan: TilePlan) -> np.ndarray:
    """Per-voxel count of covering output regions, [z, y, x] layout."""
    nx, ny, nz = plan.vol_dims
    ox, oy, oz = plan.output_dims
    counts = np.zeros((nz, ny, nx), np.int32)
    for x, y, z in plan.origins:
        counts[z : z + oz, y : y + oy, x : x + ox] += 1
    return counts


class FusionAccumulator:
    """Running per-voxel probability sums and coverage counts."""

    def __init__(self, num_classes: int, vol_dims):
        nx, ny, nz = vol_dims
        self.sums = np.zeros((num_classes, nz, ny, nx), np.float64)
        self.counts = np.zeros((nz, ny, nx), np.int32)

    def add(self, probs: np.ndarray, origin_xyz):
        """Accumulate one tile's (K, oz, oy, ox) probabilities at origin."""
        if probs.shape[0] != self.sums.shape[0]:
            raise ShapeError("class count mismatch")
        start = xyz_to_zyx(origin_xyz)
        src, dst = [], []
        for s, w, n in zip(start, probs.shape[1:], self.counts.shape):
            if s >= n or s + w <= 0:
                return  # entirely in the padding
            src.append(slice(max(0, -s), min(w, n - s)))
            dst.append(slice(max(0, s), min(n, s + w)))
        self.sums[(slice(None), *dst)] += probs[(slice(None), *src)]
        self.counts[tuple(dst)] += 1

    def finalize(self, restrict=None, spacing=(1.0, 1.0, 1.0)):
        """Average into (probabilities, labels); outside voxels -> background."""
        requested = (
            restrict.data if isinstance(restrict, BinaryMask) else restrict
        )
        if requested is None:
            requested = np.ones(self.counts.shape, bool)
        if (self.counts[requested] < 1).any():
            raise EngineError("requested voxels left uncovered by the tile plan")
        probs = np.zeros(self.sums.shape, np.float32)
        probs[0] = 1.0
        covered = requested & (self.counts > 0)
        probs[:, covered] = (
            self.sums[:, covered] / self.counts[covered]
        ).astype(np.float32)
        labels = np.argmax(probs, axis=0).astype(np.uint8)
        return probs, LabelVolume(labels, spacing)


def predict_volume(net: UNet, vol: Volume3, plan: TilePlan, restrict=None):
    """Tile-by-tile forward pass fused into whole-volume predictions.

    Returns (probs (K, nz, ny, nx) float32, labels LabelVolume).
    """
    if tuple(plan.input_dims) != tuple(net.config.input_tile):
        raise ShapeError(
            f"plan input {plan.input_dims} vs network {net.config.input_tile}"
        )
    if tuple(plan.vol_dims) != vol.dims:
        raise ShapeError(f"plan dims {plan.vol_dims} vs volume {vol.dims}")
    in_zyx = xyz_to_zyx(plan.input_dims)
    lo = tuple(m[0] for m in plan.margins)  # (x, y, z)
    acc = FusionAccumulator(net.config.num_classes, plan.vol_dims)
    data = vol.data.astype(np.float32, copy=False)
    for origin in plan.origins:
        in_start = xyz_to_zyx(tuple(o - m for o, m in zip(origin, lo)))
        tile = extract_mirror(data, in_start, in_zyx)
        logits = net.forward(tile[None, None], training=False)
        acc.add(softmax(logits)[0], origin)
    return acc.finalize(restrict=restrict, spacing=vol.spacing)


def two_stage_predict(
    net1: UNet,
    net2: UNet,
    ct: Volume3,
    config: CascadeConfig = CascadeConfig(),
    stage2_mode: str = "none",
    foreground_min_label: int = 1,
):
    """Coarse-to-fine prediction on a full-resolution CT volume.

    The volume is halved, masked to the body, segmented coarsely, and
    segmented again inside the dilated stage-1 foreground; the fused
    result is resampled back to the input grid (labels nearest,
    probabilities trilinear).  Returns (labels, probs, info) where info
    carries per-stage seconds, candidate fractions, and the half-grid
    intermediates.
    """
    if net1.config.num_classes != net2.config.num_classes:
        raise ShapeError("stage checkpoints disagree on the number of classes")
    k = net1.config.num_classes

    t0 = time.perf_counter()
    half = resample_down2(ct, "linear")
    c1 = body_mask(half, config)
    plan1 = plan_tiles(half.dims, net1.config, "none", restrict=c1.mask)
    probs1, labels1 = predict_volume(net1, half, plan1, restrict=c1.mask)
    t1 = time.perf_counter()

    info = {
        "c1_fraction": c1.voxel_fraction,
        "stage1_labels": labels1,
        "stage1_seconds": t1 - t0,
    }
    c2 = candidate_from_prediction(labels1, config.dilation_radius, foreground_min_label)
    info["c2_fraction"] = c2.voxel_fraction
    nz, ny, nx = xyz_to_zyx(ct.dims)
    if not c2.mask.data.any():
        warnings.warn("stage-1 prediction has no foreground; output is background")
        info["stage2_seconds"] = 0.0
        probs = np.zeros((k, nz, ny, nx), np.float32)
        probs[0] = 1.0
        return LabelVolume(np.zeros((nz, ny, nx), np.uint8), ct.spacing), probs, info

    plan2 = plan_tiles(half.dims, net2.config, stage2_mode, restrict=c2.mask)
    probs2, labels2 = predict_volume(net2, half, plan2, restrict=c2.mask)
    info["stage2_seconds"] = time.perf_counter() - t1
    info["stage2_labels_half"] = labels2

    labels_full = upsample(labels2, ct.dims, "nearest")
    probs_full = np.empty((k, nz, ny, nx), np.float32)
    for c in range(k):
        probs_full[c] = upsample(
            Volume3(probs2[c], half.spacing), ct.dims, "linear"
        ).data
    return labels_full, probs_full, info
