"""Volume containers and the grid / morphology primitives built on them.

Array data is indexed ``[z, y, x]`` in C order, so the flat memory layout is
x-fastest and matches the raw on-disk byte order one to one.  Every tuple in
the public API (dims, spacing, margins, tile sizes) is ordered ``(x, y, z)``;
``xyz_to_zyx`` converts at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateVolume, InvalidMode, NoForeground, PadTooLarge


def xyz_to_zyx(t):
    """Reverse an (x, y, z) tuple into array axis order."""
    return tuple(t)[::-1]


def zyx_to_xyz(t):
    return tuple(t)[::-1]


def _check_grid(data: np.ndarray, spacing) -> None:
    if data.ndim != 3:
        raise DegenerateVolume(f"expected 3 axes, got {data.ndim}")
    if min(data.shape) < 1:
        raise DegenerateVolume(f"zero-sized axis in dims {zyx_to_xyz(data.shape)}")
    if len(spacing) != 3 or min(spacing) <= 0:
        raise DegenerateVolume(f"non-positive spacing {spacing}")


@dataclass
class Volume3:
    """Scalar 3D image on a regular grid.

    ``data`` holds intensities indexed ``[z, y, x]``; dtype is int16 for raw
    CT and float32 for anything derived.  ``spacing`` is (sx, sy, sz) in mm.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.spacing = tuple(float(s) for s in self.spacing)
        _check_grid(self.data, self.spacing)

    @property
    def dims(self) -> tuple:
        """Grid size as (nx, ny, nz)."""
        return zyx_to_xyz(self.data.shape)


@dataclass
class LabelVolume:
    """Per-voxel class indices (small non-negative ints) on a regular grid."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.spacing = tuple(float(s) for s in self.spacing)
        if not np.issubdtype(self.data.dtype, np.integer):
            raise DegenerateVolume(f"label dtype must be integer, got {self.data.dtype}")
        self.data = self.data.astype(np.uint8, copy=False)
        _check_grid(self.data, self.spacing)

    @property
    def dims(self) -> tuple:
        return zyx_to_xyz(self.data.shape)

    @property
    def num_classes(self) -> int:
        """1 + highest label present."""
        return int(self.data.max()) + 1


@dataclass
class BinaryMask:
    """Boolean voxel mask on a regular grid."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.spacing = tuple(float(s) for s in self.spacing)
        self.data = self.data.astype(bool, copy=False)
        _check_grid(self.data, self.spacing)

    @property
    def dims(self) -> tuple:
        return zyx_to_xyz(self.data.shape)

    @property
    def count(self) -> int:
        return int(self.data.sum())

    @property
    def fraction(self) -> float:
        return self.count / self.data.size


# grid resampling ------------------------------------------------------------


def resample_down2(vol, mode: str = "linear"):
    """Downsample by a factor of 2 per axis; output dims are floor(dims/2).

    ``linear`` averages each 2x2x2 block (Volume3 only, returns float32);
    ``nearest`` keeps the block's (0, 0, 0) corner voxel and preserves the
    input kind.  Trailing odd slices are dropped.  Spacing doubles.
    """
    if mode not in ("linear", "nearest"):
        raise InvalidMode(f"resample mode {mode!r}")
    d = vol.data
    oz, oy, ox = d.shape[0] // 2, d.shape[1] // 2, d.shape[2] // 2
    if min(oz, oy, ox) < 1:
        raise DegenerateVolume(f"dims {vol.dims} too small to halve")
    sp = tuple(2.0 * s for s in vol.spacing)
    if mode == "nearest":
        out = np.ascontiguousarray(d[: 2 * oz : 2, : 2 * oy : 2, : 2 * ox : 2])
        return type(vol)(out, sp)
    if not isinstance(vol, Volume3):
        raise InvalidMode("linear resampling is only defined for scalar volumes")
    blocks = d[: 2 * oz, : 2 * oy, : 2 * ox].reshape(oz, 2, oy, 2, ox, 2)
    out = blocks.mean(axis=(1, 3, 5), dtype=np.float64).astype(np.float32)
    return Volume3(out, sp)


def _axis_coords(n_out: int, n_in: int, mode: str) -> np.ndarray:
    if mode == "nearest":
        return (np.arange(n_out) * n_in) // n_out
    if n_out == 1:
        return np.zeros(1)
    # endpoint-aligned so linear content stays exactly linear
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def upsample(vol, target_dims: tuple, mode: str = "linear"):
    """Resize to ``target_dims`` (nx, ny, nz) by nearest or trilinear sampling."""
    if mode not in ("linear", "nearest"):
        raise InvalidMode(f"resample mode {mode!r}")
    if mode == "linear" and not isinstance(vol, Volume3):
        raise InvalidMode("linear resampling is only defined for scalar volumes")
    tz, ty, tx = xyz_to_zyx(target_dims)
    if min(tz, ty, tx) < 1:
        raise DegenerateVolume(f"target dims {target_dims}")
    d = vol.data
    sp = tuple(s * n / t for s, n, t in zip(vol.spacing, vol.dims, target_dims))
    if mode == "nearest":
        iz = _axis_coords(tz, d.shape[0], "nearest")
        iy = _axis_coords(ty, d.shape[1], "nearest")
        ix = _axis_coords(tx, d.shape[2], "nearest")
        return type(vol)(np.ascontiguousarray(d[np.ix_(iz, iy, ix)]), sp)
    cz = _axis_coords(tz, d.shape[0], "linear")
    cy = _axis_coords(ty, d.shape[1], "linear")
    cx = _axis_coords(tx, d.shape[2], "linear")
    grid = np.meshgrid(cz, cy, cx, indexing="ij")
    out = ndimage.map_coordinates(
        d.astype(np.float32, copy=False), grid, order=1, mode="nearest"
    )
    return Volume3(out.astype(np.float32, copy=False), sp)


def extract_mirror(arr: np.ndarray, starts, sizes) -> np.ndarray:
    """Window [start, start+size) per [z, y, x] axis, mirrored past the edges."""
    pads = []
    for n, s, w in zip(arr.shape, starts, sizes):
        lo = max(0, -s)
        hi = max(0, s + w - n)
        if lo >= n or hi >= n:
            raise PadTooLarge(
                f"window [{s}, {s + w}) needs pad {max(lo, hi)} >= dim {n}"
            )
        pads.append((lo, hi))
    if any(p != (0, 0) for p in pads):
        arr = np.pad(arr, pads, mode="reflect")
    sl = tuple(slice(s + p[0], s + p[0] + w) for s, p, w in zip(starts, pads, sizes))
    return arr[sl]


# thresholding and morphology ------------------------------------------------


def threshold(vol: Volume3, level: float) -> BinaryMask:
    """Voxels with intensity >= level."""
    return BinaryMask(vol.data >= level, vol.spacing)


def fill_holes_3d(mask: BinaryMask) -> BinaryMask:
    """Fill background cavities not 6-connected to the volume border."""
    return BinaryMask(ndimage.binary_fill_holes(mask.data), mask.spacing)


def largest_component(mask: BinaryMask) -> BinaryMask:
    """Keep the largest 6-connected component; size ties go to the component
    whose first voxel comes earliest in scan order."""
    labels, n = ndimage.label(mask.data)
    if n == 0:
        raise NoForeground("mask has no true voxels")
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    # ndimage.label numbers components in scan order, argmax keeps the first tie
    return BinaryMask(labels == int(np.argmax(counts)), mask.spacing)


def dilate_ball(mask: BinaryMask, r: float) -> BinaryMask:
    """Dilate by a Euclidean ball: true where some input-true voxel lies
    within center distance r (voxel units)."""
    if r < 0:
        raise InvalidMode(f"negative dilation radius {r}")
    if r == 0 or not mask.data.any():
        return BinaryMask(mask.data.copy(), mask.spacing)
    dist = ndimage.distance_transform_edt(~mask.data)
    return BinaryMask(dist <= float(r), mask.spacing)


def mirror_pad(vol, margins_xyz):
    """Pad by reflection without repeating the border voxel.

    ``margins_xyz`` is ((x_lo, x_hi), (y_lo, y_hi), (z_lo, z_hi)); every
    margin must be smaller than the axis length.
    """
    margins = [(int(lo), int(hi)) for lo, hi in margins_xyz]
    pad_zyx = xyz_to_zyx(margins)
    for width, n in zip(pad_zyx, vol.data.shape):
        if min(width) < 0:
            raise PadTooLarge(f"negative margin {width}")
        if max(width) >= n:
            raise PadTooLarge(f"margin {max(width)} >= axis length {n}")
    out = np.pad(vol.data, pad_zyx, mode="reflect")
    return type(vol)(out, vol.spacing)
