"""Training-time geometric augmentation and subvolume sampling.

A smooth random displacement field is defined on a coarse control lattice
and interpolated trilinearly to every voxel.  On top of that an in-plane
rotation about the volume center plus a 3D translation may be applied.
Images are resampled with trilinear interpolation (border values clamp),
label maps with nearest neighbour (outside maps to background 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidMode, NoForeground, ShapeError
from .network import NetworkConfig, output_shape
from .volume import BinaryMask, LabelVolume, Volume3, extract_mirror


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    max_disp: float = 4.0  # voxels, per control point component
    grid_spacing: int = 32  # voxels between control points
    rot_deg: float = 5.0
    trans_vox: float = 20.0
    distribution: str = "uniform"  # or "normal" (std = max_disp)

    def __post_init__(self):
        if self.grid_spacing < 1:
            raise ValueError("grid_spacing must be at least 1")
        if min(self.max_disp, self.rot_deg, self.trans_vox) < 0:
            raise ValueError("magnitudes must be non-negative")
        if self.distribution not in ("uniform", "normal"):
            raise InvalidMode(f"unknown distribution {self.distribution!r}")


@dataclass
class DeformationField:
    """Control-point displacements (dz, dy, dx) on a regular lattice."""

    node_disp: np.ndarray  # (3, gz, gy, gx) float64, voxel units
    spacing: int
    dims: tuple  # (nx, ny, nz) of the target volume

    def dense(self) -> np.ndarray:
        """Per-voxel displacement (3, nz, ny, nx) by trilinear interpolation."""
        nx, ny, nz = self.dims
        zz, yy, xx = np.meshgrid(
            np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij"
        )
        coords = [c.astype(np.float64) / self.spacing for c in (zz, yy, xx)]
        out = np.empty((3, nz, ny, nx))
        for c in range(3):
            out[c] = ndimage.map_coordinates(
                self.node_disp[c], coords, order=1, mode="nearest"
            )
        return out


@dataclass(frozen=True)
class RigidTransform:
    angle_deg: float  # rotation in the x-y plane about the volume center
    shift: tuple  # (tx, ty, tz) voxels


def _node_counts(dims, spacing) -> tuple:
    nx, ny, nz = dims
    return tuple(int(np.ceil((n - 1) / spacing)) + 1 for n in (nz, ny, nx))


def sample_deformation(dims, cfg: AugmentConfig, rng) -> DeformationField:
    gz, gy, gx = _node_counts(dims, cfg.grid_spacing)
    if cfg.distribution == "uniform":
        disp = rng.uniform(-cfg.max_disp, cfg.max_disp, (3, gz, gy, gx))
    else:
        disp = rng.normal(0.0, cfg.max_disp, (3, gz, gy, gx))
    return DeformationField(disp, cfg.grid_spacing, tuple(int(d) for d in dims))


def sample_rigid(cfg: AugmentConfig, rng) -> RigidTransform:
    angle = float(rng.uniform(-cfg.rot_deg, cfg.rot_deg))
    shift = rng.uniform(-cfg.trans_vox, cfg.trans_vox, 3)
    return RigidTransform(angle, tuple(float(s) for s in shift))


def _sample_coords(vol, field, rigid):
    """Input-space lookup coordinates for every output voxel.

    Output voxel o samples the input at R(-angle)((o + d(o)) - c) + c - t,
    so content visibly rotates by +angle and shifts by +t.
    """
    nz, ny, nx = vol.data.shape
    zz, yy, xx = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nx, dtype=np.float64),
        indexing="ij",
    )
    if field is not None:
        if field.dims != vol.dims:
            raise ShapeError(f"field dims {field.dims} vs volume {vol.dims}")
        d = field.dense()
        zz, yy, xx = zz + d[0], yy + d[1], xx + d[2]
    if rigid is not None:
        cx, cy = (nx - 1) / 2, (ny - 1) / 2
        th = np.deg2rad(rigid.angle_deg)
        ct, st = np.cos(th), np.sin(th)
        tx, ty, tz = rigid.shift
        px, py = xx - cx, yy - cy
        xx = ct * px + st * py + cx - tx
        yy = -st * px + ct * py + cy - ty
        zz = zz - tz
    return [zz, yy, xx]


def _warp_image(data, coords):
    img = ndimage.map_coordinates(
        data.astype(np.float32), coords, order=1, mode="nearest"
    )
    return img.astype(np.float32)


def _warp_nearest(data, coords):
    # grid-constant keeps true nearest-neighbour lookups within half a
    # voxel of the border; anything farther out becomes background
    return ndimage.map_coordinates(data, coords, order=0, mode="grid-constant", cval=0)


def apply_transform(vol, labels=None, field=None, rigid=None):
    """Warp an image and optional labels by field then rigid motion."""
    coords = _sample_coords(vol, field, rigid)
    out_vol = Volume3(_warp_image(vol.data, coords), vol.spacing)
    if labels is None:
        return out_vol, None
    lab = _warp_nearest(labels.data, coords).astype(np.uint8)
    return out_vol, LabelVolume(lab, labels.spacing)


def warp_case(vol, labels, mask, field=None, rigid=None):
    """Warp an image, its labels, and a sampling mask with shared coords."""
    coords = _sample_coords(vol, field, rigid)
    out_vol = Volume3(_warp_image(vol.data, coords), vol.spacing)
    lab = LabelVolume(_warp_nearest(labels.data, coords).astype(np.uint8), labels.spacing)
    m = mask.data if isinstance(mask, BinaryMask) else np.asarray(mask, bool)
    warped = _warp_nearest(m.astype(np.uint8), coords).astype(bool)
    return out_vol, lab, BinaryMask(warped, vol.spacing)


def sample_subvolume(vol, labels, candidate, config: NetworkConfig, rng):
    """One training example centered on a random candidate voxel.

    Returns (x, y, m): network input (1, 1, dz, dy, dx) float32, label tile
    (1, oz, oy, ox) int64 and loss mask (1, oz, oy, ox) bool matching the
    network output window.  Tiles near the border are mirror-extended; the
    mask marks voxels that came from inside the volume.
    """
    cand = candidate.data if isinstance(candidate, BinaryMask) else np.asarray(candidate, bool)
    if cand.shape != vol.data.shape:
        raise ShapeError("candidate shape differs from volume")
    idx = np.flatnonzero(cand)
    if idx.size == 0:
        raise NoForeground("candidate mask is empty")
    center = np.unravel_index(int(idx[int(rng.integers(idx.size))]), cand.shape)

    in_xyz = config.input_tile
    out_xyz = output_shape(config)
    in_zyx = in_xyz[::-1]
    out_zyx = out_xyz[::-1]
    out_starts = [c - o // 2 for c, o in zip(center, out_zyx)]
    in_starts = [s - (i - o) // 2 for s, i, o in zip(out_starts, in_zyx, out_zyx)]

    x = extract_mirror(vol.data, in_starts, in_zyx).astype(np.float32)
    y = extract_mirror(labels.data, out_starts, out_zyx).astype(np.int64)
    m = np.zeros(out_zyx, bool)
    core = tuple(
        slice(max(0, -s), w - max(0, s + w - n))
        for n, s, w in zip(vol.data.shape, out_starts, out_zyx)
    )
    m[core] = True
    return x[None, None], y[None], m[None]
