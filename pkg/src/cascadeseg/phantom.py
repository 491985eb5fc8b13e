"""Synthetic CT-like test volumes with known labels.

Each phantom is an ellipsoidal body on an air background, optionally
containing two disjoint ellipsoidal organs and a thin curved tube.  All
geometry is jittered per case from a seeded generator, so a (spec, seed)
pair is fully reproducible.  Intensities are HU-like with additive
Gaussian noise; the body stays well above a -200 threshold and air well
below it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .volume import LabelVolume, Volume3


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (64, 64, 64)  # (nx, ny, nz)
    spacing: tuple = (1.0, 1.0, 1.0)
    include_organs: bool = True
    include_vessel: bool = True
    noise_std: float = 20.0
    vessel_radius: float = 2.5  # voxels, before per-case jitter
    air_hu: float = -1000.0
    body_hu: float = 0.0
    organ_a_hu: float = 80.0
    organ_b_hu: float = -70.0
    vessel_hu: float = 130.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 48 for d in self.dims):
            raise GeometryError(
                f"recipe needs 3 axes of at least 48 voxels: {self.dims}"
            )
        if self.vessel_radius <= 0:
            raise ValueError("vessel_radius must be positive")

    @property
    def class_names(self) -> tuple:
        names = ["body"]
        if self.include_organs:
            names += ["organ_a", "organ_b"]
        if self.include_vessel:
            names.append("vessel")
        return tuple(names)

    @property
    def num_classes(self) -> int:
        return 1 + len(self.class_names)

    @property
    def vessel_label(self) -> int:
        if not self.include_vessel:
            raise ValueError("spec has no vessel class")
        return self.num_classes - 1


def _grids(dims):
    nx, ny, nz = dims
    z = np.arange(nz, dtype=np.float64).reshape(nz, 1, 1)
    y = np.arange(ny, dtype=np.float64).reshape(1, ny, 1)
    x = np.arange(nx, dtype=np.float64).reshape(1, 1, nx)
    return z, y, x


def _ellipsoid(dims, center, semi):
    # center/semi in (x, y, z) order; returns a [z, y, x] bool mask
    z, y, x = _grids(dims)
    cx, cy, cz = center
    ax, ay, az = semi
    q = ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - cz) / az) ** 2
    return q <= 1.0


def generate(spec: PhantomSpec, seed=None):
    """One phantom case as (image Volume3 int16, labels LabelVolume)."""
    if seed is None:
        seed = spec.seed
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    nx, ny, nz = (int(d) for d in spec.dims)
    dims = (nx, ny, nz)

    center = np.array([nx / 2, ny / 2, nz / 2]) + rng.uniform(-2, 2, 3)
    semi = np.array([0.36 * nx, 0.34 * ny, 0.38 * nz]) * rng.uniform(0.92, 1.08, 3)
    body = _ellipsoid(dims, center, semi)

    labels = np.zeros((nz, ny, nx), np.uint8)
    image = np.full((nz, ny, nx), spec.air_hu, np.float64)
    labels[body] = 1
    image[body] = spec.body_hu
    next_label = 2

    if spec.include_organs:
        # opposite x half-spaces; offsets and radii keep the pair disjoint
        # and strictly inside the body
        for sign, rho_lo, rho_hi, hu in (
            (-1.0, 0.18, 0.26, spec.organ_a_hu),
            (+1.0, 0.10, 0.16, spec.organ_b_hu),
        ):
            off = np.array(
                [
                    sign * rng.uniform(0.28, 0.40),
                    rng.uniform(-0.10, 0.10),
                    rng.uniform(-0.10, 0.10),
                ]
            )
            rho = rng.uniform(rho_lo, rho_hi, 3)
            organ = _ellipsoid(dims, center + off * semi, rho * semi)
            labels[organ] = next_label
            image[organ] = hu
            next_label += 1

    if spec.include_vessel:
        radius = spec.vessel_radius * rng.uniform(0.9, 1.1)
        amp = rng.uniform(0.15, 0.30, 2)
        phase = rng.uniform(0.0, 2 * np.pi, 2)
        freq = rng.uniform(1.0, 2.0)
        zfrac = rng.uniform(0.45, 0.58)
        z0 = int(np.ceil(center[2] - zfrac * semi[2]))
        z1 = int(np.floor(center[2] + zfrac * semi[2]))
        zs = np.arange(z0, z1 + 1, dtype=np.float64)
        t = (zs - center[2]) / semi[2]
        vx = center[0] + amp[0] * np.sin(freq * np.pi * t + phase[0]) * semi[0]
        vy = center[1] + amp[1] * np.sin(freq * np.pi * t + phase[1]) * semi[1]
        y = np.arange(ny, dtype=np.float64).reshape(1, ny, 1)
        x = np.arange(nx, dtype=np.float64).reshape(1, 1, nx)
        tube = (x - vx.reshape(-1, 1, 1)) ** 2 + (
            y - vy.reshape(-1, 1, 1)
        ) ** 2 <= radius**2
        sub = labels[z0 : z1 + 1]
        sub[tube] = next_label
        image[z0 : z1 + 1][tube] = spec.vessel_hu

    counts = np.bincount(labels.ravel(), minlength=spec.num_classes)
    if (counts[1:] == 0).any():
        raise RuntimeError(f"phantom geometry lost a class: counts {counts}")
    if ((labels > 1) & ~body).any():
        raise RuntimeError("phantom structure leaked outside the body")

    image += rng.normal(0.0, spec.noise_std, image.shape)
    image = np.clip(np.rint(image), -32768, 32767).astype(np.int16)
    return (
        Volume3(image, tuple(float(s) for s in spec.spacing)),
        LabelVolume(labels, tuple(float(s) for s in spec.spacing)),
    )


def generate_dataset(spec: PhantomSpec, count: int, seed: int = 0) -> list:
    """``count`` independent cases; case i uses child seed (seed, i)."""
    out = []
    for i in range(count):
        case_seed = np.random.SeedSequence([int(seed), i]).generate_state(1)[0]
        out.append(generate(spec, int(case_seed)))
    return out
