"""Synthetic phantoms: analytic tubular/blob/plate structures with exact masks.

Every phantom is defined by a distance field d(p) to its centerline (or
center/plane). The ground-truth mask is exactly d <= radius; the image is
either the hard indicator or a gaussian cross-section exp(-d^2 / (2 r^2)),
optionally inverted (dark structure on bright background) and corrupted by
additive gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .volume import Volume3

KINDS = ("straight-tube", "bent-tube", "bifurcation", "blob", "plate")
PROFILES = ("hard", "gaussian-cross-section")
POLARITIES = ("bright-on-dark", "dark-on-bright")


@dataclass(frozen=True)
class PhantomSpec:
    kind: str
    radius: float  # mm
    dims: tuple[int, int, int] = (32, 32, 32)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    profile: str = "gaussian-cross-section"
    polarity: str = "bright-on-dark"
    noise_sigma: float = 0.0
    amplitude: float = 1.0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown phantom kind {self.kind!r}; expected one of {KINDS}")
        if self.profile not in PROFILES:
            raise ValidationError(f"unknown profile {self.profile!r}; expected one of {PROFILES}")
        if self.polarity not in POLARITIES:
            raise ValidationError(
                f"unknown polarity {self.polarity!r}; expected one of {POLARITIES}"
            )
        extents = [n * s for n, s in zip(self.dims, self.spacing)]
        if not 0 < self.radius < min(extents) / 4:
            raise ValidationError(
                f"radius must be in (0, min extent / 4) = (0, {min(extents) / 4}), "
                f"got {self.radius}"
            )
        if self.noise_sigma < 0:
            raise ValidationError(f"noise sigma must be >= 0, got {self.noise_sigma}")


def _grid_mm(spec: PhantomSpec):
    """Voxel-center coordinates in mm, broadcastable to the full grid."""
    ax = [np.arange(n, dtype=np.float64) * s for n, s in zip(spec.dims, spec.spacing)]
    return np.meshgrid(*ax, indexing="ij")


def _segment_distance(px, py, pz, a, b):
    """Distance from each grid point to the 3D segment a-b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab)
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1] + (pz - a[2]) * ab[2]) / denom
    t = np.clip(t, 0.0, 1.0)
    dx = px - (a[0] + t * ab[0])
    dy = py - (a[1] + t * ab[1])
    dz = pz - (a[2] + t * ab[2])
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def _distance_field(spec: PhantomSpec) -> np.ndarray:
    px, py, pz = _grid_mm(spec)
    ex, ey, ez = (n * s for n, s in zip(spec.dims, spec.spacing))
    # center of the voxel-center bounding box
    cx, cy, cz = ((n - 1) * s / 2 for n, s in zip(spec.dims, spec.spacing))

    if spec.kind == "straight-tube":
        # axis along z through the volume center
        return np.sqrt((px - cx) ** 2 + (py - cy) ** 2)

    if spec.kind == "blob":
        return np.sqrt((px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2)

    if spec.kind == "plate":
        # slab normal to z through the volume center
        return np.abs(pz - cz)

    if spec.kind == "bent-tube":
        # quarter-circle arc in the x-z plane at constant y
        arc_r = min(ex, ez) / 2.5
        x0 = cx - arc_r / 2
        z0 = ez * 0.15
        # circle center; arc runs from angle 0 (pointing -z) to pi/2 (pointing +x)
        ccx, ccz = x0, z0 + arc_r
        ux = px - ccx
        uz = pz - ccz
        ang = np.arctan2(ux, -uz)
        rad = np.sqrt(ux * ux + uz * uz)
        d_arc = np.sqrt((rad - arc_r) ** 2 + (py - cy) ** 2)
        p_start = (x0, cy, z0)
        p_end = (ccx + arc_r, cy, ccz)
        d_start = np.sqrt((px - p_start[0]) ** 2 + (py - p_start[1]) ** 2 + (pz - p_start[2]) ** 2)
        d_end = np.sqrt((px - p_end[0]) ** 2 + (py - p_end[1]) ** 2 + (pz - p_end[2]) ** 2)
        on_arc = (ang >= 0) & (ang <= np.pi / 2)
        return np.where(on_arc, d_arc, np.minimum(d_start, d_end))

    if spec.kind == "bifurcation":
        # parent along z from the bottom face to mid-height, two children at 45 deg
        branch = (cx, cy, ez / 2)
        d_parent = _segment_distance(px, py, pz, (cx, cy, 0.0), branch)
        reach = ez * 0.95 - branch[2]
        d_left = _segment_distance(px, py, pz, branch, (cx - reach, cy, ez * 0.95))
        d_right = _segment_distance(px, py, pz, branch, (cx + reach, cy, ez * 0.95))
        return np.minimum(d_parent, np.minimum(d_left, d_right))

    raise ValidationError(f"unknown phantom kind {spec.kind!r}")


def phantom_centerline(spec: PhantomSpec) -> list[tuple[int, int, int, int]]:
    """Voxelized centerline with branch ids (1-based), for metric fixtures.

    Only tube-like kinds have a centerline; blob/plate raise.
    """
    spec.validate()
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing
    cx, cy, cz = ((n - 1) * s / 2 for n, s in zip(spec.dims, spec.spacing))
    if spec.kind == "straight-tube":
        icx, icy = round(cx / sx), round(cy / sy)
        return [(icx, icy, iz, 1) for iz in range(nz)]
    if spec.kind == "bifurcation":
        ez = nz * sz
        icx, icy = round(cx / sx), round(cy / sy)
        zmid = round((ez / 2) / sz)
        ztop = min(nz - 1, round((ez * 0.95) / sz))
        pts = [(icx, icy, iz, 1) for iz in range(zmid + 1)]
        seen = {(p[0], p[1], p[2]) for p in pts}
        for branch, sign in ((2, -1), (3, +1)):
            for iz in range(zmid + 1, ztop + 1):
                off = iz - zmid  # 45 degree path on an isotropic-index walk
                ix = icx + sign * off
                if not 0 <= ix < nx:
                    break
                if (ix, icy, iz) not in seen:
                    pts.append((ix, icy, iz, branch))
                    seen.add((ix, icy, iz))
        return pts
    raise ValidationError(f"phantom kind {spec.kind!r} has no centerline")


def make_phantom(spec: PhantomSpec, seed: int = 0) -> tuple[Volume3, Volume3]:
    """Deterministic (image, truth-mask) pair for the given spec and seed."""
    spec.validate()
    d = _distance_field(spec)
    mask = (d <= spec.radius).astype(np.uint8)

    if spec.profile == "hard":
        signal = spec.amplitude * mask.astype(np.float64)
    else:
        signal = spec.amplitude * np.exp(-(d * d) / (2.0 * spec.radius * spec.radius))

    if spec.polarity == "dark-on-bright":
        signal = spec.amplitude - signal

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        signal = signal + rng.normal(0.0, spec.noise_sigma, size=signal.shape)

    image = Volume3(signal.astype(np.float32), spec.spacing)
    truth = Volume3(mask, spec.spacing)
    return image, truth
