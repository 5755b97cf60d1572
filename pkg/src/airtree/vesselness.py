"""Multi-scale vesselness filtering.

Four stages per scale: separable gaussian smoothing, Hessian by central
differences of the smoothed image, per-voxel eigen-analysis, and the
eigenvalue-ratio response. The final map is the voxelwise maximum over
scales. Spacing is respected throughout: sigma is in mm and converted to
per-axis voxel widths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .eigen import EigenTriple, eigvals_sym3_field
from .errors import ValidationError
from .volume import Volume3

DEFAULT_SCALES = (0.5, 1.0, 2.0, 3.0, 4.0)


@dataclass(frozen=True)
class VesselnessParams:
    scales: tuple[float, ...] = DEFAULT_SCALES
    alpha: float = 0.5
    beta: float = 0.5
    c: float | str = "auto"  # positive value, or "auto" for half-max structureness
    polarity: str = "dark"  # airway lumen is dark on CT
    gamma: float = 1.0  # second derivatives scaled by sigma^(2*gamma)

    def validate(self) -> None:
        if not self.scales:
            raise ValidationError("scales must be nonempty")
        if any(s <= 0 for s in self.scales):
            raise ValidationError(f"scales must be positive, got {self.scales}")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ValidationError(f"scales must be strictly increasing, got {self.scales}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValidationError("alpha and beta must be positive")
        if self.c != "auto" and (not isinstance(self.c, (int, float)) or self.c <= 0):
            raise ValidationError(f"c must be 'auto' or a positive number, got {self.c!r}")
        if self.polarity not in ("bright", "dark"):
            raise ValidationError(f"polarity must be 'bright' or 'dark', got {self.polarity!r}")


@dataclass(frozen=True)
class HessianField:
    """The six distinct components of the symmetric Hessian, per voxel."""

    xx: np.ndarray
    yy: np.ndarray
    zz: np.ndarray
    xy: np.ndarray
    xz: np.ndarray
    yz: np.ndarray
    sigma: float
    spacing: tuple[float, float, float]

    def negated(self) -> "HessianField":
        return HessianField(
            -self.xx, -self.yy, -self.zz, -self.xy, -self.xz, -self.yz,
            self.sigma, self.spacing,
        )


def _gauss_kernel(sigma: float, spacing: float) -> np.ndarray:
    radius = math.ceil(4.0 * sigma / spacing)
    x = np.arange(-radius, radius + 1, dtype=np.float64) * spacing
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_smooth(vol: Volume3, sigma: float) -> Volume3:
    """Separable sampled-gaussian smoothing with replicate boundaries."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    data = vol.data.astype(np.float64)
    for axis in range(3):
        k = _gauss_kernel(sigma, vol.spacing[axis])
        data = correlate1d(data, k, axis=axis, mode="nearest")
    return vol.with_data(data)


def hessian_at_scale(vol: Volume3, sigma: float, gamma: float = 1.0) -> HessianField:
    """Scale-normalized Hessian of the sigma-smoothed volume.

    Central differences with clamped (replicated) boundary neighbors;
    every component is multiplied by sigma^(2*gamma).
    """
    if min(vol.dims) < 5:
        raise ValidationError(f"volume too small for Hessian estimation: dims {vol.dims}")
    f = gaussian_smooth(vol, sigma).data
    sx, sy, sz = vol.spacing
    g = np.pad(f, 1, mode="edge")
    c = g[1:-1, 1:-1, 1:-1]
    norm = sigma ** (2.0 * gamma)

    xx = (g[2:, 1:-1, 1:-1] - 2.0 * c + g[:-2, 1:-1, 1:-1]) / (sx * sx) * norm
    yy = (g[1:-1, 2:, 1:-1] - 2.0 * c + g[1:-1, :-2, 1:-1]) / (sy * sy) * norm
    zz = (g[1:-1, 1:-1, 2:] - 2.0 * c + g[1:-1, 1:-1, :-2]) / (sz * sz) * norm
    xy = (
        g[2:, 2:, 1:-1] - g[2:, :-2, 1:-1] - g[:-2, 2:, 1:-1] + g[:-2, :-2, 1:-1]
    ) / (4.0 * sx * sy) * norm
    xz = (
        g[2:, 1:-1, 2:] - g[2:, 1:-1, :-2] - g[:-2, 1:-1, 2:] + g[:-2, 1:-1, :-2]
    ) / (4.0 * sx * sz) * norm
    yz = (
        g[1:-1, 2:, 2:] - g[1:-1, 2:, :-2] - g[1:-1, :-2, 2:] + g[1:-1, :-2, :-2]
    ) / (4.0 * sy * sz) * norm
    return HessianField(xx, yy, zz, xy, xz, yz, sigma, vol.spacing)


def vesselness_response(e: EigenTriple, p: VesselnessParams, c_effective: float) -> float:
    """Tubularity score in [0, 1] for one eigenvalue triple."""
    if c_effective <= 0:
        raise ValidationError(f"c_effective must be positive, got {c_effective}")
    l1, l2, l3 = e.l1, e.l2, e.l3
    if p.polarity == "dark":
        l1, l2, l3 = -l1, -l2, -l3
    if l2 > 0 or l3 > 0:
        return 0.0
    if l3 == 0.0:
        return 0.0
    ra = abs(l2) / abs(l3)
    rb = abs(l1) / math.sqrt(abs(l2 * l3)) if l2 != 0.0 else 0.0
    s2 = l1 * l1 + l2 * l2 + l3 * l3
    return (
        (1.0 - math.exp(-(ra * ra) / (2.0 * p.alpha * p.alpha)))
        * math.exp(-(rb * rb) / (2.0 * p.beta * p.beta))
        * (1.0 - math.exp(-s2 / (2.0 * c_effective * c_effective)))
    )


def _response_field(l1, l2, l3, alpha, beta, c_effective):
    """Vectorized bright-polarity response; zero where l2 > 0 or l3 > 0."""
    suppressed = (l2 > 0) | (l3 > 0) | (l3 == 0)
    a2 = np.abs(l2)
    a3 = np.where(suppressed, 1.0, np.abs(l3))
    ra2 = (a2 / a3) ** 2
    prod = np.where(suppressed, 1.0, a2 * np.abs(l3))
    rb2 = np.where(prod > 0, (l1 * l1) / np.where(prod > 0, prod, 1.0), 0.0)
    s2 = l1 * l1 + l2 * l2 + l3 * l3
    v = (
        (1.0 - np.exp(-ra2 / (2.0 * alpha * alpha)))
        * np.exp(-rb2 / (2.0 * beta * beta))
        * (1.0 - np.exp(-s2 / (2.0 * c_effective * c_effective)))
    )
    return np.where(suppressed, 0.0, v)


def frangi_single_scale(vol: Volume3, p: VesselnessParams, sigma: float) -> np.ndarray:
    """Response map for one scale (used by frangi and by scale-sweep tests)."""
    h = hessian_at_scale(vol, sigma, p.gamma)
    if p.polarity == "dark":
        h = h.negated()
    l1, l2, l3 = eigvals_sym3_field(h.xx, h.yy, h.zz, h.xy, h.xz, h.yz)
    s = np.sqrt(l1 * l1 + l2 * l2 + l3 * l3)
    if p.c == "auto":
        s_max = float(s.max())
        if s_max == 0.0:
            return np.zeros(vol.dims)
        c_eff = 0.5 * s_max
    else:
        c_eff = float(p.c)
    return _response_field(l1, l2, l3, p.alpha, p.beta, c_eff)


def frangi(vol: Volume3, p: VesselnessParams | None = None) -> Volume3:
    """Multi-scale vesselness map in [0, 1] (voxelwise maximum over scales)."""
    p = p or VesselnessParams()
    p.validate()
    if not np.issubdtype(vol.data.dtype, np.floating):
        raise ValidationError(f"frangi expects a float volume, got {vol.data.dtype}")
    out = np.zeros(vol.dims)
    for sigma in p.scales:
        out = np.maximum(out, frangi_single_scale(vol, p, sigma))
    return vol.with_data(out)
