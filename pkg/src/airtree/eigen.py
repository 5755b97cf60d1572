"""Closed-form eigen-decomposition of symmetric 3x3 matrices.

Eigenvalues come from the trigonometric solution of the characteristic
polynomial (no iterative solver); eigenvectors from cross products of the
rows of A - lambda*I, picking the best-conditioned pair and completing an
orthonormal basis for (near-)degenerate spectra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class EigenTriple:
    """Hessian eigenvalues ordered |l1| <= |l2| <= |l3|."""

    l1: float
    l2: float
    l3: float

    @property
    def s(self) -> float:
        """Second-order structureness: Frobenius norm of the Hessian."""
        return float(np.sqrt(self.l1 **  2 + self.l2 ** 2 + self.l3 ** 2))

    def as_array(self) -> np.ndarray:
        return np.array([self.l1, self.l2, self.l3])


def _analytic_eigvals(a: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of one symmetric 3x3 matrix, closed form."""
    off = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    if off == 0.0:
        return np.sort(np.diag(a))
    q = np.trace(a) / 3.0
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * off
    if p2 == 0.0:
        return np.array([q, q, q])
    p = np.sqrt(p2 / 6.0)
    b = (a - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - hi - lo
    return np.array([lo, mid, hi])


def _null_vector(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Best cross-product estimate of the null direction of a singular m."""
    crosses = [
        np.cross(m[0], m[1]),
        np.cross(m[0], m[2]),
        np.cross(m[1], m[2]),
    ]
    norms = [np.linalg.norm(c) for c in crosses]
    k = int(np.argmax(norms))
    return crosses[k], norms[k]


def _orthonormal_complement(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors orthogonal to the unit vector v."""
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(v)))] = 1.0
    u = np.cross(v, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(v, u)


def eig_sym3(a: np.ndarray) -> tuple[EigenTriple, np.ndarray]:
    """Eigenvalues (|.|-ascending) and orthonormal eigenvectors of a 3x3 symmetric matrix.

    Returns (triple, Q) with Q columns ordered like the triple, so that
    Q @ diag(l1, l2, l3) @ Q.T reconstructs the input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (3, 3):
        raise ValidationError(f"expected a 3x3 matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.T)) > 1e-12:
        raise ValidationError("matrix is not symmetric within 1e-12")
    a = (a + a.T) / 2.0

    vals = _analytic_eigvals(a)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        order = np.array([0, 1, 2])
        return EigenTriple(0.0, 0.0, 0.0), np.eye(3)

    # resolve eigenvectors starting from the best-isolated eigenvalue
    gaps = np.array(
        [
            vals[1] - vals[0] if i == 0 else vals[2] - vals[1] if i == 2
            else min(vals[1] - vals[0], vals[2] - vals[1])
            for i in range(3)
        ]
    )
    by_isolation = np.argsort(-gaps, kind="stable")
    vecs = np.zeros((3, 3))
    i0, i1, i2 = by_isolation
    v0, n0 = _null_vector(a - vals[i0] * np.eye(3))
    if n0 <= 1e-9 * scale * scale:
        # near-triple degeneracy: any orthonormal basis works
        vecs = np.eye(3)
    else:
        v0 /= np.linalg.norm(v0)
        v1, n1 = _null_vector(a - vals[i1] * np.eye(3))
        if n1 <= 1e-9 * scale * scale:
            v1, _ = _orthonormal_complement(v0)
        else:
            v1 = v1 - (v1 @ v0) * v0
            v1 /= np.linalg.norm(v1)
        v2 = np.cross(v0, v1)
        vecs[:, i0], vecs[:, i1], vecs[:, i2] = v0, v1, v2

    order = np.argsort(np.abs(vals), kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    return EigenTriple(float(vals[0]), float(vals[1]), float(vals[2])), vecs


def eigvals_sym3_field(
    xx: np.ndarray,
    yy: np.ndarray,
    zz: np.ndarray,
    xy: np.ndarray,
    xz: np.ndarray,
    yz: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized |.|-ascending eigenvalues of a symmetric 3x3 field."""
    q = (xx + yy + zz) / 3.0
    off = xy * xy + xz * xz + yz * yz
    dx, dy, dz = xx - q, yy - q, zz - q
    p2 = dx * dx + dy * dy + dz * dz + 2.0 * off
    p = np.sqrt(p2 / 6.0)
    degenerate = p == 0.0
    p_safe = np.where(degenerate, 1.0, p)

    bxx, byy, bzz = dx / p_safe, dy / p_safe, dz / p_safe
    bxy, bxz, byz = xy / p_safe, xz / p_safe, yz / p_safe
    det = (
        bxx * (byy * bzz - byz * byz)
        - bxy * (bxy * bzz - byz * bxz)
        + bxz * (bxy * byz - byy * bxz)
    )
    r = np.clip(det / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - hi - lo
    hi = np.where(degenerate, q, hi)
    lo = np.where(degenerate, q, lo)
    mid = np.where(degenerate, q, mid)

    # exact result for exactly-diagonal entries (constant regions, tests)
    diagonal = off == 0.0
    if diagonal.any():
        dsorted = np.sort(np.stack([xx, yy, zz], axis=-1), axis=-1)
        lo = np.where(diagonal, dsorted[..., 0], lo)
        mid = np.where(diagonal, dsorted[..., 1], mid)
        hi = np.where(diagonal, dsorted[..., 2], hi)

    stacked = np.stack([lo, mid, hi], axis=-1)
    order = np.argsort(np.abs(stacked), axis=-1, kind="stable")
    stacked = np.take_along_axis(stacked, order, axis=-1)
    return stacked[..., 0], stacked[..., 1], stacked[..., 2]
