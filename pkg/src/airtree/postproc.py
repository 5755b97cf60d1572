"""Seeded region-growing post-processing over binary masks.

Seed = centroid of the first (lowest-z) nonempty slice, snapped onto
foreground if needed; growth = 26-connected flood fill (3x3x3 structuring
element minus center); the largest 26-connected component survives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyMaskError, ValidationError
from .volume import Volume3

STRUCT_26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class Seed:
    index: tuple[int, int, int]
    slice_z: int
    snap_distance: float  # voxels; 0 when the rounded centroid was foreground


def _require_binary(mask: Volume3, what: str) -> np.ndarray:
    arr = mask.data
    if not np.isin(np.unique(arr), (0, 1)).all():
        raise ValidationError(f"{what} must be a binary (0/1) mask")
    return arr != 0


def _round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5)) if v >= 0 else int(math.ceil(v - 0.5))


def _linear_index(ix: int, iy: int, iz: int, dims) -> int:
    nx, ny, _ = dims
    return ix + nx * (iy + ny * iz)


def find_seed(mask: Volume3) -> Seed:
    """Centroid of the first nonempty slice, snapped to foreground."""
    arr = _require_binary(mask, "find_seed input")
    nz = mask.dims[2]
    for iz in range(nz):
        xs, ys = np.nonzero(arr[:, :, iz])
        if xs.size:
            break
    else:
        raise EmptyMaskError("cannot seed an empty mask")
    cx = _round_half_away(float(xs.mean()))
    cy = _round_half_away(float(ys.mean()))
    if arr[cx, cy, iz]:
        return Seed((cx, cy, iz), iz, 0.0)
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    lin = xs + mask.dims[0] * (ys + mask.dims[1] * iz)
    # nearest foreground voxel; ties resolved by smallest linear index
    order = np.lexsort((lin, d2))
    best = order[0]
    return Seed(
        (int(xs[best]), int(ys[best]), iz), iz, float(np.sqrt(d2[best]))
    )


def region_grow(mask: Volume3, seed: Seed) -> Volume3:
    """All foreground voxels 26-connected to the seed."""
    arr = _require_binary(mask, "region_grow input")
    ix, iy, iz = seed.index
    if not (0 <= ix < mask.dims[0] and 0 <= iy < mask.dims[1] and 0 <= iz < mask.dims[2]):
        raise ValidationError(f"seed {seed.index} is outside the volume {mask.dims}")
    if not arr[ix, iy, iz]:
        raise ValidationError(f"seed {seed.index} is not a foreground voxel")
    start = np.zeros_like(arr)
    start[ix, iy, iz] = True
    grown = ndimage.binary_propagation(start, structure=STRUCT_26, mask=arr)
    return mask.with_data(grown.astype(np.uint8))


def largest_cc(mask: Volume3) -> Volume3:
    """Largest 26-connected component; ties go to the component whose
    smallest linear (x-fastest) index is smallest. Empty in, empty out."""
    arr = _require_binary(mask, "largest_cc input")
    labels, count = ndimage.label(arr, structure=STRUCT_26)
    if count == 0:
        return mask.with_data(np.zeros(mask.dims, dtype=np.uint8))
    sizes = np.bincount(labels.ravel())[1:]
    best_size = sizes.max()
    candidates = np.nonzero(sizes == best_size)[0] + 1
    if len(candidates) == 1:
        winner = int(candidates[0])
    else:
        flat = labels.ravel(order="F")
        winner = min(
            (int(np.nonzero(flat == lab)[0][0]), int(lab)) for lab in candidates
        )[1]
    return mask.with_data((labels == winner).astype(np.uint8))


def postprocess(mask: Volume3) -> Volume3:
    """find_seed -> region_grow -> largest_cc; empty masks pass through."""
    arr = _require_binary(mask, "postprocess input")
    if not arr.any():
        return mask.with_data(np.zeros(mask.dims, dtype=np.uint8))
    grown = region_grow(mask, find_seed(mask))
    return largest_cc(grown)
