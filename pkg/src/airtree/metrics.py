"""Segmentation evaluation: Dice overlap plus centerline-based tree and
branch detected rates against an ingested reference skeleton.

A centerline file is plain text, one voxel per line: `ix iy iz branch_id`,
with `#` comments. Voxel order within a branch defines its polyline; a
segment between consecutive voxels counts as detected when both endpoints
lie inside the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .volume import Volume3


@dataclass(frozen=True)
class CenterlineRef:
    voxels: np.ndarray  # (k, 3) int voxel indices, in polyline order per branch
    branch_ids: np.ndarray  # (k,) positive ints
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        vox = np.asarray(self.voxels, dtype=np.int64).reshape(-1, 3)
        ids = np.asarray(self.branch_ids, dtype=np.int64).reshape(-1)
        if len(vox) != len(ids):
            raise ValidationError("voxels and branch_ids lengths differ")
        if len(vox) == 0:
            raise ValidationError("centerline must contain at least one voxel")
        if (ids < 1).any():
            raise ValidationError("branch ids must be positive integers")
        if (vox < 0).any() or (vox >= np.asarray(self.dims)).any():
            raise ValidationError("centerline voxel out of bounds")
        if len(np.unique(vox, axis=0)) != len(vox):
            raise ValidationError("duplicate centerline voxels")
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "branch_ids", ids)

    def branches(self) -> dict[int, np.ndarray]:
        """Branch id -> (m, 3) voxel polyline in file order."""
        out: dict[int, np.ndarray] = {}
        for bid in np.unique(self.branch_ids):
            out[int(bid)] = self.voxels[self.branch_ids == bid]
        return out


def read_centerline(path: str, truth: Volume3) -> CenterlineRef:
    voxels, ids = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValidationError(
                    f"{path}:{lineno}: expected 'ix iy iz branch_id', got {line!r}"
                )
            try:
                ix, iy, iz, bid = (int(p) for p in parts)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-integer field: {exc}") from exc
            voxels.append((ix, iy, iz))
            ids.append(bid)
    return CenterlineRef(np.array(voxels), np.array(ids), truth.dims, truth.spacing)


@dataclass
class EvalReport:
    dice: float
    tp: int
    fp: int
    fn: int
    tree_detected_rate: float | None = None
    branch_detected_rate: float | None = None
    branch_table: dict[int, tuple[int, int]] = field(default_factory=dict)  # id -> (hit, total)

    def as_text(self) -> str:
        lines = [
            f"dice = {self.dice:.12g}",
            f"tp = {self.tp}",
            f"fp = {self.fp}",
            f"fn = {self.fn}",
        ]
        if self.tree_detected_rate is not None:
            lines.append(f"tree_detected_rate = {self.tree_detected_rate:.12g}")
        if self.branch_detected_rate is not None:
            lines.append(f"branch_detected_rate = {self.branch_detected_rate:.12g}")
        for bid in sorted(self.branch_table):
            hit, total = self.branch_table[bid]
            lines.append(f"branch.{bid} = {hit}/{total}")
        return "\n".join(lines) + "\n"


def _check_dims(pred: Volume3, other_dims, what: str) -> None:
    if pred.dims != tuple(other_dims):
        raise ValidationError(f"{what}: dims differ, {pred.dims} vs {tuple(other_dims)}")


def dice(pred: Volume3, truth: Volume3) -> float:
    """2|P.T| / (|P| + |T|); both masks empty scores 1.0."""
    _check_dims(pred, truth.dims, "dice")
    p = pred.data != 0
    t = truth.data != 0
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom


def _covered(pred: Volume3, ref: CenterlineRef) -> np.ndarray:
    _check_dims(pred, ref.dims, "centerline metrics")
    v = ref.voxels
    return pred.data[v[:, 0], v[:, 1], v[:, 2]] != 0


def tree_detected_rate(pred: Volume3, ref: CenterlineRef) -> float:
    """Length-weighted centerline coverage.

    Each branch is a polyline; a segment's mm length counts as detected
    only when both of its endpoint voxels lie inside the prediction.
    Single-voxel branches contribute no length.
    """
    inside = _covered(pred, ref)
    spacing = np.asarray(ref.spacing)
    total = 0.0
    detected = 0.0
    for bid, vox in ref.branches().items():
        if len(vox) < 2:
            continue
        seg = np.linalg.norm(np.diff(vox, axis=0) * spacing, axis=1)
        hit = inside[ref.branch_ids == bid]
        total += seg.sum()
        detected += seg[hit[:-1] & hit[1:]].sum()
    if total == 0.0:
        raise ValidationError("centerline has no measurable length")
    return detected / total


def branch_detected_rate(pred: Volume3, ref: CenterlineRef, frac: float = 0.8) -> float:
    """Fraction of branches with >= frac of their centerline voxels in pred."""
    if not 0 < frac <= 1:
        raise ValidationError(f"frac must be in (0, 1], got {frac}")
    inside = _covered(pred, ref)
    detected = 0
    bids = np.unique(ref.branch_ids)
    for bid in bids:
        sel = ref.branch_ids == bid
        if inside[sel].sum() >= frac * sel.sum():
            detected += 1
    return detected / len(bids)


def evaluate(
    pred: Volume3,
    truth: Volume3,
    ref: CenterlineRef | None = None,
    branch_frac: float = 0.8,
) -> EvalReport:
    _check_dims(pred, truth.dims, "evaluate")
    p = pred.data != 0
    t = truth.data != 0
    report = EvalReport(
        dice=dice(pred, truth),
        tp=int((p & t).sum()),
        fp=int((p & ~t).sum()),
        fn=int((~p & t).sum()),
    )
    if ref is not None:
        report.tree_detected_rate = tree_detected_rate(pred, ref)
        report.branch_detected_rate = branch_detected_rate(pred, ref, branch_frac)
        inside = _covered(pred, ref)
        for bid, vox in ref.branches().items():
            sel = ref.branch_ids == bid
            report.branch_table[bid] = (int(inside[sel].sum()), int(sel.sum()))
    return report
