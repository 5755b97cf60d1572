import numpy as np
import pytest

from airtree.errors import ValidationError
from airtree.metrics import (
    CenterlineRef,
    branch_detected_rate,
    dice,
    evaluate,
    read_centerline,
    tree_detected_rate,
)
from airtree.volume import Volume3

DIMS = (16, 16, 16)


def vol(coords, dims=DIMS):
    arr = np.zeros(dims, dtype=np.uint8)
    for c in coords:
        arr[c] = 1
    return Volume3(arr)


def line_ref(n=11, dims=DIMS, spacing=(1.0, 1.0, 1.0)):
    """Single straight branch along z through the volume center."""
    vox = np.array([(8, 8, z) for z in range(n)])
    return CenterlineRef(vox, np.ones(n, dtype=int), dims, spacing)


class TestDice:
    def test_half_overlap_exact(self):
        pred = vol([(0, 0, 0), (1, 0, 0)])
        truth = vol([(1, 0, 0), (2, 0, 0)])
        assert dice(pred, truth) == 0.5

    def test_identical_masks(self):
        m = vol([(1, 2, 3), (4, 5, 6)])
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        assert dice(vol([(0, 0, 0)]), vol([(5, 5, 5)])) == 0.0

    def test_both_empty_defined_one(self):
        assert dice(vol([]), vol([])) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = Volume3((rng.uniform(size=DIMS) < 0.3).astype(np.uint8))
            b = Volume3((rng.uniform(size=DIMS) < 0.3).astype(np.uint8))
            assert dice(a, b) == dice(b, a)

    def test_dims_mismatch(self):
        with pytest.raises(ValidationError):
            dice(vol([], dims=(4, 4, 4)), vol([]))

    def test_matches_tp_fp_fn_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            p = Volume3((rng.uniform(size=DIMS) < 0.3).astype(np.uint8))
            t = Volume3((rng.uniform(size=DIMS) < 0.3).astype(np.uint8))
            rep = evaluate(p, t)
            if 2 * rep.tp + rep.fp + rep.fn:
                assert rep.dice == pytest.approx(
                    2 * rep.tp / (2 * rep.tp + rep.fp + rep.fn), abs=1e-15
                )


class TestTreeDetectedRate:
    def test_straight_branch_half_exact(self):
        # 11-voxel line, prediction covers the first 6: 5 of 10 unit segments
        ref = line_ref(11)
        pred = vol([(8, 8, z) for z in range(6)])
        assert tree_detected_rate(pred, ref) == 0.5

    def test_full_and_empty_coverage(self):
        ref = line_ref(11)
        assert tree_detected_rate(vol([(8, 8, z) for z in range(11)]), ref) == 1.0
        assert tree_detected_rate(vol([]), ref) == 0.0

    def test_gap_breaks_both_adjacent_segments(self):
        ref = line_ref(5)
        pred = vol([(8, 8, z) for z in range(5) if z != 2])
        # segments (0,1) and (3,4) survive; (1,2) and (2,3) lose an endpoint
        assert tree_detected_rate(pred, ref) == 0.5

    def test_length_weighted_in_mm(self):
        vox = np.array([(0, 0, 0), (0, 0, 1), (1, 0, 1)])
        ref = CenterlineRef(vox, [1, 1, 1], (4, 4, 4), spacing=(3.0, 1.0, 2.0))
        pred = vol([(0, 0, 0), (0, 0, 1)], dims=(4, 4, 4))
        # detected 2 mm (z step), missed 3 mm (x step)
        assert tree_detected_rate(pred, ref) == pytest.approx(2.0 / 5.0)

    def test_monotone_under_added_true_voxel(self):
        ref = line_ref(11)
        rng = np.random.default_rng(2)
        pred = (rng.uniform(size=DIMS) < 0.3).astype(np.uint8)
        base = tree_detected_rate(Volume3(pred), ref)
        grown = pred.copy()
        grown[8, 8, 4] = 1
        assert tree_detected_rate(Volume3(grown), ref) >= base

    def test_no_measurable_length(self):
        ref = CenterlineRef([(1, 1, 1)], [1], DIMS, (1.0, 1.0, 1.0))
        with pytest.raises(ValidationError):
            tree_detected_rate(vol([]), ref)


class TestBranchDetectedRate:
    def brute_force(self, pred, ref, frac):
        hit = 0
        branches = ref.branches()
        for bid, voxels in branches.items():
            inside = sum(1 for v in voxels if pred.data[tuple(v)] != 0)
            if inside >= frac * len(voxels):
                hit += 1
        return hit / len(branches)

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n_branches = rng.integers(1, 6)
            vox, ids = [], []
            taken = set()
            for bid in range(1, n_branches + 1):
                m = int(rng.integers(1, 10))
                for _ in range(m):
                    while True:
                        c = tuple(int(v) for v in rng.integers(0, 16, size=3))
                        if c not in taken:
                            taken.add(c)
                            break
                    vox.append(c)
                    ids.append(bid)
            ref = CenterlineRef(np.array(vox), np.array(ids), DIMS, (1.0, 1.0, 1.0))
            pred = Volume3((rng.uniform(size=DIMS) < 0.5).astype(np.uint8))
            frac = float(rng.choice([0.5, 0.8, 1.0]))
            assert branch_detected_rate(pred, ref, frac) == self.brute_force(pred, ref, frac)

    def test_threshold_is_inclusive(self):
        # 4 of 5 voxels covered, frac 0.8: 4 >= 0.8*5 counts as detected
        ref = line_ref(5)
        pred = vol([(8, 8, z) for z in range(4)])
        assert branch_detected_rate(pred, ref, 0.8) == 1.0
        assert branch_detected_rate(pred, ref, 0.9) == 0.0

    def test_frac_validation(self):
        with pytest.raises(ValidationError):
            branch_detected_rate(vol([]), line_ref(5), 0.0)
        with pytest.raises(ValidationError):
            branch_detected_rate(vol([]), line_ref(5), 1.5)


class TestCenterlineRef:
    def test_parse_file(self, tmp_path):
        path = tmp_path / "cl.txt"
        path.write_text(
            "# reference skeleton\n"
            "1 2 3 1\n"
            "1 2 4 1  # inline comment\n"
            "\n"
            "5 5 5 2\n"
        )
        ref = read_centerline(str(path), vol([]))
        assert len(ref.voxels) == 3
        assert sorted(ref.branches()) == [1, 2]

    def test_parse_rejects_bad_rows(self, tmp_path):
        for bad in ("1 2 3\n", "1 2 3 x\n", "1 2 3 4 5\n"):
            path = tmp_path / "cl.txt"
            path.write_text(bad)
            with pytest.raises(ValidationError):
                read_centerline(str(path), vol([]))

    def test_validation(self):
        with pytest.raises(ValidationError, match="out of bounds"):
            CenterlineRef([(99, 0, 0)], [1], DIMS, (1.0, 1.0, 1.0))
        with pytest.raises(ValidationError, match="positive"):
            CenterlineRef([(0, 0, 0)], [0], DIMS, (1.0, 1.0, 1.0))
        with pytest.raises(ValidationError, match="duplicate"):
            CenterlineRef([(1, 1, 1), (1, 1, 1)], [1, 1], DIMS, (1.0, 1.0, 1.0))
        with pytest.raises(ValidationError, match="at least one"):
            CenterlineRef(np.zeros((0, 3)), [], DIMS, (1.0, 1.0, 1.0))


class TestEvaluate:
    def test_identical_full_coverage(self):
        truth = vol([(8, 8, z) for z in range(11)])
        rep = evaluate(truth, truth, line_ref(11))
        assert rep.dice == 1.0
        assert rep.tree_detected_rate == 1.0
        assert rep.branch_detected_rate == 1.0
        assert rep.branch_table == {1: (11, 11)}

    def test_counts(self):
        pred = vol([(0, 0, 0), (1, 0, 0)])
        truth = vol([(1, 0, 0), (2, 0, 0), (3, 0, 0)])
        rep = evaluate(pred, truth)
        assert (rep.tp, rep.fp, rep.fn) == (1, 1, 2)
        assert rep.tree_detected_rate is None
        assert rep.branch_detected_rate is None

    def test_report_text_format(self):
        rep = evaluate(vol([(1, 1, 1)]), vol([(1, 1, 1)]), line_ref(3))
        text = rep.as_text()
        assert "dice = 1\n" in text
        assert "tree_detected_rate" in text
        assert "branch.1 = 0/3" in text

    def test_all_metrics_in_unit_interval(self):
        rng = np.random.default_rng(4)
        ref = line_ref(11)
        for _ in range(20):
            pred = Volume3((rng.uniform(size=DIMS) < 0.3).astype(np.uint8))
            truth = Volume3((rng.uniform(size=DIMS) < 0.3).astype(np.uint8))
            rep = evaluate(pred, truth, ref)
            for v in (rep.dice, rep.tree_detected_rate, rep.branch_detected_rate):
                assert 0.0 <= v <= 1.0
