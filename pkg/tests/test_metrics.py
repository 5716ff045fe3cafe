import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riveg.corpus import BBox, RleMask, rasterize_box, rle_decode, rle_encode
from riveg.errors import DataError
from riveg.metrics import (
    AgreementTable,
    DualAnnotation,
    agreement_summary,
    box_iou,
    dice_coefficient,
    fleiss_kappa,
    mask_iou,
)


def bitmap_iou(a: RleMask, b: RleMask) -> float:
    """Decode-and-count oracle for mask overlap."""
    ga, gb = rle_decode(a), rle_decode(b)
    inter = int(np.logical_and(ga, gb).sum())
    union = int(np.logical_or(ga, gb).sum())
    return inter / union


def random_mask(rng, width, height, fill):
    return rle_encode(rng.random((height, width)) < fill)


class TestBoxIou:
    def test_identity(self):
        box = BBox(1, 2, 5, 9)
        assert box_iou(box, box) == 1.0

    def test_disjoint(self):
        assert box_iou(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == 0.0

    def test_touching_edges_are_disjoint(self):
        assert box_iou(BBox(0, 0, 1, 1), BBox(1, 0, 2, 1)) == 0.0

    def test_one_seventh(self):
        value = box_iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3))
        assert value == pytest.approx(1 / 7, abs=1e-12)

    def test_fine_grid_rasterization_converges(self):
        # Rasterize both boxes at increasing resolution; pixel-count IoU
        # approaches the continuous inclusion-exclusion value.
        a, b = BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)
        exact = box_iou(a, b)
        for scale in (8, 32, 128):
            sa = BBox(a.x1 * scale, a.y1 * scale, a.x2 * scale, a.y2 * scale)
            sb = BBox(b.x1 * scale, b.y1 * scale, b.x2 * scale, b.y2 * scale)
            canvas = 3 * scale
            approx = bitmap_iou(
                rasterize_box(sa, canvas, canvas), rasterize_box(sb, canvas, canvas)
            )
            assert abs(approx - exact) < 2 / scale
        assert abs(approx - exact) < 1e-2

    def test_symmetry_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x1, y1 = rng.uniform(0, 10, 2)
            a = BBox(x1, y1, x1 + rng.uniform(0.1, 5), y1 + rng.uniform(0.1, 5))
            x1, y1 = rng.uniform(0, 10, 2)
            b = BBox(x1, y1, x1 + rng.uniform(0.1, 5), y1 + rng.uniform(0.1, 5))
            assert box_iou(a, b) == box_iou(b, a)
            assert 0.0 <= box_iou(a, b) <= 1.0


class TestMaskIou:
    def test_identity(self):
        mask = rle_encode(np.eye(5, dtype=bool))
        assert mask_iou(mask, mask) == 1.0

    def test_disjoint(self):
        a = rasterize_box(BBox(0, 0, 2, 2), 8, 8)
        b = rasterize_box(BBox(4, 4, 6, 6), 8, 8)
        assert mask_iou(a, b) == 0.0

    def test_explicit_third(self):
        a = rasterize_box(BBox(0, 0, 2, 4), 4, 4)  # left two columns
        b = rasterize_box(BBox(0, 0, 4, 2), 4, 4)  # top two rows
        assert mask_iou(a, b) == pytest.approx(1 / 3, abs=0)
        assert dice_coefficient(a, b) == 0.5

    def test_dimension_mismatch(self):
        with pytest.raises(DataError, match="dimension mismatch"):
            mask_iou(RleMask(2, 2, (4,)), RleMask(3, 2, (0, 6)))

    def test_both_empty_is_error(self):
        empty = RleMask(2, 2, (4,))
        with pytest.raises(DataError, match="both masks are empty"):
            mask_iou(empty, empty)
        with pytest.raises(DataError):
            dice_coefficient(empty, empty)

    def test_empty_vs_nonempty_is_zero(self):
        empty = RleMask(4, 4, (16,))
        full = RleMask(4, 4, (0, 16))
        assert mask_iou(empty, full) == 0.0

    def test_matches_bitmap_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            w, h = int(rng.integers(1, 24)), int(rng.integers(1, 24))
            a = random_mask(rng, w, h, rng.uniform(0.2, 0.8))
            b = random_mask(rng, w, h, rng.uniform(0.2, 0.8))
            if a.area == 0 and b.area == 0:
                continue
            assert mask_iou(a, b) == bitmap_iou(a, b)

    def test_box_iou_equals_rasterized_mask_iou(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            coords = rng.integers(0, 16, size=8)
            ax1, ay1 = int(coords[0]), int(coords[1])
            a = BBox(ax1, ay1, ax1 + int(coords[2]) + 1, ay1 + int(coords[3]) + 1)
            bx1, by1 = int(coords[4]), int(coords[5])
            b = BBox(bx1, by1, bx1 + int(coords[6]) + 1, by1 + int(coords[7]) + 1)
            canvas = 40
            assert box_iou(a, b) == mask_iou(
                rasterize_box(a, canvas, canvas), rasterize_box(b, canvas, canvas)
            )

    def test_dice_identity_with_iou(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            w, h = int(rng.integers(2, 20)), int(rng.integers(2, 20))
            a = random_mask(rng, w, h, 0.5)
            b = random_mask(rng, w, h, 0.5)
            if a.area == 0 and b.area == 0:
                continue
            iou = mask_iou(a, b)
            assert abs(dice_coefficient(a, b) - 2 * iou / (1 + iou)) <= 1e-12

    @given(
        st.integers(min_value=1, max_value=10),
        st.integers(min_value=1, max_value=10),
        st.data(),
    )
    @settings(max_examples=150, deadline=None)
    def test_symmetry_and_bounds_property(self, width, height, data):
        cells = width * height
        bits_a = data.draw(st.lists(st.booleans(), min_size=cells, max_size=cells))
        bits_b = data.draw(st.lists(st.booleans(), min_size=cells, max_size=cells))
        a = rle_encode(np.array(bits_a, dtype=bool).reshape((height, width)))
        b = rle_encode(np.array(bits_b, dtype=bool).reshape((height, width)))
        if a.area == 0 and b.area == 0:
            return
        assert mask_iou(a, b) == mask_iou(b, a)
        assert 0.0 <= mask_iou(a, b) <= 1.0
        assert dice_coefficient(a, b) == dice_coefficient(b, a)
        if bits_a == bits_b:
            assert mask_iou(a, b) == 1.0


def oracle_fleiss(counts: np.ndarray) -> float:
    """Literal-formula transcription used as an independent check."""
    n_items, _ = counts.shape
    r = counts[0].sum()
    p_i = [(sum(int(c) ** 2 for c in row) - r) / (r * (r - 1)) for row in counts]
    p_bar = sum(p_i) / n_items
    p_j = counts.sum(axis=0) / (n_items * r)
    p_e = float(sum(x**2 for x in p_j))
    return (p_bar - p_e) / (1 - p_e)


class TestFleissKappa:
    def test_perfect_agreement(self):
        table = np.array([[3, 0], [0, 3], [3, 0]])
        assert fleiss_kappa(table) == 1.0

    def test_zero_kappa(self):
        table = np.array([[2, 0], [0, 2], [1, 1], [1, 1]])
        assert fleiss_kappa(table) == pytest.approx(0.0, abs=1e-12)

    def test_single_category_degenerate(self):
        table = np.array([[2, 0], [2, 0], [2, 0]])
        assert fleiss_kappa(table) == 1.0

    def test_row_sum_mismatch(self):
        with pytest.raises(ValueError, match="row sums differ"):
            AgreementTable(np.array([[2, 0], [1, 2]]))

    def test_single_rater_rejected(self):
        with pytest.raises(ValueError, match="at least 2 raters"):
            AgreementTable(np.array([[1, 0], [0, 1]]))

    def test_random_tables_match_oracle(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 300:
            n_items = int(rng.integers(2, 12))
            n_cats = int(rng.integers(2, 6))
            r = int(rng.integers(2, 8))
            counts = np.zeros((n_items, n_cats), dtype=np.int64)
            for i in range(n_items):
                votes = rng.integers(0, n_cats, size=r)
                for v in votes:
                    counts[i, v] += 1
            p_j = counts.sum(axis=0) / (n_items * r)
            if float(sum(x**2 for x in p_j)) >= 1.0:
                continue
            assert fleiss_kappa(counts) == pytest.approx(oracle_fleiss(counts), abs=1e-12)
            checked += 1


class TestAgreementSummary:
    def test_mask_pairs(self):
        a = rasterize_box(BBox(0, 0, 4, 4), 8, 8)
        b = rasterize_box(BBox(0, 0, 4, 4), 8, 8)
        annotations = [
            DualAnnotation("i1", "groundable", "groundable", a, b),
            DualAnnotation("i2", "ungroundable", "ungroundable"),
        ]
        summary = agreement_summary(annotations)
        assert summary["fleiss_kappa"] == 1.0
        assert summary["mean_dice"] == 1.0
        assert summary["n_mask_pairs"] == 1
        assert summary["consistent_fraction"] == 1.0

    def test_disagreement(self):
        annotations = [
            DualAnnotation("i1", "groundable", "ungroundable"),
            DualAnnotation("i2", "ungroundable", "groundable"),
        ]
        summary = agreement_summary(annotations)
        assert summary["fleiss_kappa"] < 0
        assert summary["mean_dice"] is None
