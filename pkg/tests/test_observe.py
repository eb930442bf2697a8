import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodkit.raster import DegenerateRangeError, GeoTransform, Grid2D, Mask
from floodkit.observe import (
    FloodMap,
    classify,
    confusion_metrics,
    cva_difference,
    depth_errors,
    fwdet_depth,
    load_flood_map,
    mean_filter_3x3,
    otsu_threshold,
    refine,
    save_flood_map,
    scaled_threshold,
)


def brute_otsu(v, bins=256):
    """Exhaustive search over bin-edge thresholds with direct class splits."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    best, best_t = -1.0, None
    for t in edges[1:-1]:
        lo, hi = v[v < t], v[v >= t]
        if lo.size == 0 or hi.size == 0:
            continue
        w0, w1 = lo.size / v.size, hi.size / v.size
        b = w0 * w1 * (lo.mean() - hi.mean()) ** 2
        if b > best * (1 + 1e-12):
            best, best_t = b, t
    return best_t


def _fmap(bits):
    return FloodMap(Mask(np.asarray(bits, bool)), 0.5)


class TestCVA:
    def test_single_channel_square_difference(self):
        d = cva_difference(Grid2D([[1.0, 3.0]]), Grid2D([[0.0, 0.0]]), normalize=False)
        assert d.values.tolist() == [[1.0, 9.0]]

    def test_multichannel_mean_then_scaled(self):
        a = [Grid2D([[0.0, 2.0, 1.0]]), Grid2D([[0.0, 0.0, 1.0]])]
        b = [Grid2D([[0.0, 0.0, 0.0]]), Grid2D([[0.0, 0.0, 0.0]])]
        assert cva_difference(a, b).values.tolist() == [[0.0, 1.0, 0.5]]

    def test_identical_pair_is_zero(self):
        g = Grid2D(np.random.default_rng(0).normal(size=(5, 5)))
        assert not cva_difference(g, g).values.any()

    def test_nodata_propagates(self):
        d = cva_difference(Grid2D([[1.0, -9999.0, 0.0]]), Grid2D([[0.0, 0.0, 0.0]]))
        assert d.nodata.tolist() == [[False, True, False]]

    def test_channel_count_mismatch(self):
        with pytest.raises(ValueError):
            cva_difference([Grid2D([[1.0]])], [Grid2D([[1.0]]), Grid2D([[1.0]])])

    def test_mean_filter(self):
        g = Grid2D(np.pad([[9.0]], 2))
        f = mean_filter_3x3(g).values
        assert f[2, 2] == pytest.approx(1.0) and f[1, 1] == pytest.approx(1.0) and f[0, 0] == 0.0


class TestOtsu:
    def test_bimodal_threshold_between_modes(self):
        rng = np.random.default_rng(1)
        lo, hi = rng.normal(0.2, 0.03, 500).clip(0, 1), rng.normal(0.8, 0.03, 500).clip(0, 1)
        t = otsu_threshold(Grid2D(np.concatenate([lo, hi]).reshape(20, 50)))
        assert lo.max() < t <= hi.min()

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(2024)
        for _ in range(25):
            v = rng.beta(rng.uniform(0.3, 3), rng.uniform(0.3, 3), size=(12, 15))
            assert otsu_threshold(Grid2D(v)) == brute_otsu(v.ravel())

    def test_single_bin_is_degenerate(self):
        with pytest.raises(DegenerateRangeError):
            otsu_threshold(Grid2D(np.full((3, 3), 0.5)))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            otsu_threshold(Grid2D([[0.0, 2.0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.01, 5.0))
    def test_scaled_threshold_clamped(self, t, k):
        s = scaled_threshold(t, k)
        assert s == min(k * t, 1.0) and s <= 1.0

    def test_default_scale(self):
        assert scaled_threshold(0.4) == pytest.approx(0.66)

    def test_classify_inclusive(self):
        fm = classify(Grid2D([[0.2, 0.5, 0.9]]), 0.5)
        assert fm.bits.tolist() == [[False, True, True]]

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
    def test_classify_monotone_in_threshold(self, t1, t2, seed):
        lo, hi = sorted((t1, t2))
        d = Grid2D(np.random.default_rng(seed).random((6, 6)))
        assert np.all(classify(d, hi).bits <= classify(d, lo).bits)


class TestRefine:
    def test_steep_pixels_removed(self):
        dem = Grid2D(np.add.outer(np.zeros(7), np.arange(7) * 1.0))  # 100 % slope
        out = refine(_fmap(np.ones((7, 7))), dem, min_neighbors=0)
        assert out.count() == 0
        assert out.refinement_log[0] == ("slope", 49)

    def test_permanent_water_removed(self):
        perm = np.zeros((5, 5))
        perm[2, 2] = 11.0
        perm[1, 1] = 10.0
        out = refine(_fmap(np.ones((5, 5))), Grid2D(np.zeros((5, 5))), Grid2D(perm), min_neighbors=0)
        assert not out.bits[2, 2] and out.bits[1, 1]
        assert ("permanent_water", 1) in out.refinement_log

    def test_connectivity_single_pass(self):
        bits = np.zeros((7, 7), bool)
        bits[1:6, 1:6] = True
        bits[0, 6] = True  # isolated
        out = refine(_fmap(bits), Grid2D(np.zeros((7, 7))))
        # Block corners have 3 flooded neighbours and edges 5, so only corners and the stray pixel go.
        assert not out.bits[0, 6] and not out.bits[1, 1] and out.bits[1, 3] and out.bits[3, 3]
        assert out.refinement_log[-1] == ("connectivity", 5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_refinement_only_removes(self, seed):
        rng = np.random.default_rng(seed)
        fm = _fmap(rng.random((9, 9)) < 0.6)
        out = refine(fm, Grid2D(rng.uniform(0, 0.2, (9, 9))))
        assert np.all(out.bits <= fm.bits)
        assert fm.count() - out.count() == sum(n for _, n in out.refinement_log)


class TestFwDET:
    def test_flat_water_surface_in_bowl(self):
        i, j = np.mgrid[:21, :21]
        z = 0.01 * ((i - 10) ** 2 + (j - 10) ** 2)
        flooded = z <= 0.25
        depth = fwdet_depth(_fmap(flooded), Grid2D(z)).values
        assert np.all(depth[~flooded] == 0)
        assert depth[10, 10] > 0.15
        assert np.all(depth >= 0)

    def test_boundary_pixels_have_zero_depth_on_plane(self):
        z = np.add.outer(np.arange(9.0), np.zeros(9))
        bits = np.zeros((9, 9), bool)
        bits[2:7, 2:7] = True
        depth = fwdet_depth(_fmap(bits), Grid2D(z)).values
        assert depth[2, 4] == 0 and depth[6, 4] == 0

    def test_components_are_independent(self):
        z = np.zeros((5, 12))
        z[:, 7:] = 5.0
        bits = np.zeros((5, 12), bool)
        bits[1:4, 1:4] = True
        bits[1:4, 8:11] = True
        z2 = z.copy()
        z2[:, 6:] += 100.0
        a = fwdet_depth(_fmap(bits), Grid2D(z)).values
        b = fwdet_depth(_fmap(bits), Grid2D(z2)).values
        assert np.array_equal(a[:, :6], b[:, :6])

    def test_matches_brute_force_idw(self):
        # k spans every boundary pixel so distance ties cannot change the set.
        rng = np.random.default_rng(3)
        z = rng.uniform(0, 2, (10, 10))
        bits = np.zeros((10, 10), bool)
        bits[2:8, 3:9] = True
        depth = fwdet_depth(_fmap(bits), Grid2D(z), k=1000).values
        edge = np.zeros_like(bits)
        for r, c in np.argwhere(bits):
            edge[r, c] = any(not bits[r + a, c + b] for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1)))
        src = np.argwhere(edge)
        for r, c in np.argwhere(bits & ~edge):
            d = np.hypot(src[:, 0] - r, src[:, 1] - c)
            order = np.argsort(d, kind="stable")
            w = 1 / d[order] ** 2
            surf = np.sum(w * z[src[order, 0], src[order, 1]]) / w.sum()
            assert depth[r, c] == pytest.approx(max(0.0, surf - z[r, c]), abs=1e-12)


class TestMetrics:
    def test_confusion_fixture(self):
        ref = np.array([[1, 1, 1, 0], [1, 1, 0, 0], [0, 0, 0, 0], [1, 0, 0, 0]], bool)
        pred = np.array([[1, 1, 1, 1], [1, 0, 1, 0], [0, 0, 0, 0], [0, 0, 0, 0]], bool)
        m = confusion_metrics(pred, ref)
        assert (m.tp, m.fp, m.tn, m.fn) == (4, 2, 8, 2)
        assert m.oa == 0.75
        assert m.kappa == pytest.approx(7 / 15, abs=1e-15)
        assert m.precision_flood == pytest.approx(2 / 3) and m.recall_flood == pytest.approx(2 / 3)

    def test_perfect_and_degenerate(self):
        a = np.ones((3, 3), bool)
        m = confusion_metrics(a, a)
        assert m.oa == 1.0 and m.kappa is None and m.recall_nonflood is None

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_counts_partition_pixels(self, seed):
        rng = np.random.default_rng(seed)
        p, r = rng.random((7, 5)) < 0.5, rng.random((7, 5)) < 0.5
        m = confusion_metrics(p, r)
        assert m.total == 35
        assert m.kappa is None or -1 <= m.kappa <= 1

    def test_depth_errors_offset(self):
        ref = np.full((4, 4), 1.0)
        rep = depth_errors([ref + 0.1], [ref])
        e = rep.at(0.0)
        assert e.mae == pytest.approx(0.1) and e.mape == pytest.approx(10.0)

    def test_depth_thresholds_select_pixels(self):
        ref = np.array([[0.0, 0.05, 0.2, 1.0]])
        pred = ref + np.array([[0.5, 0.1, 0.1, 0.1]])
        rep = depth_errors(pred, ref)
        assert rep.at(0.0).pixel_count == 4 and rep.at(0.1).pixel_count == 2 and rep.at(0.5).pixel_count == 1
        assert rep.at(0.0).mae == pytest.approx(0.2)
        assert rep.at(0.0).mape == pytest.approx(100 * (2 + 0.5 + 0.1) / 3)

    def test_empty_threshold_is_none(self):
        rep = depth_errors([np.zeros((2, 2))], [np.zeros((2, 2))])
        assert rep.at(0.5).mae is None and rep.at(0.0).mape is None

    def test_overall_is_mean_of_days(self):
        ref = [np.ones((2, 2)), np.ones((3, 3))]
        pred = [ref[0] + 0.2, ref[1] + 0.4]
        assert depth_errors(pred, ref).at(0.0).mae == pytest.approx(0.3)


def test_flood_map_round_trip(tmp_path):
    bits = np.random.default_rng(0).random((6, 7)) < 0.5
    fm = FloodMap(Mask(bits), 0.42, 1.65, (("slope", 3), ("connectivity", 1)), GeoTransform(cell_size=30.0))
    save_flood_map(fm, tmp_path / "f.asc")
    back = load_flood_map(tmp_path / "f.asc")
    assert np.array_equal(back.bits, bits)
    assert back.refinement_log == fm.refinement_log and back.threshold_used == 0.42
