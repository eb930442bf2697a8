import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodkit.rainfall import RainSeries
from floodkit.raster import GeoTransform, Grid2D
from floodkit.swe import (
    DAILY_INFLOW_M3S,
    DEFAULT_MANNING,
    BasinModel,
    BoundarySpec,
    ConfigurationError,
    Hydrograph,
    InflowSegment,
    InstabilityError,
    MappingError,
    MassAccumulator,
    OutflowSegment,
    SchemeParams,
    StaggeredState,
    apply_inflow,
    manning_from_landcover,
    mass_balance,
    simulate,
    stable_dt,
    step,
)


def _model(z, dx=10.0, n=0.03):
    return BasinModel.uniform(Grid2D(np.asarray(z, float), GeoTransform(cell_size=dx)), n)


def _random_state(seed, shape=(8, 9)):
    rng = np.random.default_rng(seed)
    z = rng.uniform(0, 2, shape)
    h = rng.uniform(0, 1, shape) * (rng.random(shape) < 0.7)
    qx = rng.normal(0, 0.2, (shape[0], shape[1] + 1))
    qy = rng.normal(0, 0.2, (shape[0] + 1, shape[1]))
    qx[:, [0, -1]] = 0
    qy[[0, -1], :] = 0
    return z, StaggeredState(h, qx, qy)


class TestParams:
    def test_defaults(self):
        p = SchemeParams()
        assert (p.theta, p.alpha, p.h_dry, p.h_flow_min, p.dt_max) == (0.7, 0.7, 1e-4, 1e-3, 300.0)

    @pytest.mark.parametrize("kw", [{"theta": 0.0}, {"theta": 1.2}, {"alpha": 1.5}, {"h_flow_min": 0.0},
                                    {"dt_max": -1.0}, {"h_dry": -1e-3}])
    def test_out_of_range_rejected(self, kw):
        with pytest.raises(ConfigurationError):
            SchemeParams(**kw)

    def test_model_rejects_nodata_dem(self):
        with pytest.raises(ValueError, match="nodata"):
            _model([[0.0, -9999.0]])

    def test_model_rejects_nonpositive_roughness(self):
        with pytest.raises(ValueError):
            _model([[0.0, 1.0]], n=0.0)


class TestStableDt:
    def test_reference_value(self):
        model = _model(np.zeros((3, 3)), dx=480.0)
        state = StaggeredState.at_rest(np.full((3, 3), 10.0))
        dt = stable_dt(state, model, SchemeParams())
        assert dt == pytest.approx(0.7 * 480 / math.sqrt(9.81 * 10), rel=1e-15)
        assert dt == pytest.approx(33.93, abs=0.01)

    def test_dry_domain_uses_cap(self):
        model = _model(np.zeros((3, 3)))
        assert stable_dt(StaggeredState.dry((3, 3)), model, SchemeParams(dt_max=123.0)) == 123.0

    def test_doubling_depth_scales_by_inverse_root_two(self):
        model = _model(np.zeros((3, 3)), dx=480.0)
        p = SchemeParams()
        a = stable_dt(StaggeredState.at_rest(np.full((3, 3), 4.0)), model, p)
        b = stable_dt(StaggeredState.at_rest(np.full((3, 3), 8.0)), model, p)
        assert b / a == pytest.approx(1 / math.sqrt(2), rel=1e-14)


class TestStep:
    def test_three_cell_golden(self):
        # Hand-evaluated with theta=1 so neighbour smoothing drops out.
        model = _model([[1.0, 0.5, 0.0]])
        state = StaggeredState(np.array([[1.0, 0.8, 0.6]]), np.array([[0.0, 0.2, 0.1, 0.0]]), np.zeros((2, 3)))
        out = step(state, model, None, BoundarySpec(), 1.0, SchemeParams(theta=1.0))
        assert out.qx[0].tolist() == pytest.approx([0.0, 0.8851370250411823, 0.6483964472237861, 0.0], abs=1e-14)
        assert out.h[0].tolist() == pytest.approx([0.9114862974958817, 0.8236740577817396, 0.6648396447223786],
                                                  abs=1e-14)
        assert out.t == 1.0

    def test_lake_at_rest_random_bathymetry(self):
        rng = np.random.default_rng(11)
        z = rng.uniform(0, 3, (20, 20))
        h = np.maximum(2.0 - z, 0.0)
        model = _model(z, dx=50.0)
        state = StaggeredState.at_rest(h)
        for _ in range(100):
            state = step(state, model, None, BoundarySpec(), 10.0, SchemeParams())
        assert np.max(np.abs(state.qx)) == 0 and np.max(np.abs(state.qy)) == 0
        assert np.array_equal(state.h, h)

    @pytest.mark.parametrize("theta,alpha", [(1.0, 0.7), (0.7, 0.55)])
    def test_rounded_lake_stays_quiet_within_stability_bound(self, theta, alpha):
        # A surface that is flat only to rounding stays quiet when the
        # Courant number respects alpha <= sqrt(theta / 2) (theta = 1 is
        # stable up to 0.7 in two dimensions).
        rng = np.random.default_rng(2024)
        i, j = np.mgrid[:32, :32]
        z = 0.5 * np.sin(i / 5.0) * np.cos(j / 7.0) + rng.uniform(0, 0.4, (32, 32))
        h0 = np.maximum(0.6 - z, 0.0)
        model = _model(z, dx=100.0, n=0.035)
        params = SchemeParams(theta=theta, alpha=alpha)
        state = StaggeredState.at_rest(h0)
        for _ in range(1000):
            state = step(state, model, None, BoundarySpec(), stable_dt(state, model, params), params)
        assert max(np.abs(state.qx).max(), np.abs(state.qy).max()) <= 1e-12
        assert np.abs(state.h - h0).max() <= 1e-12

    def test_rain_single_step(self):
        model = _model(np.zeros((4, 4)))
        out = step(StaggeredState.dry((4, 4)), model, 10.0 / 3.6e6, BoundarySpec(), 300.0, SchemeParams())
        assert np.allclose(out.h, 10.0 / 3.6e6 * 300.0, rtol=0, atol=1e-18)
        assert out.h[0, 0] == pytest.approx(8.333e-4, rel=1e-3)

    def test_dry_faces_carry_no_flux(self):
        model = _model(np.zeros((1, 3)))
        state = StaggeredState.at_rest(np.array([[5e-4, 0.0, 0.0]]))
        out = step(state, model, None, BoundarySpec(), 1.0, SchemeParams())
        assert np.all(out.qx == 0)

    def test_non_finite_depth_raises_with_cell(self):
        model = _model(np.zeros((3, 3)))
        rain = np.zeros((3, 3))
        rain[1, 2] = np.inf
        with pytest.raises(InstabilityError) as info:
            step(StaggeredState.dry((3, 3)), model, rain, BoundarySpec(), 1.0, SchemeParams())
        assert info.value.cell == (1, 2)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 5.0))
    def test_depth_non_negative_and_budget_closed(self, seed, dt):
        z, state = _random_state(seed)
        model = _model(z)
        acc = MassAccumulator()
        out = step(state, model, None, BoundarySpec(), dt, SchemeParams(), acc)
        assert np.all(out.h >= 0)
        assert acc.clamped <= 0
        before, after = state.volume(10.0), out.volume(10.0)
        assert abs(after - (before - acc.clamped)) <= 1e-12 * max(1.0, before)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 0.2), st.floats(1.0, 5.0))
    def test_friction_never_increases_discharge(self, n, factor):
        z = [[0.0, 0.0]]
        state = StaggeredState(np.array([[1.0, 0.9]]), np.array([[0.0, 0.5, 0.0]]), np.zeros((2, 2)))
        smooth = step(state, _model(z, n=n), None, BoundarySpec(), 1.0, SchemeParams())
        rough = step(state, _model(z, n=n * factor), None, BoundarySpec(), 1.0, SchemeParams())
        assert abs(rough.qx[0, 1]) <= abs(smooth.qx[0, 1])

    def test_deterministic(self):
        z, state = _random_state(5)
        model = _model(z)
        a = step(state, model, None, BoundarySpec(), 0.5, SchemeParams())
        b = step(state, model, None, BoundarySpec(), 0.5, SchemeParams())
        assert np.array_equal(a.h, b.h) and np.array_equal(a.qx, b.qx)


class TestBoundaries:
    def test_per_face_inflow(self):
        seg = InflowSegment("north", tuple(range(3, 13)), Hydrograph.constant(15914.0))
        state = apply_inflow(StaggeredState.dry((20, 20)), BoundarySpec((seg,)), 0.0, 480.0)
        assert state.qy[0, 3:13] == pytest.approx(15914.0 / (10 * 480.0), rel=1e-15)
        assert state.qy[0, 3] == pytest.approx(3.315, abs=1e-3)
        assert np.count_nonzero(state.qy) == 10

    @pytest.mark.parametrize("side,sign", [("north", 1), ("south", -1), ("west", 1), ("east", -1)])
    def test_inflow_points_inward(self, side, sign):
        seg = InflowSegment(side, tuple(range(10)), Hydrograph.constant(1.0))
        state = apply_inflow(StaggeredState.dry((12, 12)), BoundarySpec((seg,)), 0.0, 1.0)
        arr = {"north": state.qy[0], "south": state.qy[-1], "west": state.qx[:, 0], "east": state.qx[:, -1]}[side]
        assert np.all(np.sign(arr[:10]) == sign)

    def test_segment_needs_contiguous_faces(self):
        with pytest.raises(ConfigurationError, match="contiguous"):
            InflowSegment("west", (0, 1, 2, 3, 4, 6, 7, 8, 9, 10), Hydrograph.constant(1.0))

    def test_face_outside_edge_rejected(self):
        seg = InflowSegment("west", tuple(range(5, 15)), Hydrograph.constant(1.0))
        with pytest.raises(ConfigurationError, match="not an exterior face"):
            BoundarySpec((seg,)).validate((12, 12))

    def test_centred_segment_on_lowest_cell(self):
        j = np.arange(30)
        dem = Grid2D(np.abs(j - 17.0)[None, :] * np.ones((4, 1)))
        seg = InflowSegment.centred(dem, "north", Hydrograph.constant(1.0))
        assert seg.faces == tuple(range(12, 22))

    def test_free_outflow_volume_is_accounted(self):
        model = _model(np.zeros((6, 6)))
        bc = BoundarySpec(outflow_segments=(OutflowSegment("south", 1e-3),))
        init = StaggeredState.at_rest(np.full((6, 6), 0.5))
        res = simulate(model, init, None, bc, SchemeParams(), 600.0, 60.0)
        assert res.report.records[-1].outflow > 0
        assert mass_balance(res.report) <= 1e-12


class TestHydrograph:
    def test_step_function(self):
        h = Hydrograph.daily([10.0, 20.0], t0=100.0)
        assert h(0.0) == 0.0 and h(100.0) == 10.0 and h(86_499.0) == 10.0 and h(86_500.0) == 20.0
        assert h.next_change(100.0) == 86_500.0 and h.next_change(1e9) == math.inf

    def test_csv_round_trip(self, tmp_path):
        h = Hydrograph.daily([v for _, v in DAILY_INFLOW_M3S])
        h.to_csv(tmp_path / "q.csv")
        back = Hydrograph.from_csv(tmp_path / "q.csv")
        assert np.array_equal(back.times, h.times) and np.array_equal(back.values, h.values)

    def test_bad_header(self, tmp_path):
        (tmp_path / "q.csv").write_text("time,q\n0,1\n")
        with pytest.raises(ValueError, match="header"):
            Hydrograph.from_csv(tmp_path / "q.csv")

    def test_daily_table(self):
        assert len(DAILY_INFLOW_M3S) == 14
        assert DAILY_INFLOW_M3S[0][1] == 9345 and DAILY_INFLOW_M3S[-1][1] == 14696


class TestManning:
    def test_table_lookup(self):
        lc = Grid2D([[1.0, 6.0], [7.0, -9999.0]])
        n = manning_from_landcover(lc)
        assert n.values[0].tolist() == [DEFAULT_MANNING[1], 0.030]
        assert n.values[1, 0] == 0.015 and n.nodata[1, 1]

    def test_unknown_codes_listed(self):
        with pytest.raises(MappingError, match=r"\[9, 12\]"):
            manning_from_landcover(Grid2D([[9.0, 12.0, 1.0]]))

    def test_custom_table(self):
        n = manning_from_landcover(Grid2D([[3.0]]), {"3": 0.2})
        assert n.values[0, 0] == 0.2


class TestSimulate:
    def test_rain_fills_closed_basin(self):
        model = _model(np.zeros((16, 16)), dx=100.0)
        rain = RainSeries.constant(10.0, (16, 16), 1, 3600.0)
        res = simulate(model, StaggeredState.dry((16, 16)), rain, BoundarySpec(), SchemeParams(), 3600.0, 600.0)
        expect = 0.01 * 16 * 16 * 100.0**2
        assert abs(res.final.volume(100.0) - expect) <= 1e-10 * expect
        assert mass_balance(res.report) <= 1e-10
        assert len(res.snapshots) == 6
        assert [s.t for s in res.snapshots] == [600.0 * k for k in range(1, 7)]

    def test_clamping_kept_in_budget(self):
        rng = np.random.default_rng(0)
        z = np.add.outer(np.arange(20) * 0.5, np.zeros(20)) + rng.uniform(0, 0.3, (20, 20))
        model = _model(z, dx=5.0, n=0.01)
        h = np.where(rng.random((20, 20)) < 0.3, 0.05, 0.0)
        res = simulate(model, StaggeredState.at_rest(h), None, BoundarySpec(), SchemeParams(dt_max=5.0), 600.0, 60.0)
        assert res.report.records[-1].clamped < 0
        assert mass_balance(res.report) <= 1e-10

    def test_zero_duration(self):
        model = _model(np.zeros((4, 4)))
        res = simulate(model, StaggeredState.at_rest(np.ones((4, 4))), None, BoundarySpec(), SchemeParams(), 0.0, 60.0)
        assert res.steps == 0 and res.snapshots == [] and mass_balance(res.report) == 0.0

    def test_rain_must_cover_run(self):
        model = _model(np.zeros((4, 4)))
        rain = RainSeries.constant(1.0, (4, 4), 1, 600.0)
        with pytest.raises(ValueError, match="cover"):
            simulate(model, StaggeredState.dry((4, 4)), rain, BoundarySpec(), SchemeParams(), 1200.0, 60.0)

    def test_hydrograph_change_lands_on_step(self):
        z = np.zeros((12, 12))
        seg = InflowSegment("west", tuple(range(1, 11)), Hydrograph([0.0, 250.0], [1.0, 0.0]))
        seen = []
        simulate(_model(z), StaggeredState.dry((12, 12)), None, BoundarySpec((seg,)), SchemeParams(dt_max=300.0),
                 600.0, 600.0, sink=lambda i, s: seen.append(s.t))
        res = simulate(_model(z), StaggeredState.dry((12, 12)), None, BoundarySpec((seg,)),
                       SchemeParams(dt_max=300.0), 600.0, 600.0)
        assert seen == [0.0, 600.0]
        assert res.report.records[-1].inflow == pytest.approx(250.0, rel=1e-12)
