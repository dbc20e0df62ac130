"""Node motion: point process laws, displacement laws, spatial queries."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from stsim.errors import GeometryError, HorizonError, ParamError, RejectionError
from stsim.geometry import Box
from stsim.mobility import (
    SpatialIndex,
    TrajectorySet,
    conditioned_increment,
    conditioned_increments,
    covered,
    padded_half_width,
    sample_ppp,
    simulate,
)
from stsim import rng as _rng


BOX1 = Box.cube(4.0, 1)
BOX2 = Box.cube(4.0, 2)


class TestSamplePPP:
    def test_counts_poisson_mean_and_dispersion(self):
        lam, vol = 3.0, BOX2.volume()
        counts = np.array([len(sample_ppp(lam, BOX2, seed)) for seed in range(400)])
        mean = lam * vol
        assert abs(counts.mean() - mean) <= 3.0 * math.sqrt(mean / len(counts))
        assert 0.8 <= counts.var(ddof=1) / counts.mean() <= 1.2

    def test_determinism_and_stream_separation(self):
        a = sample_ppp(2.0, BOX2, seed=7)
        b = sample_ppp(2.0, BOX2, seed=7)
        c = sample_ppp(2.0, BOX2, seed=8)
        d = sample_ppp(2.0, BOX2, seed=7, box_id=1)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, d)

    def test_empty_intensity(self):
        pts = sample_ppp(0.0, BOX2, seed=0)
        assert pts.shape == (0, 2)

    def test_points_inside_box(self):
        pts = sample_ppp(5.0, BOX2, seed=3)
        assert (pts >= -4.0).all() and (pts <= 4.0).all()


class TestSimulate:
    def test_increment_variance(self):
        times = [0.0, 0.5, 1.0, 2.0]
        traj = simulate(40.0, BOX2, times, seed=0)
        pos = traj.positions
        for j in range(1, len(times)):
            dt = times[j] - times[j - 1]
            incs = (pos[j] - pos[j - 1]).ravel()
            # pooled variance over ~2500 iid normals; 4 sigma of chi2 slack
            ratio = incs.var() / dt
            assert abs(ratio - 1.0) <= 4.0 * math.sqrt(2.0 / len(incs))

    def test_thinning_is_nested_subset(self):
        times = [0.0, 1.0]
        traj = simulate(10.0, BOX1, times, seed=1)
        gen = _rng.stream(1, _rng.THIN)
        keep = gen.random(traj.positions.shape[1]) < 0.4
        sub = traj.subset(keep)
        assert sub.positions.shape[1] == keep.sum()
        assert np.array_equal(sub.positions, traj.positions[:, keep, :])

    def test_grid_times_are_the_contract(self):
        traj = simulate(5.0, BOX1, [0.0, 1.0, 2.0], seed=0)
        assert traj.index_of(1.0 + 1e-12) == 1
        with pytest.raises(HorizonError):
            traj.index_of(1.0001)
        with pytest.raises(HorizonError):
            traj.index_of(5.0)

    def test_torus_wraps_queries(self):
        traj = simulate(5.0, BOX1, [0.0, 50.0], seed=2, torus=True)
        assert (np.abs(traj.positions_at(50.0)) <= 4.0 + 1e-12).all()

    def test_explicit_points_accepted(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0]])
        traj = simulate(pts, BOX2, [0.0, 1.0], seed=0)
        assert np.array_equal(traj.positions[0], pts)


class TestDisplacementEvents:
    def test_displacement_in_on_synthetic_paths(self):
        # two hand-built nodes: one drifts 0.3 per step, one jumps far
        times = [0.0, 1.0, 2.0]
        positions = np.array(
            [[[0.0], [5.0]], [[0.3], [5.0]], [[0.6], [9.0]]]
        )
        traj = TrajectorySet(times, positions, Box.cube(20.0, 1))
        ok = traj.displacement_in(0.0, 2.0, 1.4, mode="checked")
        assert ok.tolist() == [True, False]
        tight = traj.displacement_in(0.0, 2.0, 1.0, mode="checked")
        assert tight.tolist() == [False, False]
        early = traj.displacement_in(0.0, 1.0, 1.0, mode="checked")
        assert early.tolist() == [True, True]

    def test_conservative_mode_is_stricter(self):
        traj = simulate(30.0, BOX1, np.linspace(0.0, 1.0, 9), seed=4)
        cons = traj.displacement_in(0.0, 1.0, 1.0, mode="conservative")
        chk = traj.displacement_in(0.0, 1.0, 1.0, mode="checked")
        assert not (cons & ~chk).any()

    @given(z=st.floats(0.5, 4.0), seed=st.integers(0, 20))
    @settings(max_examples=20, deadline=None)
    def test_checked_matches_bruteforce(self, z, seed):
        times = np.linspace(0.0, 1.0, 5)
        traj = simulate(20.0, BOX1, times, seed=seed)
        got = traj.displacement_in(0.0, 1.0, z, mode="checked")
        disp = traj.positions - traj.positions[0]
        want = (np.abs(disp) <= z / 2.0 + 1e-12).all(axis=(0, 2))
        assert np.array_equal(got, want)


class TestSpatialIndex:
    @given(seed=st.integers(0, 50), radius=st.floats(0.2, 2.5))
    @settings(max_examples=25, deadline=None)
    def test_query_ball_matches_bruteforce(self, seed, radius):
        gen = np.random.default_rng(seed)
        pts = gen.uniform(-4, 4, size=(80, 2))
        x = gen.uniform(-4, 4, size=2)
        idx = SpatialIndex(pts, cell_side=1.0)
        got = np.sort(idx.query_ball(x, radius))
        want = np.flatnonzero(np.linalg.norm(pts - x, axis=1) <= radius)
        assert np.array_equal(got, want)

    def test_covered_agrees_with_distance(self):
        pts = np.array([[0.0, 0.0], [3.0, 0.0]])
        idx = SpatialIndex(pts, cell_side=1.0)
        assert covered(idx, np.array([0.5, 0.0]), r=1.0)
        assert not covered(idx, np.array([1.5, 0.0]), r=1.0)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ParamError):
            SpatialIndex(np.zeros(3), cell_side=1.0)
        with pytest.raises(ParamError):
            SpatialIndex(np.zeros((3, 2)), cell_side=0.0)


class TestConditionedIncrements:
    def test_endpoints_confined_and_centered(self):
        gen = np.random.default_rng(0)
        z = 2.0
        ends = conditioned_increments(4000, 2, 1.0, z, gen, substeps=16)
        assert ends.shape == (4000, 2)
        assert (np.abs(ends) <= z / 2.0).all()
        assert abs(ends.mean()) <= 4.0 * ends.std() / math.sqrt(ends.size)

    def test_acceptance_rate_bound(self):
        # the rejection sampler's acceptance event is exactly the
        # confinement event, so its rate obeys the analytic floor
        rng = np.random.default_rng(1)
        for d, z_over in ((1, 3.0), (2, 4.0)):
            frac = oracles.brownian_sup_inside(
                4000, d, 1.0, z_over / 2.0, 64, rng
            )
            floor = 1.0 - d * math.exp(-z_over**2 / 18.0)
            assert frac >= floor - 2.0 * oracles.mc_stderr(frac, 4000)

    def test_infinite_tube_is_plain_gaussian(self):
        gen = np.random.default_rng(2)
        ends = conditioned_increments(2000, 1, 2.0, math.inf, gen)
        assert abs(ends.var() - 2.0) <= 0.3

    def test_tight_tube_raises_with_rate(self):
        gen = np.random.default_rng(3)
        with pytest.raises(RejectionError) as exc:
            conditioned_increments(10, 1, 1.0, 0.05, gen, substeps=32,
                                   max_proposals=512)
        assert exc.value.acceptance_rate is not None
        assert exc.value.acceptance_rate <= 0.05

    def test_single_increment_wrapper(self):
        gen = np.random.default_rng(4)
        one = conditioned_increment(2, 1.0, 1.5, gen)
        assert one.shape == (2,)


class TestPaddedBox:
    def test_padding_covers_radius_and_drift(self):
        h = padded_half_width(1.0, 4.0, pad_sigmas=6.0)
        assert h >= 1.0 + 6.0 * math.sqrt(4.0)

    @given(h1=st.floats(0.1, 5.0), h2=st.floats(0.1, 5.0))
    def test_monotone_in_horizon(self, h1, h2):
        lo, hi = sorted((h1, h2))
        assert padded_half_width(1.0, lo) <= padded_half_width(1.0, hi)


class TestRngStreams:
    def test_streams_reproducible_and_distinct(self):
        a = _rng.stream(123, _rng.PPP).random(4)
        b = _rng.stream(123, _rng.PPP).random(4)
        c = _rng.stream(123, _rng.EVOLVE).random(4)
        e = _rng.stream(123, _rng.PPP, a=1).random(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, e)

    def test_replica_seeds_distinct(self):
        seeds = {_rng.replica_seed(0, rep) for rep in range(100)}
        assert len(seeds) == 100
