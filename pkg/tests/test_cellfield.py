"""Indicator-field tests: simulation planning, the four cell events on
handcrafted node layouts, chain combination, bad-cluster growth, sweeps,
CSV export, and escape estimates.

Handcrafted layouts use static nodes (zero displacement, so every node is
window-confined in checked mode) placed to hit density thresholds exactly;
thresholds here are closed, count >= threshold.
"""

import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stsim import indicators as ind
from stsim import tessellation as tess
from stsim.errors import GeometryError, HorizonError, ParamError
from stsim.geometry import Box, Cell
from stsim.indicators import (
    FieldConfig,
    IndicatorGrid,
    escape_probability,
    plan_simulation,
)
from stsim.mobility import TrajectorySet, simulate
from stsim.tessellation import IndexWindow, ScaleParams

S = 8


def desk(lam: float, kappa: int = 2) -> ScaleParams:
    return ScaleParams(d=1, ell=1.0, eps=0.5, eta=1, m=7, lam=lam, r=1.0,
                       kappa=kappa, c_mix=0.5)


def static_traj(p, xs, units, box, s=S) -> TrajectorySet:
    """Static nodes at 1d positions xs, sampled at the given beta/s units."""
    dt = p.beta / s
    t = np.asarray(units, dtype=float) * dt
    pts = np.asarray(xs, dtype=float)[:, None]
    pos = np.repeat(pts[None, :, :], len(t), axis=0)
    return TrajectorySet(t, pos, box)


def grid_on(p, traj, s=S, **cfg) -> IndicatorGrid:
    return IndicatorGrid(p, traj, FieldConfig(**cfg), s=s)


def simulated_grid(p, window, seed, lam=None, s=S, e_mode="detect"):
    plan = plan_simulation(p, window, s=s)
    traj = simulate(p.lam if lam is None else lam, plan.box, plan.times, seed)
    return IndicatorGrid(p, traj, FieldConfig(e_mode=e_mode), s=s)


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------


class TestPlanSimulation:
    def test_mandatory_anchors_and_fine_ladder(self):
        p = desk(2.0)
        win = IndexWindow((-2,), (2,), 0, 3)
        plan = plan_simulation(p, win, s=S)
        units = set(plan.time_units.tolist())
        # fine ladder covers the whole scale-1 span of the window
        assert set(range(win.tau_lo * S, (win.tau_hi + 2) * S + 1)) <= units
        # every chain anchor of every window cell is an exact grid time
        bt = [0, 1, tess.interval_ratio(p, 1, 2)]
        for i0 in [(-2,), (0,), (2,)]:
            for tau0 in range(win.tau_lo, win.tau_hi + 1):
                for c in ind._chain(p, i0, tau0):
                    assert c.tau * bt[c.k] * S in units
                    assert (c.tau + 2) * bt[c.k] * S in units
        assert (np.diff(plan.time_units) > 0).all()
        np.testing.assert_array_equal(plan.times, plan.time_units * (p.beta / S))
        assert plan.horizon == pytest.approx(
            float(plan.time_units[-1] - plan.time_units[0]) * p.beta / S
        )

    def test_parent_anchor_before_zero_is_included(self):
        # tau = 0 has a tau = -1 parent, whose window starts one full
        # deep interval before the origin
        p = desk(2.0)
        plan = plan_simulation(p, IndexWindow((-1,), (1,), 0, 1), s=S)
        b2 = tess.interval_ratio(p, 1, 2)
        assert plan.time_units[0] == -b2 * S
        assert plan.time_units[-1] == b2 * S

    def test_coarse_ladder_is_capped(self):
        p = desk(2.0)
        win = IndexWindow((-1,), (1,), 0, 1)
        small = plan_simulation(p, win, s=S, max_coarse_points=24)
        big = plan_simulation(p, win, s=S, max_coarse_points=256)
        assert len(small.time_units) < len(big.time_units)
        # the ladders differ but the mandatory anchors survive in both
        b2 = tess.interval_ratio(p, 1, 2)
        anchors = {-b2 * S, 0, b2 * S}
        for plan in (small, big):
            assert anchors <= set(plan.time_units.tolist())

    def test_box_grows_with_padding(self):
        p = desk(2.0)
        win = IndexWindow((0,), (0,), 0, 1)
        lean = plan_simulation(p, win, s=S, pad_sigmas=2.0)
        wide = plan_simulation(p, win, s=S, pad_sigmas=10.0)
        assert wide.box.axes[0][1] > lean.box.axes[0][1]

    def test_window_validation(self):
        p = desk(2.0)
        with pytest.raises(ParamError):
            plan_simulation(p, IndexWindow((0,), (0,), -1, 1))
        with pytest.raises(ParamError):
            plan_simulation(p, IndexWindow((0, 0), (1, 1), 0, 1))
        with pytest.raises(ParamError):
            plan_simulation(p, IndexWindow((0,), (300_000,), 0, 1))
        with pytest.raises(ParamError):
            plan_simulation(desk(2.0, kappa=1), IndexWindow((0,), (0,), 0, 1))

    def test_memory_guard(self, p_d1):
        # kappa = 4 at m = 14 needs a box tens of millions of units wide;
        # dense storage for that is rejected up front
        with pytest.raises(ParamError, match="mem_budget_gib"):
            plan_simulation(p_d1, IndexWindow((0,), (0,), 0, 1))


# ---------------------------------------------------------------------------
# scale-1 occupancy
# ---------------------------------------------------------------------------


BOX_OCC = Box(((-8.0, 8.0),))


class TestOccupiedEvent:
    def test_detect_node_in_cube(self):
        p = desk(7.0)
        g = grid_on(p, static_traj(p, [0.5], [0, 4, 8], BOX_OCC), e_mode="detect")
        assert g.occupied((0,), 0) == 1

    def test_detect_empty_cube(self):
        p = desk(7.0)
        g = grid_on(p, static_traj(p, [3.5], [0, 4, 8], BOX_OCC), e_mode="detect")
        assert g.occupied((0,), 0) == 0
        assert g.occupied((3,), 0) == 1

    def test_detect_no_nodes_at_all(self):
        p = desk(7.0)
        traj = TrajectorySet([0.0, p.beta], np.empty((2, 0, 1)), BOX_OCC)
        assert grid_on(p, traj, e_mode="detect").occupied((0,), 0) == 0

    def test_detect_needs_confinement(self):
        # displacement window is w * ell = 1, half-width 0.5
        p = desk(7.0)
        traj = static_traj(p, [0.5], [0, 4, 8], BOX_OCC)
        traj.positions[1:, 0, 0] += 0.6
        assert grid_on(p, traj, e_mode="detect").occupied((0,), 0) == 0

    def test_count_threshold_is_closed(self):
        # (1 - eps) * lam * (eta * ell)**d = 3.5: four nodes pass, three fail
        p = desk(7.0)
        xs = [0.1, 0.3, 0.6, 0.9]
        g = grid_on(p, static_traj(p, xs, [0, 4, 8], BOX_OCC), e_mode="count")
        assert g.occupied((0,), 0) == 1
        g = grid_on(p, static_traj(p, xs[:3], [0, 4, 8], BOX_OCC), e_mode="count")
        assert g.occupied((0,), 0) == 0

    def test_count_drops_unconfined_nodes(self):
        p = desk(7.0)
        traj = static_traj(p, [0.1, 0.3, 0.6, 0.9], [0, 4, 8], BOX_OCC)
        traj.positions[1, 3, 0] += 0.7
        assert grid_on(p, traj, e_mode="count").occupied((0,), 0) == 0

    def test_callable_mode_and_memoization(self):
        p = desk(7.0)
        calls = []

        def ev(grid, i, tau):
            calls.append((i, tau))
            return 1

        g = grid_on(p, static_traj(p, [0.5], [0, 4, 8], BOX_OCC), e_mode=ev)
        assert g.occupied((2,), 5) == 1
        assert g.occupied((2,), 5) == 1
        assert calls == [((2,), 5)]

    def test_unknown_mode_rejected(self):
        p = desk(7.0)
        g = grid_on(p, static_traj(p, [0.5], [0, 4, 8], BOX_OCC), e_mode="bogus")
        with pytest.raises(ParamError, match="occupancy mode"):
            g.occupied((0,), 0)

    def test_conservative_mode_reserves_margin(self):
        # a huge q swallows the whole window, so even static nodes fail
        p = desk(7.0)
        traj = static_traj(p, [0.5], [0, 4, 8], BOX_OCC)
        assert grid_on(p, traj, e_mode="detect").occupied((0,), 0) == 1
        g = grid_on(p, traj, e_mode="detect",
                    displacement_mode="conservative", q=1e9)
        assert g.occupied((0,), 0) == 0
        g = grid_on(p, traj, e_mode="detect", displacement_mode="bogus")
        with pytest.raises(ParamError, match="displacement mode"):
            g.occupied((0,), 0)


# ---------------------------------------------------------------------------
# density and confinement events
# ---------------------------------------------------------------------------


def comb(cubes, per_cube=5):
    """per_cube nodes spread over each unit cube of the index list."""
    offs = np.linspace(0.1, 0.9, per_cube)
    return [c + o for c in cubes for o in offs]


class TestDensityEvents:
    def test_dense_needs_every_subcube(self):
        # at lam = 14 each of the seven ell/7 subcubes needs exactly one node
        p = desk(14.0)
        full = [(j + 0.5) / 7 for j in range(7)]
        g = grid_on(p, static_traj(p, full, [0, 8], BOX_OCC))
        assert g.dense(Cell(1, (0,), 0)) == 1

        hole = [x for j, x in enumerate(full) if j != 3] + [0.51 / 7]
        g = grid_on(p, static_traj(p, hole, [0, 8], BOX_OCC))
        assert g.dense(Cell(1, (0,), 0)) == 0  # doubling up elsewhere is no cure

    def test_dense_scale_bounds(self):
        p = desk(14.0)
        g = grid_on(p, static_traj(p, [0.5], [0, 8], BOX_OCC))
        with pytest.raises(ParamError):
            g.dense(Cell(0, (0,), 0))
        with pytest.raises(ParamError):
            g.dense(Cell(3, (0,), 0))

    def test_dense_confined_full_pattern(self):
        # scale-2 cube plus halo = 168 scale-1 cubes, each needing >= 5
        # confined nodes against threshold 4.375
        p = desk(7.0)
        assert tess.density_slack(p, 2) == 0.375
        box = Box(((-60.0, 120.0),))
        units = [0, 6272, 12544]  # anchors 0, beta_2, 2 * beta_2
        xs = comb(range(-56, 112))
        g = grid_on(p, static_traj(p, xs, units, box))
        assert g.dense_confined(Cell(2, (0,), 0)) == 1

    def test_dense_confined_kills_on_escape(self):
        # the five nodes of one halo cube wander past the half-width 28
        p = desk(7.0)
        box = Box(((-60.0, 120.0),))
        traj = static_traj(p, comb(range(-56, 112)), [0, 6272, 12544], box)
        sl = slice((30 + 56) * 5, (30 + 56) * 5 + 5)
        traj.positions[1:, sl, 0] += 29.0
        assert grid_on(p, traj).dense_confined(Cell(2, (0,), 0)) == 0

    def test_dense_confined_kills_on_vacancy(self):
        p = desk(7.0)
        box = Box(((-60.0, 120.0),))
        cubes = [c for c in range(-56, 112) if c != 80]
        g = grid_on(p, static_traj(p, comb(cubes), [0, 6272, 12544], box))
        assert g.dense_confined(Cell(2, (0,), 0)) == 0

    def test_base_dense_full_and_knockouts(self):
        # cell (0, tau=784) anchors its base window at the parent time 0;
        # 113 cubes around it need >= 5 nodes confined up to tau * beta
        p = desk(7.0)
        box = Box(((-60.0, 60.0),))
        units = [0, 3136, 6272]
        cell = Cell(1, (0,), 784)
        assert tess.interval_ancestor(p, 1, 1, 784) == 0

        g = grid_on(p, static_traj(p, comb(range(-56, 57)), units, box))
        assert g.base_dense(cell) == 1

        traj = static_traj(p, comb(range(-56, 57)), units, box)
        sl = slice((-20 + 56) * 5, (-20 + 56) * 5 + 5)
        traj.positions[1:, sl, 0] += 29.0
        assert grid_on(p, traj).base_dense(cell) == 0

        cubes = [c for c in range(-56, 57) if c != 10]
        g = grid_on(p, static_traj(p, comb(cubes), units, box))
        assert g.base_dense(cell) == 0

    def test_base_dense_scale_bound(self):
        p = desk(7.0)
        g = grid_on(p, static_traj(p, [0.5], [0, 8], BOX_OCC))
        with pytest.raises(ParamError):
            g.base_dense(Cell(2, (0,), 0))  # kappa - 1 is the last base scale

    def test_region_outside_box_is_an_error(self):
        p = desk(7.0)
        g = grid_on(p, static_traj(p, [0.5], [0, 8], BOX_OCC))
        with pytest.raises(GeometryError):
            g.occupied((1000,), 0)


# ---------------------------------------------------------------------------
# chain combination
# ---------------------------------------------------------------------------


def tiny_grid(p) -> IndicatorGrid:
    traj = TrajectorySet([0.0], np.empty((1, 0, 1)), Box(((-1.0, 1.0),)))
    return IndicatorGrid(p, traj, FieldConfig())


class TestAncestryChain:
    def test_chain_matches_ancestor_maps(self, p_d1):
        chain = ind._chain(p_d1, (5,), 7)
        assert chain[0] == Cell(1, (5,), 7)
        for k in range(1, p_d1.kappa):
            assert chain[k].k == k + 1
            assert chain[k].i == tess.cube_ancestor(p_d1, 1, k, (5,))
            assert chain[k].tau == tess.interval_ancestor(p_d1, 1, k, 7)

    def chain3(self):
        p = desk(7.0, kappa=3)
        g = tiny_grid(p)
        c1, c2, c3 = ind._chain(p, (0,), 0)
        return g, c1, c2, c3

    def test_all_links_good(self):
        g, c1, c2, c3 = self.chain3()
        g._memo.update({("Dext", c3): 1, ("Dext", c2): 1, ("Dbase", c2): 1,
                        ("E", c1): 1, ("Dbase", c1): 1})
        assert g.ancestry((0,), 0) == 1
        assert g.ancestry((0,), 0, pruned=False) == 1

    def test_good_for_free_links(self):
        # a link with a failed base event is good regardless of its own event
        g, c1, c2, c3 = self.chain3()
        g._memo.update({("Dext", c3): 1, ("Dext", c2): 0, ("Dbase", c2): 0,
                        ("E", c1): 0, ("Dbase", c1): 0})
        assert g.level_indicator(c2) == 1
        assert g.level_indicator(c1) == 1
        assert g.ancestry((0,), 0) == 1

    def test_middle_link_kills(self):
        g, c1, c2, c3 = self.chain3()
        g._memo.update({("Dext", c3): 1, ("Dext", c2): 0, ("Dbase", c2): 1,
                        ("E", c1): 1, ("Dbase", c1): 1})
        assert g.ancestry((0,), 0) == 0
        assert g.ancestry((0,), 0, pruned=False) == 0

    def test_pruning_skips_shallow_links(self):
        # with only the deepest link preloaded as bad, the pruned product
        # never touches the shallower cells; the exhaustive one does, and
        # trips on the unsimulated span
        g, c1, c2, c3 = self.chain3()
        g._memo[("Dext", c3)] = 0
        assert g.ancestry((0,), 0) == 0
        with pytest.raises((GeometryError, HorizonError)):
            g.ancestry((0,), 0, pruned=False)


# ---------------------------------------------------------------------------
# bad clusters
# ---------------------------------------------------------------------------


WIN5 = IndexWindow((-2,), (2,), 0, 4)


def patterned_grid(bad_cells):
    g = tiny_grid(desk(7.0))
    g.ancestry = lambda i, tau, pruned=True: 0 if (i, tau) in bad_cells else 1
    return g


class TestBadCluster:
    def test_interior_cluster(self):
        bad = {((0,), 2), ((0,), 3), ((1,), 3)}
        res = patterned_grid(bad).bad_cluster(WIN5, start=((0,), 2))
        assert res.cells == bad
        assert not res.escaped

    def test_diagonal_moves_connect(self):
        bad = {((-1,), 1), ((0,), 2), ((1,), 3)}
        res = patterned_grid(bad).bad_cluster(WIN5, start=((0,), 2))
        assert res.cells == bad

    def test_spatial_face_escapes(self):
        bad = {((0,), 2), ((1,), 2), ((2,), 2)}
        assert patterned_grid(bad).bad_cluster(WIN5, start=((0,), 2)).escaped

    def test_last_time_layer_escapes(self):
        bad = {((0,), 2), ((0,), 3), ((0,), 4)}
        assert patterned_grid(bad).bad_cluster(WIN5, start=((0,), 2)).escaped

    def test_first_time_layer_is_a_wall(self):
        bad = {((0,), 0), ((0,), 1)}
        res = patterned_grid(bad).bad_cluster(WIN5, start=((0,), 1))
        assert res.cells == bad
        assert not res.escaped

    def test_good_start_is_empty(self):
        res = patterned_grid(set()).bad_cluster(WIN5, start=((0,), 2))
        assert res.cells == set()
        assert not res.escaped
        assert res.checked == 1

    def test_default_start_is_window_origin(self):
        bad = {((0,), 0)}
        res = patterned_grid(bad).bad_cluster(WIN5)
        assert res.cells == bad

    def test_start_outside_window(self):
        with pytest.raises(ParamError):
            patterned_grid(set()).bad_cluster(WIN5, start=((9,), 0))

    def test_unknown_badness(self):
        with pytest.raises(ParamError):
            patterned_grid(set()).bad_cluster(WIN5, badness="bogus")

    def test_badness_dispatch(self):
        # ancestry all-bad, occupancy all-good: the two modes must disagree
        g = tiny_grid(desk(7.0))
        g.ancestry = lambda i, tau, pruned=True: 0
        g.occupied = lambda i, tau: 1
        assert g.bad_cluster(WIN5, badness="ancestry").cells == {
            ((i,), tau) for i in range(-2, 3) for tau in range(0, 5)
        }
        assert g.bad_cluster(WIN5, badness="detect").cells == set()

    @settings(max_examples=60, deadline=None)
    @given(
        bad=st.sets(
            st.tuples(st.integers(-2, 2), st.integers(0, 4)), max_size=25
        ),
        start=st.tuples(st.integers(-2, 2), st.integers(0, 4)),
    )
    def test_matches_reference_flood_fill(self, bad, start):
        bad_cells = {((i,), tau) for i, tau in bad}
        s = ((start[0],), start[1])
        res = patterned_grid(bad_cells).bad_cluster(WIN5, start=s)

        # reference flood fill over the 3**2 - 1 neighbourhood
        want = set()
        if s in bad_cells:
            want, stack = {s}, [s]
            while stack:
                (x,), t = stack.pop()
                for dx, dt in itertools.product((-1, 0, 1), repeat=2):
                    nb = ((x + dx,), t + dt)
                    if (dx or dt) and nb in bad_cells and nb not in want:
                        if -2 <= x + dx <= 2 and 0 <= t + dt <= 4:
                            want.add(nb)
                            stack.append(nb)
        assert res.cells == want
        assert res.escaped == any(
            abs(i[0]) == 2 or tau == 4 for i, tau in want
        )


# ---------------------------------------------------------------------------
# sweeps, structural laws, export
# ---------------------------------------------------------------------------


WIN_SIM = IndexWindow((-1,), (1,), 0, 1)


class TestSweepLaws:
    @pytest.mark.parametrize("lam", [2.0, 50.0])
    def test_structural_laws_hold_per_replica(self, p_desk, lam):
        for seed in range(3):
            g = simulated_grid(p_desk, WIN_SIM, seed, lam=lam)
            assert g.sweep(WIN_SIM, pruned=True) == g.sweep(WIN_SIM, pruned=False)
            for idx in [(-1,), (0,), (1,)]:
                for tau in (0, 1):
                    c1, c2 = ind._chain(p_desk, idx, tau)
                    assert g.ancestry(idx, tau) <= g.occupied(idx, tau)
                    assert g.dense_confined(c2) <= g.dense(c2)
                    assert g.dense_confined(c1) <= g.dense(c1)
                    assert g.base_dense(c1) >= g.dense_confined(c2)

    def test_detect_cluster_inside_ancestry_cluster(self, p_desk):
        for seed in range(3):
            g = simulated_grid(p_desk, WIN_SIM, seed, lam=2.0)
            det = g.bad_cluster(WIN_SIM, badness="detect")
            anc = g.bad_cluster(WIN_SIM, badness="ancestry")
            assert det.cells <= anc.cells
            assert anc.escaped or not det.escaped

    def test_export_cells_csv(self, p_desk, tmp_path):
        g = simulated_grid(p_desk, WIN_SIM, 3, lam=2.0)
        path = tmp_path / "cells.csv"
        g.export_cells(WIN_SIM, str(path))
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0].keys()) == [
            "k", "i1", "tau", "E", "Dext", "Dbase", "Ak", "A"
        ]

        by_cell = {(int(r["k"]), int(r["i1"]), int(r["tau"])): r for r in rows}
        assert len(by_cell) == len(rows)
        scale1 = [r for r in rows if r["k"] == "1"]
        scale2 = [r for r in rows if r["k"] == "2"]
        assert len(scale1) == WIN_SIM.cell_count()
        assert scale2  # shared ancestors appear once each

        for r in scale1:
            assert r["Dext"] == "" and r["E"] in "01" and r["Dbase"] in "01"
            assert int(r["Ak"]) == max(int(r["E"]), 1 - int(r["Dbase"]))
            parent = by_cell[(
                2,
                tess.cube_ancestor(p_desk, 1, 1, (int(r["i1"]),))[0],
                tess.interval_ancestor(p_desk, 1, 1, int(r["tau"])),
            )]
            assert int(r["A"]) == int(r["Ak"]) * int(parent["Ak"])
            assert int(r["A"]) == g.ancestry((int(r["i1"]),), int(r["tau"]))
        for r in scale2:
            assert r["E"] == "" and r["Dbase"] == "" and r["A"] == ""
            assert int(r["Ak"]) == int(r["Dext"])


# ---------------------------------------------------------------------------
# escape probability
# ---------------------------------------------------------------------------


class TestEscapeProbability:
    def test_no_nodes_escape_surely(self, p_desk):
        est = escape_probability(p_desk, WIN_SIM, 3, seed=0, lam=0.0)
        assert est.value == 1.0
        assert est.escapes == [True, True, True]
        assert est.n == 3
        assert 0.0 <= est.ci_low <= est.value <= est.ci_high <= 1.0 + 1e-12

    def test_replicas_are_deterministic(self, p_desk):
        a = escape_probability(p_desk, WIN_SIM, 4, seed=9, lam=2.0)
        b = escape_probability(p_desk, WIN_SIM, 4, seed=9, lam=2.0)
        assert a.escapes == b.escapes
        assert a.value == b.value == sum(a.escapes) / 4

    def test_detect_escapes_imply_ancestry_escapes(self, p_desk):
        kw = dict(n_replicas=6, seed=5, lam=2.0)
        det = escape_probability(p_desk, WIN_SIM, badness="detect", **kw)
        anc = escape_probability(p_desk, WIN_SIM, badness="ancestry", **kw)
        for d, a in zip(det.escapes, anc.escapes):
            assert a or not d
        assert det.value <= anc.value
