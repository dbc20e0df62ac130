"""Tessellation laws against exact rational oracles."""

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    interval_frac,
    psi_frac,
    psi_integer_frac,
    side_frac,
    slack_frac,
)
from stsim.errors import ParamError, RangeError
from stsim.geometry import Cell
from stsim.tessellation import (
    IndexWindow,
    ScaleParams,
    count_support_adjacent,
    cube_ancestor,
    cube_side,
    cube_side_ratio,
    density_slack,
    interval_ancestor,
    interval_descendants,
    interval_length,
    interval_ratio,
    interval_ratio_step,
    log_scale_weight,
    log_scale_weight_integer,
    region_units,
    relation,
    scale_tables,
    scale_weight_integer,
    verify_geometry,
    verify_weights,
    weight_ratio_exact,
)


def params(d=1, m=14, kappa=8, lam=5.0, eps=0.5, c_mix=0.8):
    return ScaleParams(d=d, ell=1.0, eps=eps, eta=1, m=m, lam=lam, r=1.0,
                       kappa=kappa, c_mix=c_mix)


class TestScaleTables:
    @given(m=st.sampled_from([7, 14, 21, 28]), k=st.integers(0, 6))
    def test_cube_side_matches_oracle(self, m, k):
        p = params(m=m)
        assert math.isclose(cube_side(p, k), float(side_frac(m, Fraction(1), k)),
                            rel_tol=1e-12)

    @given(m=st.sampled_from([7, 14, 28]), k=st.integers(1, 6))
    def test_interval_length_matches_oracle(self, m, k):
        p = params(m=m)
        want = interval_frac(m, Fraction(1), Fraction(4, 5), Fraction(1, 2), k)
        assert math.isclose(interval_length(p, k), float(want), rel_tol=1e-12)

    @given(k=st.integers(1, 12))
    def test_slack_matches_oracle_and_floor(self, k):
        p = params(kappa=13)
        want = slack_frac(Fraction(1, 2), k)
        got = density_slack(p, k)
        assert math.isclose(got, float(want), rel_tol=1e-12)
        assert got >= p.eps / 4.0

    def test_scale_tables_bundle(self, p_d2):
        t = scale_tables(p_d2, 2)
        assert math.isclose(t.ell, 224.0, rel_tol=1e-12)
        assert math.isclose(t.beta, 51.2, rel_tol=1e-12)
        assert math.isclose(t.eps, 0.375)
        assert scale_tables(p_d2, 0).beta is None

    @given(m=st.sampled_from([7, 14, 28]), k_lo=st.integers(0, 4), j=st.integers(0, 3))
    def test_exact_ratios_telescope(self, m, k_lo, j):
        p = params(m=m)
        k_hi = k_lo + j
        want = side_frac(m, Fraction(1), k_hi) / side_frac(m, Fraction(1), k_lo)
        assert cube_side_ratio(p, k_lo, k_hi) == want
        if k_lo >= 1:
            wantb = (interval_frac(m, Fraction(1), Fraction(4, 5), Fraction(1, 2), k_hi)
                     / interval_frac(m, Fraction(1), Fraction(4, 5), Fraction(1, 2), k_lo))
            assert interval_ratio(p, k_lo, k_hi) == wantb

    @given(k=st.integers(1, 10))
    def test_interval_step_formula(self, k):
        p = params(kappa=12)
        assert interval_ratio_step(p, k) == p.m**2 * k**2 * (k + 1) ** 4

    def test_scale_above_kappa_rejected(self):
        p = params(kappa=3)
        with pytest.raises(ParamError):
            scale_tables(p, 4)


class TestAncestry:
    @given(
        i=st.integers(-400, 400),
        tau=st.integers(-400, 400),
        j1=st.integers(0, 2),
        j2=st.integers(0, 2),
    )
    def test_ancestor_maps_compose(self, i, tau, j1, j2):
        p = params()
        mid_i = cube_ancestor(p, 1, j1, (i,))
        assert cube_ancestor(p, 1 + j1, j2, mid_i) == cube_ancestor(p, 1, j1 + j2, (i,))
        mid_t = interval_ancestor(p, 1, j1, tau)
        assert interval_ancestor(p, 1 + j1, j2, mid_t) == interval_ancestor(p, 1, j1 + j2, tau)

    @given(i=st.integers(-50, 50), k=st.integers(0, 2))
    def test_child_cube_inside_parent(self, i, k):
        p = params(d=1)
        child = region_units(p, Cell(k, (i,), 0 if k == 0 else 1), "cube")
        parent_idx = cube_ancestor(p, k, 1, (i,))
        parent = region_units(p, Cell(k + 1, parent_idx, 1), "cube")
        (clo, chi), (plo, phi) = child.axes[0], parent.axes[0]
        assert plo <= clo and chi <= phi

    @given(tau=st.integers(-100, 100), k=st.integers(1, 3))
    def test_interval_descendants_invert_ancestor(self, tau, k):
        # one-interval-shifted ranges: every descendant's ancestor is tau
        p = params(kappa=5)
        lo, hi = interval_descendants(p, k + 1, 1, tau)
        assert lo <= hi
        assert interval_ancestor(p, k, 1, lo) == tau
        assert interval_ancestor(p, k, 1, hi) == tau
        assert interval_ancestor(p, k, 1, lo - 1) != tau
        assert interval_ancestor(p, k, 1, hi + 1) != tau


class TestRegions:
    def test_region_nesting_chain(self, p_d1):
        cell = Cell(1, (3,), 2)
        cube = region_units(p_d1, cell, "cube")
        base = region_units(p_d1, cell, "base")
        infl = region_units(p_d1, cell, "influence")
        for (clo, chi), (blo, bhi), (ilo, ihi) in zip(cube.axes, base.axes, infl.axes):
            assert ilo <= blo <= clo < chi <= bhi <= ihi

    def test_super_region_only_at_scale_one(self, p_d1):
        sup = region_units(p_d1, Cell(1, (0,), 0), "super")
        assert sup.axes[0] == (0, p_d1.eta * p_d1.m)
        with pytest.raises(ParamError):
            region_units(p_d1, Cell(2, (0,), 0), "super")

    def test_relation_predicates(self, p_d1):
        a = Cell(1, (0,), 0)
        near = Cell(1, (1,), 0)
        # extended supports reach (3m+1) parent cubes of m*8 cells each,
        # so support adjacency at d=1 m=14 persists out to ~9800 cells
        far = Cell(1, (20000,), 0)
        rel_near = relation(p_d1, a, near)
        assert rel_near.adjacent and not rel_near.well_separated
        rel_far = relation(p_d1, a, far)
        assert not rel_far.adjacent
        assert rel_far.well_separated and not rel_far.support_adjacent
        assert not relation(p_d1, a, a).adjacent
        # symmetry
        assert relation(p_d1, near, a) == rel_near


class TestSupportCounting:
    @pytest.mark.parametrize("j,jp", [(1, 1), (1, 2), (2, 1)])
    def test_interval_method_matches_enumeration(self, p_d1, j, jp):
        window = IndexWindow((-2,), (2,), -2, 2)
        fast = count_support_adjacent(p_d1, j, jp, window, method="interval")
        slow = count_support_adjacent(p_d1, j, jp, window, method="enumerate")
        assert fast == slow

    def test_scale_bounds_enforced(self, p_d1):
        window = IndexWindow((0,), (0,), 0, 0)
        with pytest.raises(ParamError):
            count_support_adjacent(p_d1, 0, 1, window)
        with pytest.raises(ParamError):
            count_support_adjacent(p_d1, 1, p_d1.kappa, window)


class TestWeights:
    @given(j=st.integers(2, 60), d=st.sampled_from([1, 2, 3]))
    def test_integer_ladder_matches_oracle(self, j, d):
        p = params(d=d, m=7 * 2**d, kappa=61)
        want = psi_integer_frac(d, p.m, Fraction(1), Fraction(1, 2), Fraction(5), j)
        # math.log takes the big ints exactly, no float overflow on the way
        ref = math.log(want.numerator) - math.log(want.denominator)
        assert math.isclose(log_scale_weight_integer(p, j), ref, rel_tol=0, abs_tol=1e-8)

    @given(j=st.integers(2, 60), d=st.sampled_from([1, 2, 3]))
    def test_ratio_exact_and_bounded(self, j, d):
        m = 7 * 2**d
        ratio = weight_ratio_exact(j)
        want = (psi_frac(d, m, Fraction(1), Fraction(1, 2), Fraction(5), j)
                / psi_integer_frac(d, m, Fraction(1), Fraction(1, 2), Fraction(5), j))
        assert ratio == want
        assert 1 <= ratio <= 41

    def test_scale_one_needs_occupancy_term(self):
        p = params()
        with pytest.raises(ParamError):
            log_scale_weight(p, 1)
        assert log_scale_weight(p, 1, nu_term=0.1) == math.log(0.1)

    def test_integer_multiple_overflow_safe(self):
        p = params(kappa=130)
        iw = scale_weight_integer(p, 120)
        assert iw.multiple > 10**300  # plain float would be inf
        assert math.isfinite(log_scale_weight_integer(p, 120))

    def test_linear_weight_range_error_deep(self):
        from stsim.tessellation import scale_weight

        p = params(kappa=130)
        with pytest.raises(RangeError):
            scale_weight(p, 120)


class TestVerifySuites:
    def test_geometry_suite_passes(self, p_d1):
        results = verify_geometry(p_d1, kmax=2, imax=2, taumax=2)
        assert results and all(r.passed for r in results)

    def test_weight_suite_passes(self, p_d1):
        results = verify_weights(ScaleParams(
            d=1, ell=1.0, eps=0.5, eta=1, m=14, lam=5.0, r=1.0, kappa=61), jmax=60)
        assert results and all(r.passed for r in results)

    def test_geometry_needs_headroom(self, p_d1):
        with pytest.raises(ParamError):
            verify_geometry(p_d1, kmax=p_d1.kappa)
