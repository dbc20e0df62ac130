"""Multi-scale space-time tessellation.

Scales are indexed by k.  Cube sides grow by the exact integer factor
m*k**3 per scale and interval lengths by m**2 * k**2 * (k+1)**4, so every
ratio between scales is a Python int and every region endpoint is an
integer multiple of the finest units (``ell/m`` in space, the scale-1
interval length in time).  Absolute magnitudes are evaluated in log space
so deep scales never silently overflow: linear-value accessors raise
``RangeError`` instead of returning inf.

Region and separation predicates operate on the integer-unit
representation, which makes the exhaustive containment/disjointness
verifications exact.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParamError, RangeError, WindowError
from .geometry import Box, Cell, SpaceTimeRegion, TimeInterval

_LOG_MAX_DOUBLE = math.log(float.fromhex("0x1.fffffffffffffp+1023"))

REGION_KINDS = ("cube", "base", "influence", "extended", "super")
TIME_KINDS = ("interval", "influence", "support", "extended_support")


@dataclass(frozen=True)
class ScaleParams:
    """Parameters of one tessellation family.

    ``n`` and ``beta`` are derived: n solves n**d = m/(7*eta) and must be a
    positive integer, beta = c_mix * (ell/m)**2 / eps**2 is the scale-1
    interval length.  ``w`` is the displacement-window multiplier and
    ``kappa`` the deepest scale the family exposes.
    """

    d: int
    ell: float
    eps: float
    eta: int
    m: int
    lam: float
    r: float
    kappa: int = 2
    w: float = 1.0
    c_mix: float = 0.8
    n: int = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        if self.d < 1 or not isinstance(self.d, int):
            raise ParamError("d must be a positive integer")
        if not self.ell > 0:
            raise ParamError("ell must be positive")
        if not 0 < self.eps < 1:
            raise ParamError("eps must lie in (0, 1)")
        if self.eta < 1 or not isinstance(self.eta, int):
            raise ParamError("eta must be a positive integer")
        if self.m < 1 or not isinstance(self.m, int):
            raise ParamError("m must be a positive integer")
        if self.lam < 0:
            raise ParamError("lam must be non-negative")
        if not self.r > 0:
            raise ParamError("r must be positive")
        if self.kappa < 1 or self.kappa > 1_000_000:
            raise ParamError("kappa must be in [1, 1e6]")
        if not self.w > 0:
            raise ParamError("w must be positive")
        if not self.c_mix > 0:
            raise ParamError("c_mix must be positive")

        # Sub-grid count per axis: n**d == m / (7 * eta), exactly.
        q, rem = divmod(self.m, 7 * self.eta)
        n = round(q ** (1.0 / self.d)) if rem == 0 and q > 0 else 0
        if rem != 0 or n < 1 or n**self.d != q:
            raise ParamError(
                f"m/(7*eta) = {self.m}/{7 * self.eta} must be the d-th power of a "
                f"positive integer (n**d = m/(7*eta)); got no integer n for d={self.d}"
            )
        object.__setattr__(self, "n", n)
        if n < 2:
            warnings.warn(
                f"n = {n} < 2 (m < 7*eta*2**d): sub-grid is degenerate; "
                "fine for desk experiments, outside the regime the deep-scale "
                "guarantees assume",
                UserWarning,
                stacklevel=2,
            )

        beta = self.c_mix * (self.ell / self.m) ** 2 / self.eps**2
        object.__setattr__(self, "beta", beta)

        # Scale-1 influence intervals must fit inside three scale-2 intervals.
        if max(self.eta, 2) > 16 * self.m * self.m:
            raise ParamError(
                "max(eta, 2) * beta must not exceed the scale-2 interval "
                "length 16 * m**2 * beta"
            )

        floor = self.w_floor()
        if self.w < floor:
            warnings.warn(
                f"w = {self.w} is below the confinement floor {floor:.6g}; "
                "displacement windows are narrower than the mixing argument needs",
                UserWarning,
                stacklevel=2,
            )

    def w_floor(self) -> float:
        """Smallest admissible displacement multiplier for this family."""
        return math.sqrt(
            18.0 * self.eta * (self.beta / self.ell**2) * math.log(8 * self.d / self.eps)
        )


@dataclass(frozen=True)
class ScaleTable:
    """Linear-space table row for one scale: (cube side, interval length, slack)."""

    ell: float
    beta: Optional[float]
    eps: float


def _check_scale(p: ScaleParams, k: int, lo: int = 0) -> None:
    if not isinstance(k, int) or k < lo or k > p.kappa:
        raise ParamError(f"scale k={k} outside [{lo}, kappa={p.kappa}]")


def log_cube_side(p: ScaleParams, k: int) -> float:
    """log of the scale-k cube side; exact integer ratios underneath."""
    _check_scale(p, k)
    if k == 0:
        return math.log(p.ell) - math.log(p.m)
    return math.log(p.ell) + (k - 1) * math.log(p.m) + 3.0 * math.lgamma(k + 1)


def cube_side(p: ScaleParams, k: int) -> float:
    lv = log_cube_side(p, k)
    if lv > _LOG_MAX_DOUBLE:
        raise RangeError(
            f"cube side at scale {k} exceeds double range (log value {lv:.1f}); "
            "use log_cube_side"
        )
    return math.exp(lv)


def log_interval_length(p: ScaleParams, k: int) -> float:
    _check_scale(p, k, lo=1)
    return (
        math.log(p.c_mix)
        + 2.0 * log_cube_side(p, k - 1)
        + 4.0 * math.log(k)
        - 2.0 * math.log(p.eps)
    )


def interval_length(p: ScaleParams, k: int) -> float:
    lv = log_interval_length(p, k)
    if lv > _LOG_MAX_DOUBLE:
        raise RangeError(
            f"interval length at scale {k} exceeds double range (log value {lv:.1f}); "
            "use log_interval_length"
        )
    return math.exp(lv)


def density_slack(p: ScaleParams, k: int) -> float:
    """Scale-k density slack: eps * (2 - sum_{i<=k} i**-2).  Never below eps/4."""
    _check_scale(p, k)
    return p.eps * (2.0 - sum(1.0 / (i * i) for i in range(1, k + 1)))


def scale_tables(p: ScaleParams, k: int) -> ScaleTable:
    """Linear-space (cube side, interval length, density slack) at scale k.

    The interval length exists only for k >= 1.  Raises RangeError rather
    than returning inf when a value exceeds double precision.
    """
    _check_scale(p, k)
    return ScaleTable(
        ell=cube_side(p, k),
        beta=None if k == 0 else interval_length(p, k),
        eps=density_slack(p, k),
    )


def cube_side_ratio(p: ScaleParams, k_lo: int, k_hi: int) -> int:
    """Exact integer ratio of cube sides, scale k_hi over scale k_lo."""
    _check_scale(p, k_lo)
    _check_scale(p, k_hi)
    if k_hi < k_lo:
        raise ParamError("need k_hi >= k_lo")
    out = 1
    for s in range(k_lo + 1, k_hi + 1):
        out *= p.m * s**3
    return out


def interval_ratio_step(p: ScaleParams, k: int) -> int:
    """Exact integer ratio of interval lengths, scale k+1 over scale k."""
    _check_scale(p, k, lo=1)
    if k + 1 > p.kappa:
        raise ParamError(f"scale {k + 1} above kappa={p.kappa}")
    return p.m**2 * k**2 * (k + 1) ** 4


def interval_ratio(p: ScaleParams, k_lo: int, k_hi: int) -> int:
    """Exact integer ratio of interval lengths, scale k_hi over scale k_lo."""
    _check_scale(p, k_lo, lo=1)
    _check_scale(p, k_hi, lo=1)
    if k_hi < k_lo:
        raise ParamError("need k_hi >= k_lo")
    out = 1
    for s in range(k_lo, k_hi):
        out *= p.m**2 * s**2 * (s + 1) ** 4
    return out


def cube_ancestor(p: ScaleParams, k: int, j: int, i: Sequence[int]) -> Tuple[int, ...]:
    """Index of the scale-(k+j) cube containing the scale-k cube ``i``."""
    if j < 0:
        raise ParamError("j must be non-negative")
    _check_scale(p, k)
    _check_scale(p, k + j)
    ratio = cube_side_ratio(p, k, k + j)
    return tuple(a // ratio for a in i)


def interval_ancestor(p: ScaleParams, k: int, j: int, tau: int) -> int:
    """Index of the scale-(k+j) ancestor interval of the scale-k interval tau.

    One step maps tau to the index tau' for which the time point
    tau * beta_k lies in the half-open interval [(tau'+1) * beta_{k+1},
    (tau'+2) * beta_{k+1}); equivalently tau // (beta_{k+1}/beta_k) - 1.
    """
    if j < 0:
        raise ParamError("j must be non-negative")
    _check_scale(p, k, lo=1)
    _check_scale(p, k + j, lo=1)
    out = tau
    for s in range(k, k + j):
        out = out // interval_ratio_step(p, s) - 1
    return out


def interval_descendants(p: ScaleParams, k: int, j: int, tau: int) -> Tuple[int, int]:
    """Inclusive index range of scale-(k-j) intervals whose ancestor is tau."""
    if j < 0:
        raise ParamError("j must be non-negative")
    _check_scale(p, k, lo=1)
    _check_scale(p, k - j, lo=1)
    lo = hi = tau
    for s in range(k - 1, k - j - 1, -1):
        rho = interval_ratio_step(p, s)
        lo, hi = (lo + 1) * rho, (hi + 2) * rho - 1
    return lo, hi


# ---------------------------------------------------------------------------
# Regions.  The *_units functions return integer endpoints in units of the
# finest cube side (ell/m) and the scale-1 interval length; the plain
# functions scale them to physical units with exact Fraction arithmetic.
# ---------------------------------------------------------------------------


def _halo(p: ScaleParams, k: int) -> int:
    # Cube-count radius of the base neighbourhood at scale k.
    return p.eta * p.m * p.n * (k + 1) ** 3


def region_units(p: ScaleParams, cell: Cell, kind: str = "cube") -> Box:
    """Spatial region of a cell, integer endpoints in units of ell/m."""
    k, i = cell.k, cell.i
    if len(i) != p.d:
        raise ParamError(f"cube index has dim {len(i)}, params have d={p.d}")
    if kind not in REGION_KINDS:
        raise ParamError(f"unknown region kind {kind!r}")
    _check_scale(p, k)
    side = cube_side_ratio(p, 0, k)
    if kind == "cube":
        return Box(tuple((a * side, (a + 1) * side) for a in i))
    if kind == "base":
        h = _halo(p, k)
        return Box(tuple(((a - h) * side, (a + 1 + h) * side) for a in i))
    if kind == "influence":
        h = 2 * _halo(p, k)
        return Box(tuple(((a - h) * side, (a + 1 + h) * side) for a in i))
    if kind == "extended":
        if k < 1:
            raise ParamError("extended cubes exist for k >= 1 only")
        off = _halo(p, k - 1) * cube_side_ratio(p, 0, k - 1)
        return Box(tuple((a * side - off, (a + 1) * side + off) for a in i))
    # super cube: the eta-fold scale-1 cube anchored at i
    if k != 1:
        raise ParamError("super cubes exist at scale 1 only")
    return Box(tuple((a * side, (a + p.eta) * side) for a in i))


def time_region_units(p: ScaleParams, cell: Cell, kind: str = "interval") -> TimeInterval:
    """Time region of a cell, integer endpoints in units of the scale-1 length."""
    k, tau = cell.k, cell.tau
    if kind not in TIME_KINDS:
        raise ParamError(f"unknown time region kind {kind!r}")
    _check_scale(p, k, lo=1)
    b_k = interval_ratio(p, 1, k)
    if kind == "interval":
        return TimeInterval(tau * b_k, (tau + 1) * b_k)
    _check_scale(p, k + 1, lo=1)
    b_up = interval_ratio(p, 1, k + 1)
    g = interval_ancestor(p, k, 1, tau)
    if kind == "influence":
        reach = max(p.eta, 2) if k == 1 else 2
        return TimeInterval(g * b_up, (tau + reach) * b_k)
    if kind == "support":
        return TimeInterval((g - 3) * b_up, (g + 6) * b_up)
    return TimeInterval((g - 12) * b_up, (g + 15) * b_up)


def support_units(p: ScaleParams, cell: Cell, extended: bool = False) -> SpaceTimeRegion:
    """Space-time support of a cell (one scale up), integer units."""
    k, i = cell.k, cell.i
    _check_scale(p, k, lo=1)
    _check_scale(p, k + 1, lo=1)
    parent = cube_ancestor(p, k, 1, i)
    side = cube_side_ratio(p, 0, k + 1)
    reach = 3 * p.m + 1 if extended else p.m
    box = Box(tuple(((a - reach) * side, (a + reach + 1) * side) for a in parent))
    time = time_region_units(p, cell, "extended_support" if extended else "support")
    return SpaceTimeRegion(box, time)


def cell_region_units(p: ScaleParams, cell: Cell) -> SpaceTimeRegion:
    """The cell's own cube-times-interval region, integer units."""
    return SpaceTimeRegion(
        region_units(p, cell, "cube"), time_region_units(p, cell, "interval")
    )


def space_unit(p: ScaleParams) -> Fraction:
    return Fraction(p.ell) / p.m


def time_unit(p: ScaleParams) -> Fraction:
    return Fraction(p.beta)


def region(p: ScaleParams, cell: Cell, kind: str = "cube") -> Box:
    """Spatial region in physical units (exact Fraction endpoints)."""
    return region_units(p, cell, kind).scaled(space_unit(p))


def time_region(p: ScaleParams, cell: Cell, kind: str = "interval") -> TimeInterval:
    """Time region in physical units (exact Fraction endpoints)."""
    return time_region_units(p, cell, kind).scaled(time_unit(p))


def support(p: ScaleParams, cell: Cell, extended: bool = False) -> SpaceTimeRegion:
    """Space-time support in physical units (exact Fraction endpoints)."""
    u = support_units(p, cell, extended)
    return SpaceTimeRegion(u.space.scaled(space_unit(p)), u.time.scaled(time_unit(p)))


# ---------------------------------------------------------------------------
# Cell relations.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Relation:
    adjacent: bool
    well_separated: bool
    support_adjacent: bool


def _lift(p: ScaleParams, cell: Cell, k_to: int) -> Cell:
    j = k_to - cell.k
    return Cell(
        k_to,
        cube_ancestor(p, cell.k, j, cell.i),
        interval_ancestor(p, cell.k, j, cell.tau),
    )


def adjacent(p: ScaleParams, a: Cell, b: Cell) -> bool:
    """Cross-scale adjacency: lift the finer cell, then compare indices.

    Two distinct same-scale cells are adjacent when their cube indices
    differ by at most 1 per axis and their interval indices by at most 1.
    """
    if a.k < b.k:
        a, b = b, a
    b = _lift(p, b, a.k)
    if a == b:
        return False
    return all(abs(x - y) <= 1 for x, y in zip(a.i, b.i)) and abs(a.tau - b.tau) <= 1


def well_separated(p: ScaleParams, a: Cell, b: Cell) -> bool:
    """Neither cell's region sits inside the other's support."""
    ra, rb = cell_region_units(p, a), cell_region_units(p, b)
    return not support_units(p, b).contains(ra) and not support_units(p, a).contains(rb)


def support_adjacent(p: ScaleParams, a: Cell, b: Cell) -> bool:
    """The extended supports of the two cells intersect."""
    return support_units(p, a, extended=True).intersects(
        support_units(p, b, extended=True)
    )


def relation(p: ScaleParams, a: Cell, b: Cell) -> Relation:
    """All three pairwise predicates at once.  Needs max(k)+1 <= kappa."""
    return Relation(
        adjacent=adjacent(p, a, b),
        well_separated=well_separated(p, a, b),
        support_adjacent=support_adjacent(p, a, b),
    )


# ---------------------------------------------------------------------------
# Scale weights.
# ---------------------------------------------------------------------------


def log_scale_weight(p: ScaleParams, k: int, nu_term: Optional[float] = None) -> float:
    """log of the scale-k cell weight.

    At k = 1 the weight is min(eps**2 * lam * ell**d, nu_term) where
    nu_term = log(1/(1 - nu)) is supplied by the caller for their occupancy
    event; deeper scales use eps**2 * lam * cube_side(k-1)**d / (k+1)**4.
    """
    _check_scale(p, k, lo=1)
    if p.lam <= 0:
        raise ParamError("scale weights need lam > 0")
    if k == 1:
        if nu_term is None:
            raise ParamError("scale 1 needs the caller's occupancy term nu_term")
        if nu_term <= 0:
            raise ParamError("nu_term must be positive")
        base = p.eps**2 * p.lam * p.ell**p.d
        return math.log(min(base, nu_term))
    return (
        2.0 * math.log(p.eps)
        + math.log(p.lam)
        + p.d * log_cube_side(p, k - 1)
        - 4.0 * math.log(k + 1)
    )


def scale_weight(p: ScaleParams, k: int, nu_term: Optional[float] = None) -> float:
    lv = log_scale_weight(p, k, nu_term)
    if lv > _LOG_MAX_DOUBLE:
        raise RangeError(
            f"scale weight at k={k} exceeds double range; use log_scale_weight"
        )
    return math.exp(lv)


@dataclass(frozen=True)
class IntegerWeight:
    """Rounded weight ladder entry: weight = multiple * base."""

    multiple: int
    base: float


def scale_weight_integer(p: ScaleParams, j: int) -> IntegerWeight:
    """Integer-multiple form of the scale-j weight ladder.

    The base rung is the scale-2 weight eps**2 * lam * ell**d / 81; deeper
    rungs are exact integer multiples b_j of it (b_2 = 1).  The true weight
    satisfies  multiple*base <= weight <= 41 * multiple*base.
    """
    if j < 2:
        raise ParamError("integer weights start at scale 2")
    if p.lam <= 0:
        raise ParamError("scale weights need lam > 0")
    base = p.eps**2 * p.lam * p.ell**p.d / 81.0
    if j == 2:
        return IntegerWeight(1, base)
    b = (
        2
        * p.m ** ((j - 2) * p.d)
        * math.factorial(j - 1) ** (3 * p.d - 3)
        * math.factorial(j - 2) ** 2
        * math.factorial(j - 3)
    )
    return IntegerWeight(b, base)


def log_scale_weight_integer(p: ScaleParams, j: int) -> float:
    """log(multiple * base), safe at depths where the int is astronomical."""
    iw_base = math.log(p.eps**2 * p.lam * p.ell**p.d / 81.0)
    if j == 2:
        return iw_base
    if j < 2:
        raise ParamError("integer weights start at scale 2")
    return (
        iw_base
        + math.log(2.0)
        + (j - 2) * p.d * math.log(p.m)
        + (3 * p.d - 3) * math.lgamma(j)
        + 2.0 * math.lgamma(j - 1)
        + math.lgamma(j - 2)
    )


def weight_ratio_exact(j: int) -> Fraction:
    """Exact ratio (true weight)/(integer-multiple weight) at scale j >= 2.

    Independent of dimension; equals 81*(j-1)**3*(j-2) / (2*(j+1)**4) for
    j >= 3 and 1 at j = 2.  Always within [1, 41].
    """
    if j < 2:
        raise ParamError("integer weights start at scale 2")
    if j == 2:
        return Fraction(1)
    return Fraction(81 * (j - 1) ** 3 * (j - 2), 2 * (j + 1) ** 4)


# ---------------------------------------------------------------------------
# Exact neighbour counting.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IndexWindow:
    """Inclusive index bounds for cells at one scale."""

    i_lo: Tuple[int, ...]
    i_hi: Tuple[int, ...]
    tau_lo: int
    tau_hi: int

    def __post_init__(self):
        if len(self.i_lo) != len(self.i_hi):
            raise ParamError("window bounds must share a dimension")

    @classmethod
    def centered(cls, d: int, i_rad: int, tau_rad: int) -> "IndexWindow":
        return cls((-i_rad,) * d, (i_rad,) * d, -tau_rad, tau_rad)

    def cell_count(self) -> int:
        out = max(0, self.tau_hi - self.tau_lo + 1)
        for lo, hi in zip(self.i_lo, self.i_hi):
            out *= max(0, hi - lo + 1)
        return out


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def _isect(a: Tuple[int, int], b: Tuple[int, int]) -> Tuple[int, int]:
    return (max(a[0], b[0]), min(a[1], b[1]))


def _ilen(a: Tuple[int, int]) -> int:
    return max(0, a[1] - a[0] + 1)


def count_support_adjacent(
    p: ScaleParams,
    j: int,
    jp: int,
    window: IndexWindow,
    anchor: Optional[Cell] = None,
    method: str = "interval",
) -> int:
    """Count scale-jp cells in ``window`` that are support-adjacent to and
    well separated from the anchor cell.

    ``interval`` evaluates the per-axis index intervals each predicate
    reduces to (exact, O(d)); ``enumerate`` walks the window cell by cell
    through :func:`relation` and guards against oversized windows.
    """
    for s in (j, jp):
        if not 1 <= s <= p.kappa - 1:
            raise ParamError(f"scales must lie in [1, kappa-1]; got {s}")
    if anchor is None:
        anchor = Cell(j, (0,) * p.d, 0)
    if anchor.k != j:
        raise ParamError("anchor must live at scale j")

    if method == "enumerate":
        if window.cell_count() > 2_000_000:
            raise WindowError(
                f"enumeration window holds {window.cell_count()} cells; "
                "use method='interval' or shrink the window"
            )
        count = 0
        ranges = [range(lo, hi + 1) for lo, hi in zip(window.i_lo, window.i_hi)]
        import itertools

        for idx in itertools.product(*ranges):
            for tau in range(window.tau_lo, window.tau_hi + 1):
                b = Cell(jp, idx, tau)
                if support_adjacent(p, anchor, b) and well_separated(p, anchor, b):
                    count += 1
        return count
    if method != "interval":
        raise ParamError(f"unknown method {method!r}")

    q = 3 * p.m + 1
    l_cand = cube_side_ratio(p, 0, jp)        # candidate cube side
    l_cand_up = cube_side_ratio(p, 0, jp + 1)  # candidate parent side
    l_anc = cube_side_ratio(p, 0, j)          # anchor cube side
    l_anc_up = cube_side_ratio(p, 0, j + 1)   # anchor parent side
    rho = cube_side_ratio(p, jp, jp + 1)

    b_cand = interval_ratio(p, 1, jp)
    b_cand_up = interval_ratio(p, 1, jp + 1)
    b_anc = interval_ratio(p, 1, j)
    b_anc_up = interval_ratio(p, 1, j + 1)
    rho_t = interval_ratio_step(p, jp)

    parent = cube_ancestor(p, j, 1, anchor.i)
    g_anc = interval_ancestor(p, j, 1, anchor.tau)

    def parent_to_cells(iv: Tuple[int, int]) -> Tuple[int, int]:
        return (iv[0] * rho, (iv[1] + 1) * rho - 1)

    def gparent_to_cells(iv: Tuple[int, int]) -> Tuple[int, int]:
        return ((iv[0] + 1) * rho_t, (iv[1] + 2) * rho_t - 1)

    # Per-axis candidate-index intervals for each clause.
    sa_ax, c1_ax, c2_ax = [], [], []
    for a in range(p.d):
        pa, ia = parent[a], anchor.i[a]
        sa_parent = (
            _ceil_div((pa - q) * l_anc_up, l_cand_up) - q - 1,
            ((pa + q + 1) * l_anc_up) // l_cand_up + q,
        )
        sa_ax.append(parent_to_cells(sa_parent))
        c1_ax.append(
            (
                _ceil_div((pa - p.m) * l_anc_up, l_cand),
                ((pa + p.m + 1) * l_anc_up) // l_cand - 1,
            )
        )
        c2_parent = (
            _ceil_div((ia + 1) * l_anc, l_cand_up) - p.m - 1,
            (ia * l_anc) // l_cand_up + p.m,
        )
        c2_ax.append(parent_to_cells(c2_parent))

    sa_t = gparent_to_cells(
        (
            _ceil_div((g_anc - 12) * b_anc_up, b_cand_up) - 15,
            ((g_anc + 15) * b_anc_up) // b_cand_up + 12,
        )
    )
    c1_t = (
        _ceil_div((g_anc - 3) * b_anc_up, b_cand),
        ((g_anc + 6) * b_anc_up) // b_cand - 1,
    )
    c2_t = gparent_to_cells(
        (
            _ceil_div((anchor.tau + 1) * b_anc, b_cand_up) - 6,
            (anchor.tau * b_anc) // b_cand_up + 3,
        )
    )

    win_ax = list(zip(window.i_lo, window.i_hi))
    win_t = (window.tau_lo, window.tau_hi)

    def product_count(ax_clauses, t_clauses) -> int:
        out = 1
        for a in range(p.d):
            iv = win_ax[a]
            for clause in ax_clauses:
                iv = _isect(iv, clause[a])
            out *= _ilen(iv)
            if out == 0:
                return 0
        iv = win_t
        for clause in t_clauses:
            iv = _isect(iv, clause)
        return out * _ilen(iv)

    n_sa = product_count([sa_ax], [sa_t])
    n_sa_c1 = product_count([sa_ax, c1_ax], [sa_t, c1_t])
    n_sa_c2 = product_count([sa_ax, c2_ax], [sa_t, c2_t])
    n_all = product_count([sa_ax, c1_ax, c2_ax], [sa_t, c1_t, c2_t])
    return n_sa - n_sa_c1 - n_sa_c2 + n_all


# ---------------------------------------------------------------------------
# Exhaustive structural verification.
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    checked: int
    failures: List[str]

    def line(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        extra = "" if self.passed else f"  e.g. {self.failures[0]}"
        return f"{state} {self.name} ({self.checked} checks){extra}"


def _window_cells(p: ScaleParams, kmin: int, kmax: int, imax: int, taumax: int):
    import itertools

    cells = []
    for k in range(kmin, kmax + 1):
        for idx in itertools.product(range(-imax, imax + 1), repeat=p.d):
            for tau in range(-taumax, taumax + 1):
                cells.append(Cell(k, idx, tau))
    return cells


def _region_arrays(p: ScaleParams, cells):
    """Stack unit-coordinate region bounds into int64 arrays for vector checks."""
    n, d = len(cells), p.d
    arrs = {
        name: np.empty((n, 2 * d if name.startswith("s") else 2), dtype=np.int64)
        for name in ("s_cube", "s_inf", "s_sup", "s_ext_sup", "t_int", "t_inf", "t_sup", "t_ext_sup")
    }
    maxabs = 0
    for r, c in enumerate(cells):
        boxes = {
            "s_cube": region_units(p, c, "cube"),
            "s_inf": region_units(p, c, "influence"),
            "s_sup": support_units(p, c).space,
            "s_ext_sup": support_units(p, c, extended=True).space,
        }
        for name, box in boxes.items():
            flat = [v for lohi in box.axes for v in lohi]
            maxabs = max(maxabs, max(abs(v) for v in flat))
            arrs[name][r] = flat
        times = {
            "t_int": time_region_units(p, c, "interval"),
            "t_inf": time_region_units(p, c, "influence"),
            "t_sup": time_region_units(p, c, "support"),
            "t_ext_sup": time_region_units(p, c, "extended_support"),
        }
        for name, iv in times.items():
            maxabs = max(maxabs, abs(iv.lo), abs(iv.hi))
            arrs[name][r] = (iv.lo, iv.hi)
    if maxabs >= 2**62:
        raise RangeError("region endpoints exceed the int64 vectorisation range")
    return arrs


def _box_contains(outer, inner) -> np.ndarray:
    # outer rows [lo1,hi1,lo2,hi2,...] against one inner row, all axes
    d = outer.shape[1] // 2
    ok = np.ones(len(outer), dtype=bool)
    for a in range(d):
        ok &= (outer[:, 2 * a] <= inner[2 * a]) & (inner[2 * a + 1] <= outer[:, 2 * a + 1])
    return ok


def _box_contains_rows(outer_row, inner) -> np.ndarray:
    d = len(outer_row) // 2
    ok = np.ones(len(inner), dtype=bool)
    for a in range(d):
        ok &= (outer_row[2 * a] <= inner[:, 2 * a]) & (inner[:, 2 * a + 1] <= outer_row[2 * a + 1])
    return ok


def _box_intersects_rows(row, others) -> np.ndarray:
    d = len(row) // 2
    ok = np.ones(len(others), dtype=bool)
    for a in range(d):
        ok &= (row[2 * a] <= others[:, 2 * a + 1]) & (others[:, 2 * a] <= row[2 * a + 1])
    return ok


def verify_geometry(
    p: ScaleParams, kmax: int = 3, imax: int = 3, taumax: int = 3
) -> List[CheckResult]:
    """Exhaustive structural checks over a window of cells.

    Covers: ancestor containment and uniqueness, ancestor-map composition,
    base-in-parent-extended nesting, super-in-extended nesting, influence
    interval nesting, influence-region disjointness outside supports,
    supports swallowing descendants and their neighbours, and overlapping
    supports forcing extended-support containment.
    """
    if kmax + 1 > p.kappa:
        raise ParamError("verify_geometry needs kappa >= kmax + 1")
    results: List[CheckResult] = []

    def run(name: str, it: Iterable[Tuple[bool, str]]) -> None:
        failures, checked = [], 0
        for ok, label in it:
            checked += 1
            if not ok and len(failures) < 5:
                failures.append(label)
        results.append(CheckResult(name, not failures, checked, failures))

    import itertools

    idxs = list(itertools.product(range(-imax, imax + 1), repeat=p.d))
    taus = range(-taumax, taumax + 1)

    def gen_ancestor_containment():
        for k in range(0, kmax):
            for j in range(1, kmax - k + 1):
                for i in idxs:
                    anc = cube_ancestor(p, k, j, i)
                    child = region_units(p, Cell(k, i, 0), "cube")
                    parent = region_units(p, Cell(k + j, anc, 0), "cube")
                    ok = parent.contains(child)
                    if ok:  # uniqueness: shifted ancestors must not contain it
                        for a in range(p.d):
                            for dshift in (-1, 1):
                                other = tuple(
                                    v + (dshift if ax == a else 0) for ax, v in enumerate(anc)
                                )
                                shifted = region_units(p, Cell(k + j, other, 0), "cube")
                                ok &= not shifted.contains(child)
                    yield ok, f"k={k} j={j} i={i}"

    run("cube ancestor contains child, uniquely", gen_ancestor_containment())

    def gen_pi_composition():
        for k in range(0, kmax):
            for j in range(0, kmax - k + 1):
                for jp in range(0, j + 1):
                    for i in idxs:
                        direct = cube_ancestor(p, k, j, i)
                        via = cube_ancestor(p, k + jp, j - jp, cube_ancestor(p, k, jp, i))
                        yield direct == via, f"k={k} j={j} j'={jp} i={i}"

    run("cube ancestor composition", gen_pi_composition())

    def gen_gamma_membership():
        for k in range(1, kmax):
            for j in range(1, kmax - k + 1):
                for tau in taus:
                    prev = interval_ancestor(p, k, j - 1, tau)
                    cur = interval_ancestor(p, k, j, tau)
                    t_point = prev * interval_ratio(p, 1, k + j - 1)
                    b_up = interval_ratio(p, 1, k + j)
                    ok = (cur + 1) * b_up <= t_point < (cur + 2) * b_up
                    yield ok, f"k={k} j={j} tau={tau}"

    run("interval ancestor half-open membership", gen_gamma_membership())

    def gen_gamma_composition():
        for k in range(1, kmax):
            for j in range(0, kmax - k + 1):
                for jp in range(0, j + 1):
                    for tau in taus:
                        direct = interval_ancestor(p, k, j, tau)
                        via = interval_ancestor(
                            p, k + jp, j - jp, interval_ancestor(p, k, jp, tau)
                        )
                        yield direct == via, f"k={k} j={j} j'={jp} tau={tau}"

    run("interval ancestor composition", gen_gamma_composition())

    def gen_base_in_parent_extended():
        for k in range(0, kmax):
            for i in idxs:
                base = region_units(p, Cell(k, i, 0), "base")
                parent = Cell(k + 1, cube_ancestor(p, k, 1, i), 0)
                ext = region_units(p, parent, "extended")
                yield ext.contains(base), f"k={k} i={i}"

    run("base cube inside parent extended cube", gen_base_in_parent_extended())

    def gen_super_in_extended():
        for i in idxs:
            sup = region_units(p, Cell(1, i, 0), "super")
            ext = region_units(p, Cell(1, i, 0), "extended")
            yield ext.contains(sup), f"i={i}"

    run("super cube inside extended cube", gen_super_in_extended())

    def gen_time_influence_nested():
        for k in range(1, kmax):
            for tau in taus:
                c = Cell(k, (0,) * p.d, tau)
                inf = time_region_units(p, c, "influence")
                g = interval_ancestor(p, k, 1, tau)
                b_up = interval_ratio(p, 1, k + 1)
                three = TimeInterval(g * b_up, (g + 3) * b_up)
                sup = time_region_units(p, c, "support")
                ok = three.contains(inf) and sup.contains(three)
                yield ok, f"k={k} tau={tau}"

    run("influence interval inside three parent intervals inside support",
        gen_time_influence_nested())

    # Pairwise checks, vectorised over the second cell.
    cells = _window_cells(p, 1, kmax, imax, taumax)
    ks = np.array([c.k for c in cells])
    arrs = _region_arrays(p, cells)

    def gen_influence_disjoint():
        for r, c in enumerate(cells):
            mask = ks <= c.k
            nested = _box_contains_rows(arrs["s_sup"][r], arrs["s_inf"]) & (
                (arrs["t_sup"][r, 0] <= arrs["t_inf"][:, 0])
                & (arrs["t_inf"][:, 1] <= arrs["t_sup"][r, 1])
            )
            meets = _box_intersects_rows(arrs["s_inf"][r], arrs["s_inf"]) & (
                (arrs["t_inf"][r, 0] <= arrs["t_inf"][:, 1])
                & (arrs["t_inf"][:, 0] <= arrs["t_inf"][r, 1])
            )
            bad = mask & ~nested & meets
            ok = not bad.any()
            yield ok, f"cell={c} vs {np.flatnonzero(bad)[:3]}"

    run("influence regions disjoint unless inside support", gen_influence_disjoint())

    def gen_support_overlap_extended():
        for r, c in enumerate(cells):
            mask = ks <= c.k
            meets = _box_intersects_rows(arrs["s_sup"][r], arrs["s_sup"]) & (
                (arrs["t_sup"][r, 0] <= arrs["t_sup"][:, 1])
                & (arrs["t_sup"][:, 0] <= arrs["t_sup"][r, 1])
            )
            inside = _box_contains_rows(arrs["s_ext_sup"][r], arrs["s_sup"]) & (
                (arrs["t_ext_sup"][r, 0] <= arrs["t_sup"][:, 0])
                & (arrs["t_sup"][:, 1] <= arrs["t_ext_sup"][r, 1])
            )
            bad = mask & meets & ~inside
            ok = not bad.any()
            yield ok, f"cell={c} vs {np.flatnonzero(bad)[:3]}"

    run("overlapping supports nest in extended support", gen_support_overlap_extended())

    def gen_support_contains_descendants():
        for k in range(2, kmax + 1):
            for i in idxs:
                for tau in taus:
                    cell = Cell(k, i, tau)
                    sup = support_units(p, cell)
                    for kp in range(1, k):
                        side_ratio = cube_side_ratio(p, kp, k)
                        side = cube_side_ratio(p, 0, kp)
                        lo_t, hi_t = interval_descendants(p, k, k - kp, tau)
                        b_kp = interval_ratio(p, 1, kp)
                        # hull of all descendants plus one-cell neighbour fringe
                        hull = Box(
                            tuple(
                                ((a * side_ratio - 1) * side, ((a + 1) * side_ratio + 1) * side)
                                for a in i
                            )
                        )
                        thull = TimeInterval((lo_t - 1) * b_kp, (hi_t + 2) * b_kp)
                        ok = sup.space.contains(hull) and sup.time.contains(thull)
                        # endpoint descendants really map back to (i, tau)
                        ok &= interval_ancestor(p, kp, k - kp, lo_t) == tau
                        ok &= interval_ancestor(p, kp, k - kp, hi_t) == tau
                        ok &= interval_ancestor(p, kp, k - kp, lo_t - 1) != tau
                        ok &= interval_ancestor(p, kp, k - kp, hi_t + 1) != tau
                        yield ok, f"cell={cell} kp={kp}"

    run("support contains descendants and their neighbours",
        gen_support_contains_descendants())

    return results


def verify_weights(p: ScaleParams, jmax: int = 60) -> List[CheckResult]:
    """Exact weight-ladder and interval-growth checks up to scale jmax."""
    results: List[CheckResult] = []

    def run(name, it):
        failures, checked = [], 0
        for ok, label in it:
            checked += 1
            if not ok and len(failures) < 5:
                failures.append(label)
        results.append(CheckResult(name, not failures, checked, failures))

    def gen_ratio_band():
        for j in range(2, jmax + 1):
            ratio = weight_ratio_exact(j)
            yield 1 <= ratio <= 41, f"j={j} ratio={ratio}"

    run("integerised weight within factor 41", gen_ratio_band())

    def gen_ratio_matches_logs():
        for j in range(2, jmax + 1):
            lhs = log_scale_weight(p, j) - log_scale_weight_integer(p, j)
            rhs = math.log(float(weight_ratio_exact(j)))
            yield abs(lhs - rhs) < 1e-9, f"j={j} {lhs} vs {rhs}"

    run("log weights agree with exact ratio", gen_ratio_matches_logs())

    def gen_interval_growth():
        for k in range(1, jmax):
            step = interval_ratio_step(p, k)
            yield step == p.m**2 * k**2 * (k + 1) ** 4, f"k={k}"

    run("interval growth factor is m^2 k^2 (k+1)^4", gen_interval_growth())

    def gen_interval_sum():
        total = 0
        for k in range(2, jmax + 1):
            bk = interval_ratio(p, 1, k)
            total += bk
            yield total <= 2 * bk, f"k={k}"

    run("interval lengths sum to at most twice the deepest", gen_interval_sum())

    def gen_slack():
        prev = density_slack(p, 0)
        ok0 = abs(prev - 2 * p.eps) < 1e-15
        yield ok0, "k=0"
        for k in range(1, jmax + 1):
            cur = density_slack(p, k)
            ok = abs(cur - (prev - p.eps / k**2)) < 1e-12 and cur >= p.eps / 4
            prev = cur
            yield ok, f"k={k}"

    run("density slack recurrence and floor", gen_slack())

    return results
