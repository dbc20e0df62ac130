"""Coupling of an evolved node cloud with a fresh Poisson process.

The construction pairs a dominated Poisson sample with existing nodes cell
by cell, moves surviving pairs jointly by a draw from the dominated
sub-density g, and thins with a constant probability chosen so the output
is exactly Poisson on the inner box while every output point is, bit for
bit, the final position of some input node.

g lives below the transition density of any node whose pairing offset is
at most rho = m_sep * sqrt(d) / 2 in Euclidean norm; with m_sep equal to
twice the pairing-cell side this covers every pair the construction can
produce, so domination never fails.  What can fail, and is reported, is
the occupancy hypothesis, per-cell domination of counts, or the target
intensity exceeding what the thinned-and-moved cloud carries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as _rng
from .bounds import confinement_bound
from .errors import GeometryError, ParamError
from .geometry import Box
from .mobility import conditioned_increments, sample_ppp


@dataclass(frozen=True)
class CouplingParams:
    """Geometry and intensities for one coupling experiment.

    The outer box S (full side ``side_outer``) is tiled by pairing cells of
    side ``subcube_side``; the coupled Poisson process is produced on the
    inner box S' (full side ``side_inner``).  ``intensity`` is the occupancy
    hypothesis level: every pairing cell must hold at least
    intensity * subcube_side**d nodes.
    """

    d: int
    delta_t: float
    side_outer: float
    side_inner: float
    subcube_side: float
    intensity: float
    eps_bar: float
    xi: float = 0.25
    c1: float = 1.0
    c2: float = 1.0
    variance_rate: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ParamError("d must be a positive integer")
        if self.delta_t <= 0 or self.variance_rate <= 0:
            raise ParamError("delta_t and variance_rate must be positive")
        if self.side_inner <= 0 or self.subcube_side <= 0:
            raise ParamError("box sides must be positive")
        if self.side_inner > self.side_outer:
            raise GeometryError("inner box must sit inside the outer box")
        ncells = self.side_outer / self.subcube_side
        if abs(ncells - round(ncells)) > 1e-9:
            raise ParamError("subcube_side must tile side_outer exactly")
        if not 0 < self.eps_bar < 1:
            raise ParamError("eps_bar must lie in (0, 1)")
        if not 0 < self.xi < 1:
            raise ParamError("xi must lie in (0, 1)")
        if self.intensity <= 0:
            raise ParamError("intensity must be positive")
        if self.c1 <= 0 or self.c2 < 0:
            raise ParamError("c1 must be positive and c2 non-negative")
        if self.big_m <= self.m_sep:
            raise ParamError(
                "sub-density support M must exceed the separation margin m_sep"
            )

    @property
    def m_sep(self) -> float:
        # twice the pairing-cell side: bounds any within-cell pair offset
        return 2.0 * self.subcube_side

    @property
    def rho(self) -> float:
        return self.m_sep * math.sqrt(self.d) / 2.0

    @property
    def big_m(self) -> float:
        return self.c1 * math.sqrt(
            8.0 * self.variance_rate * self.delta_t * math.log(8.0 * self.d / self.xi)
        )

    @property
    def cells_per_axis(self) -> int:
        return round(self.side_outer / self.subcube_side)

    @property
    def shift_budget(self) -> float:
        # width of the joint-move window: everything the inner box can
        # receive from must stay inside the outer box
        return min(self.side_outer - self.side_inner, self.big_m)

    @property
    def outer_box(self) -> Box:
        return Box.cube(self.side_outer / 2.0, self.d)

    @property
    def inner_box(self) -> Box:
        return Box.cube(self.side_inner / 2.0, self.d)


@dataclass(frozen=True)
class DensityFloor:
    """Pointwise floor for a confined transition density.

    ``clamped`` records that the correction factor went negative (the box is
    too tight for the floor to say anything) and the value was clamped to 0.
    """

    value: float
    clamped: bool


def _correction(d: int, big_m: float, sig2: float) -> float:
    return 1.0 - 2.0 * d * math.exp(-3.0 * big_m * big_m / (2.0 * sig2))


def conditioned_density_floor(
    y: Sequence[float],
    delta_t: float,
    big_m: float,
    d: int,
    variance_rate: float = 1.0,
) -> DensityFloor:
    """Lower bound on the increment density of a Brownian node conditioned
    to stay within a window of scale big_m over [0, delta_t]."""
    if delta_t <= 0 or big_m <= 0:
        raise ParamError("delta_t and big_m must be positive")
    y = np.asarray(y, dtype=float)
    if y.shape != (d,):
        raise ParamError(f"y must have shape ({d},)")
    sig2 = variance_rate * delta_t
    c = _correction(d, big_m, sig2)
    gauss = (2.0 * math.pi * sig2) ** (-d / 2.0) * math.exp(
        -float(np.dot(y, y)) / (2.0 * sig2)
    )
    if c < 0.0:
        return DensityFloor(0.0, True)
    return DensityFloor(gauss * c, False)


def indistinguishable_subdensity(
    z: Sequence[float], params: CouplingParams, enforce_regime: bool = True
) -> float:
    """The dominated sub-density g at displacement z.

    g is supported on the centered box of full width M and is radially the
    Gaussian kernel pushed out by rho, damped by the confinement correction;
    by the triangle inequality it sits below the density floor of any node
    whose pairing offset has Euclidean norm at most rho.
    """
    if enforce_regime:
        floor_m = math.sqrt(
            8.0 * params.variance_rate * params.delta_t * math.log(8.0 * params.d / params.xi)
        )
        if params.big_m < floor_m * (1.0 - 1e-12):
            raise ParamError(
                f"sub-density regime violated: M = {params.big_m:.6g} below "
                f"required {floor_m:.6g} (c1 < 1)"
            )
    z = np.asarray(z, dtype=float)
    if z.shape != (params.d,):
        raise ParamError(f"z must have shape ({params.d},)")
    if np.any(np.abs(z) > params.big_m / 2.0):
        return 0.0
    sig2 = params.variance_rate * params.delta_t
    c = max(0.0, _correction(params.d, params.big_m, sig2))
    norm = float(np.linalg.norm(z))
    return (
        (2.0 * math.pi * sig2) ** (-params.d / 2.0)
        * math.exp(-((norm + params.rho) ** 2) / (2.0 * sig2))
        * c
    )


# -- quadrature --------------------------------------------------------------


def _simpson(f, a, b, fa, fm, fb, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    return _simpson(f, a, m, fa, flm, fm, tol / 2.0, depth - 1) + _simpson(
        f, m, b, fm, frm, fb, tol / 2.0, depth - 1
    )


def integrate_box(
    f: Callable[[np.ndarray], float],
    bounds: Sequence[Tuple[float, float]],
    tol: float = 1e-6,
) -> float:
    """Adaptive Simpson quadrature of f over a box, one nested pass per axis.

    Intended for the smooth low-dimensional (d <= 3) sub-density integrals;
    tolerance is absolute per axis.
    """
    bounds = list(bounds)
    if not bounds:
        raise ParamError("bounds must be non-empty")

    def nest(prefix: List[float], rest) -> float:
        lo, hi = rest[0]
        if len(rest) == 1:
            g = lambda x: f(np.asarray(prefix + [x], dtype=float))
        else:
            g = lambda x: nest(prefix + [x], rest[1:])
        fa, fb = g(lo), g(hi)
        fm = g(0.5 * (lo + hi))
        return _simpson(g, lo, hi, fa, fm, fb, tol, 24)

    return nest([], bounds)


_PSI_CACHE: Dict[Tuple, float] = {}


def subdensity_mass(params: CouplingParams, half_width: Optional[float] = None) -> float:
    """Integral of g over the centered box of the given full width (defaults
    to the joint-move window shift_budget)."""
    width = params.shift_budget if half_width is None else 2.0 * half_width
    width = min(width, params.big_m)
    key = (
        params.d,
        params.delta_t,
        params.variance_rate,
        params.rho,
        params.big_m,
        round(width, 12),
    )
    if key not in _PSI_CACHE:
        g = lambda z: indistinguishable_subdensity(z, params, enforce_regime=False)
        _PSI_CACHE[key] = integrate_box(
            g, [(-width / 2.0, width / 2.0)] * params.d, tol=1e-6
        )
    return _PSI_CACHE[key]


# -- verification report -----------------------------------------------------


@dataclass
class DominationReport:
    certified: bool
    min_margin: float
    normalized_min_margin: float
    integral: float
    integral_ok: bool
    integral_target: float
    n_points: int
    tol: float

    def lines(self) -> List[str]:
        out = [
            "{} domination margin {:.3e} (tolerance -{:.0e}, {} grid points)".format(
                "PASS" if self.min_margin >= -self.tol else "FAIL",
                self.min_margin,
                self.tol,
                self.n_points,
            ),
            "{} captured mass {:.6f} >= {:.6f}".format(
                "PASS" if self.integral_ok else "FAIL",
                self.integral,
                self.integral_target,
            ),
            "info normalized margin {:.3e} (floor divided by confinement bound;"
            " not used for the verdict)".format(self.normalized_min_margin),
        ]
        return out


def verify_indistinguishable(
    params: CouplingParams,
    n_grid: int = 33,
    n_offsets: int = 6,
    tol: float = 1e-10,
) -> DominationReport:
    """Check that g sits below the conditioned density floor for every
    admissible pairing offset, and that g captures enough mass.

    The margin sweep puts the offset at the exact worst case for each grid
    point (antiparallel, full length rho), where the two surfaces are
    tangent; the tolerance absorbs double rounding at those tangency points.
    The report also carries the margin against the floor divided by the
    confinement probability bound: that variant is easier to pass (dividing
    a lower bound by a lower bound) and is informational only.
    """
    d, rho = params.d, params.rho
    sig2 = params.variance_rate * params.delta_t
    half = params.big_m / 2.0
    axes = [np.linspace(-half, half, n_grid)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    gen = np.random.Generator(np.random.Philox(key=7))
    p_conf = confinement_bound(
        3.0 * params.big_m, params.delta_t, d, params.variance_rate
    )

    min_margin = math.inf
    min_norm_margin = math.inf
    checked = 0
    for z in grid:
        gz = indistinguishable_subdensity(z, params, enforce_regime=False)
        nz = np.linalg.norm(z)
        direction = z / nz if nz > 0 else np.eye(d)[0]
        offsets = [-rho * direction]
        for _ in range(n_offsets - 1):
            v = gen.standard_normal(d)
            v /= np.linalg.norm(v)
            offsets.append(rho * gen.random() * v)
        for x in offsets:
            fl = conditioned_density_floor(
                z - x, params.delta_t, params.big_m, d, params.variance_rate
            )
            min_margin = min(min_margin, fl.value - gz)
            min_norm_margin = min(min_norm_margin, fl.value / p_conf - gz)
            checked += 1

    width = params.big_m - params.m_sep
    integral = subdensity_mass(params, half_width=width / 2.0)
    target = 1.0 - params.xi
    return DominationReport(
        certified=min_margin >= -tol and integral >= target,
        min_margin=min_margin,
        normalized_min_margin=min_norm_margin,
        integral=integral,
        integral_ok=integral >= target,
        integral_target=target,
        n_points=checked,
        tol=tol,
    )


# -- the coupling ------------------------------------------------------------


@dataclass
class CouplingResult:
    success: bool
    reason: Optional[str]
    phi_final: np.ndarray
    xi_indices: np.ndarray
    psi: float
    p_keep: float
    transcript: Dict

    @property
    def xi_final(self) -> np.ndarray:
        return self.phi_final[self.xi_indices]


def _cell_keys(params: CouplingParams, pts: np.ndarray) -> np.ndarray:
    shifted = pts + params.side_outer / 2.0
    keys = np.floor(shifted / params.subcube_side).astype(np.int64)
    return np.clip(keys, 0, params.cells_per_axis - 1)


def _draw_joint_moves(
    params: CouplingParams, count: int, gen: np.random.Generator
) -> np.ndarray:
    """Sample displacement vectors with density g / psi on the shift window.

    Exact rejection from the unconditioned Gaussian increment: a proposal x
    is accepted with probability C * exp(-(2*rho*|x| + rho^2) / (2*sig2)),
    which turns the Gaussian density into g pointwise.
    """
    d = params.d
    if count == 0:
        return np.empty((0, d))
    sig2 = params.variance_rate * params.delta_t
    c = max(0.0, _correction(d, params.big_m, sig2))
    if c <= 0.0:
        raise ParamError("confinement correction vanished; M too small")
    half = params.shift_budget / 2.0
    rho = params.rho
    out = np.empty((count, d))
    have = 0
    batch = max(128, 2 * count)
    guard = 0
    while have < count:
        x = math.sqrt(sig2) * gen.standard_normal((batch, d))
        u = gen.random(batch)
        inside = np.all(np.abs(x) <= half, axis=1)
        norms = np.linalg.norm(x, axis=1)
        acc = u < c * np.exp(-(2.0 * rho * norms + rho * rho) / (2.0 * sig2))
        good = x[inside & acc]
        take = min(len(good), count - have)
        out[have : have + take] = good[:take]
        have += take
        guard += 1
        if guard > 10_000:
            raise ParamError("joint-move rejection sampler failed to make progress")
    return out


def couple(
    params: CouplingParams, phi0: np.ndarray, seed: int
) -> CouplingResult:
    """Evolve the nodes phi0 over delta_t and exhibit a Poisson process of
    intensity (1 - eps_bar) * intensity on the inner box whose points are
    exactly (bitwise) final node positions.

    Construction: dominate a fresh Poisson sample cell by cell, pair it with
    nodes, thin pairs to the captured mass psi of g, move kept pairs jointly
    by a g-draw, and thin once more at constant probability on the inner
    box.  The last step is constant-probability because every point of the
    inner box sees the full g-mass: the shift window plus the inner box stay
    inside the outer box.  Nodes not carrying a kept pair receive an
    independent window-confined increment; their displacement law is the
    one approximation in the construction and is irrelevant to both the
    output law and the subset property.
    """
    phi0 = np.asarray(phi0, dtype=float)
    d = params.d
    if phi0.ndim != 2 or phi0.shape[1] != d:
        raise ParamError("phi0 must have shape (N, d)")
    half_outer = params.side_outer / 2.0
    if len(phi0) and np.any(np.abs(phi0) > half_outer + 1e-12):
        raise GeometryError("phi0 must lie inside the outer box")

    gen = _rng.stream(seed, _rng.COUPLING)
    transcript: Dict = {
        "n_phi": int(len(phi0)),
        "cells_per_axis": params.cells_per_axis,
    }

    psi = subdensity_mass(params)
    p_keep = (1.0 - params.eps_bar) / ((1.0 - params.eps_bar / 2.0) * psi)
    transcript["psi"] = psi
    transcript["p_keep"] = p_keep

    def bail(reason: str) -> CouplingResult:
        # marginal-preserving fallback: plain Brownian step for every node
        sigma = math.sqrt(params.variance_rate * params.delta_t)
        phi_final = phi0 + sigma * gen.standard_normal(phi0.shape)
        transcript["success"] = False
        transcript["reason"] = reason
        return CouplingResult(
            False, reason, phi_final, np.empty(0, dtype=np.int64), psi, p_keep, transcript
        )

    # occupancy hypothesis: every pairing cell dense enough
    threshold = params.intensity * params.subcube_side**d
    n_cells = params.cells_per_axis**d
    phi_cells = _cell_keys(params, phi0)
    radix = params.cells_per_axis ** np.arange(d - 1, -1, -1, dtype=np.int64)
    phi_flat = phi_cells @ radix
    phi_counts = np.bincount(phi_flat, minlength=n_cells)
    transcript["min_cell_count"] = int(phi_counts.min()) if n_cells else 0
    transcript["occupancy_threshold"] = threshold
    if np.any(phi_counts < threshold):
        return bail("hypothesis")

    if p_keep > 1.0:
        return bail("intensity")

    # dominated sample on the outer box
    xi0_intensity = (1.0 - params.eps_bar / 2.0) * params.intensity
    vol = params.side_outer**d
    n_xi0 = int(gen.poisson(xi0_intensity * vol))
    xi0 = (gen.random((n_xi0, d)) - 0.5) * params.side_outer
    xi_flat = _cell_keys(params, xi0) @ radix
    xi_counts = np.bincount(xi_flat, minlength=n_cells)
    transcript["n_xi0"] = n_xi0
    if np.any(xi_counts > phi_counts):
        return bail("domination")

    # deterministic pairing inside each cell: lexicographic order on both sides
    partner = np.full(n_xi0, -1, dtype=np.int64)
    for cell in np.unique(xi_flat):
        xi_rows = np.flatnonzero(xi_flat == cell)
        phi_rows = np.flatnonzero(phi_flat == cell)
        xi_rows = xi_rows[np.lexsort(xi0[xi_rows].T[::-1])]
        phi_rows = phi_rows[np.lexsort(phi0[phi_rows].T[::-1])]
        partner[xi_rows] = phi_rows[: len(xi_rows)]

    # thin pairs to the g-mass, move survivors jointly by a g-draw
    kept = gen.random(n_xi0) < psi
    moves = _draw_joint_moves(params, int(kept.sum()), gen)
    moved_pos = xi0[kept] + moves

    phi_final = np.empty_like(phi0)
    kept_partners = partner[kept]
    is_paired_kept = np.zeros(len(phi0), dtype=bool)
    is_paired_kept[kept_partners] = True
    # survivors land exactly on the moved pair position (bitwise shared)
    phi_final[kept_partners] = moved_pos
    others = np.flatnonzero(~is_paired_kept)
    if len(others):
        inc = conditioned_increments(
            len(others),
            d,
            params.delta_t,
            3.0 * params.big_m,
            gen,
            substeps=8,
            variance_rate=params.variance_rate,
        )
        phi_final[others] = phi0[others] + inc

    # constant-probability inner thinning: the output is exactly Poisson
    half_inner = params.side_inner / 2.0
    inside = np.all(np.abs(moved_pos) <= half_inner, axis=1)
    final_keep = inside & (gen.random(len(moved_pos)) < p_keep)
    xi_indices = kept_partners[final_keep]

    transcript["n_kept_pairs"] = int(kept.sum())
    transcript["n_inside_inner"] = int(inside.sum())
    transcript["n_xi_final"] = int(final_keep.sum())
    transcript["success"] = True
    transcript["reason"] = None
    return CouplingResult(True, None, phi_final, xi_indices, psi, p_keep, transcript)


# -- grid experiment ---------------------------------------------------------


@dataclass
class CouplingExperiment:
    n_runs: int
    n_success: int
    reasons: Dict[str, int]
    subset_ok: bool
    xi_counts: List[int]
    mean_count: float
    target_mean: float
    dispersion: float
    psi: float
    p_keep: float
    transcripts: List[Dict]


def couple_grid_experiment(
    params: CouplingParams,
    n_runs: int,
    seed: int,
    phi_intensity: Optional[float] = None,
) -> CouplingExperiment:
    """Repeated couplings against fresh Poisson clouds on the outer box.

    Refuses inner boxes too close to the outer boundary for the joint-move
    window (the c2 margin); collects success statistics and the empirical
    law of the output counts.
    """
    margin = params.c2 * math.sqrt(
        params.variance_rate
        * params.delta_t
        * math.log(16.0 * params.d / params.eps_bar)
    )
    if params.side_inner > params.side_outer - margin:
        raise ParamError(
            f"inner box side {params.side_inner:g} exceeds "
            f"side_outer - c2 margin = {params.side_outer - margin:g}"
        )
    if phi_intensity is None:
        phi_intensity = 1.5 * params.intensity

    reasons: Dict[str, int] = {}
    xi_counts: List[int] = []
    transcripts: List[Dict] = []
    subset_ok = True
    n_success = 0
    psi = p_keep = float("nan")
    for run in range(n_runs):
        rs = _rng.replica_seed(seed, run)
        phi0 = sample_ppp(phi_intensity, params.outer_box, rs)
        res = couple(params, phi0, rs)
        psi, p_keep = res.psi, res.p_keep
        if res.success:
            n_success += 1
            xi_counts.append(len(res.xi_indices))
            same = np.array_equal(res.xi_final, res.phi_final[res.xi_indices])
            subset_ok = subset_ok and same
        else:
            reasons[res.reason] = reasons.get(res.reason, 0) + 1
        if run < 3:
            transcripts.append(res.transcript)

    mean = float(np.mean(xi_counts)) if xi_counts else float("nan")
    var = float(np.var(xi_counts, ddof=1)) if len(xi_counts) > 1 else float("nan")
    return CouplingExperiment(
        n_runs=n_runs,
        n_success=n_success,
        reasons=reasons,
        subset_ok=subset_ok,
        xi_counts=xi_counts,
        mean_count=mean,
        target_mean=(1.0 - params.eps_bar) * params.intensity * params.side_inner**params.d,
        dispersion=var / mean if xi_counts and mean > 0 else float("nan"),
        psi=psi,
        p_keep=p_keep,
        transcripts=transcripts,
    )
