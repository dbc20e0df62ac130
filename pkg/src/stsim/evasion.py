"""Detection game on a sliced tessellation: certificates for both players.

The scale-1 tessellation is tuned so a node anywhere in a cell covers the
whole cell (side r / (2 sqrt(d))); time is cut into scale-1 intervals with
s sub-steps each.  Cells are classified per slice:

* blocked: some node starts in the cell and stays window-confined through
  the slice, so the node's sensing ball covers the entire cell for the
  slice.  Blocked cells kill any target inside them.
* vacant: no node's sensing ball (inflated by a sub-step safety margin)
  touches the cell at any sub-step, so a target may sit anywhere in the
  cell for the whole slice.

Blocked and vacant are disjoint by construction.  Detection certificates
over-approximate where a surviving target could be (frontier of non-blocked
cells, closed under within-slice movement); evasion certificates exhibit an
explicit cell path through vacant cells, or a constant position that the
replay oracle confirms clear at every sub-step.  By construction an evasion
certificate and a detection certificate can never coexist.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import rng as _rng
from .bounds import wilson_interval
from .errors import ParamError
from .geometry import Box
from .mobility import TrajectorySet, padded_half_width, simulate
from .tessellation import ScaleParams


def evasion_params(
    d: int,
    r: float,
    lam: float,
    m: int = 7,
    eta: int = 1,
    eps: float = 0.5,
    c_mix: float = 0.8,
    kappa: int = 2,
    w: float = 1.0,
) -> ScaleParams:
    """Tessellation for the detection game: cell side r / (2 sqrt(d))."""
    return ScaleParams(
        d=d, ell=r / (2.0 * math.sqrt(d)), eps=eps, eta=eta, m=m, lam=lam,
        r=r, kappa=kappa, w=w, c_mix=c_mix,
    )


def slice_grid(p: ScaleParams, n_slices: int, s: int) -> np.ndarray:
    """Sub-step time grid covering n_slices scale-1 intervals from 0."""
    if n_slices < 1 or s < 1:
        raise ParamError("need n_slices >= 1 and s >= 1")
    return np.arange(n_slices * s + 1, dtype=float) * (p.beta / s)


class SliceField:
    """Lazy blocked/vacant classification of scale-1 cells per slice."""

    def __init__(
        self,
        p: ScaleParams,
        traj: TrajectorySet,
        s: int,
        displacement_mode: str = "conservative",
        q: float = 3.0,
    ):
        cover_reach = (1.0 + p.w / 2.0) * math.sqrt(p.d) * p.ell
        if cover_reach > p.r * (1.0 + 1e-12):
            raise ParamError(
                f"cell side {p.ell:g} too large for sensing radius {p.r:g}: "
                "a confined node would not cover its cell"
            )
        self.p = p
        self.traj = traj
        self.s = int(s)
        self.mode = displacement_mode
        self.q = q
        self.delta_safe = 3.0 * math.sqrt(traj.variance_rate * p.beta / s)
        self.n_slices = (len(traj.times) - 1) // self.s
        if self.n_slices < 1:
            raise ParamError("trajectory grid shorter than one slice")
        self._blocked: Dict[Tuple[Tuple[int, ...], int], bool] = {}
        self._vacant: Dict[Tuple[Tuple[int, ...], int], bool] = {}
        self._bbox: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        self.origin_detected_at_start = self._origin_covered_at(0)

    # -- plumbing ---------------------------------------------------------

    def _sub_t(self, tau: int, j: int) -> float:
        return float(self.traj.times[tau * self.s + j])

    def _slice_block(self, tau: int) -> np.ndarray:
        lo = tau * self.s
        return self.traj.positions[lo : lo + self.s + 1]

    def _slice_bbox(self, tau: int) -> Tuple[np.ndarray, np.ndarray]:
        if tau not in self._bbox:
            block = self._slice_block(tau)
            if block.shape[1] == 0:
                z = np.zeros((0, self.p.d))
                self._bbox[tau] = (z, z)
            else:
                self._bbox[tau] = (block.min(axis=0), block.max(axis=0))
        return self._bbox[tau]

    def _cell_bounds(self, i: Tuple[int, ...]) -> Tuple[np.ndarray, np.ndarray]:
        ell = self.p.ell
        lo = np.asarray(i, dtype=float) * ell
        return lo, lo + ell

    def _origin_covered_at(self, index: int) -> bool:
        pos = self.traj.positions[index]
        if pos.shape[0] == 0:
            return False
        return bool(np.min(np.sum(pos * pos, axis=1)) <= self.p.r**2)

    def _check_slice(self, tau: int) -> None:
        if not 0 <= tau < self.n_slices:
            raise ParamError(f"slice {tau} outside [0, {self.n_slices})")

    # -- classification ----------------------------------------------------

    def blocked(self, i: Tuple[int, ...], tau: int) -> bool:
        """Some node starts in the cell and is confined through the slice."""
        key = (tuple(i), tau)
        if key not in self._blocked:
            self._check_slice(tau)
            p = self.p
            lo, hi = self._cell_bounds(key[0])
            t0, t1 = self._sub_t(tau, 0), self._sub_t(tau, self.s)
            pos = self.traj.positions[tau * self.s]
            inside = np.all((pos >= lo) & (pos <= hi), axis=1)
            if not inside.any():
                self._blocked[key] = False
            else:
                ok = self.traj.displacement_in(t0, t1, p.w * p.ell, self.mode, self.q)
                self._blocked[key] = bool((inside & ok).any())
        return self._blocked[key]

    def vacant(self, i: Tuple[int, ...], tau: int) -> bool:
        """No node ball of radius r + delta_safe meets the cell at any
        sub-step of the slice."""
        key = (tuple(i), tau)
        if key not in self._vacant:
            self._check_slice(tau)
            lo, hi = self._cell_bounds(key[0])
            reach = self.p.r + self.delta_safe
            blo, bhi = self._slice_bbox(tau)
            if blo.shape[0] == 0:
                self._vacant[key] = True
                return True
            cand = np.all((bhi >= lo - reach) & (blo <= hi + reach), axis=1)
            if not cand.any():
                self._vacant[key] = True
                return True
            block = self._slice_block(tau)[:, cand, :]
            gap = np.maximum(lo - block, 0.0) + np.maximum(block - hi, 0.0)
            dist2 = np.sum(gap * gap, axis=2)
            self._vacant[key] = bool(dist2.min() > reach * reach)
        return self._vacant[key]

    def classify(self, i: Tuple[int, ...], tau: int) -> str:
        if self.blocked(i, tau):
            return "blocked"
        if self.vacant(i, tau):
            return "vacant"
        return "contested"


def _origin_cells(d: int) -> List[Tuple[int, ...]]:
    # the origin sits on the corner shared by these cells
    return [tuple(v) for v in itertools.product((-1, 0), repeat=d)]


def _neighbours(i: Tuple[int, ...]) -> List[Tuple[int, ...]]:
    return [
        tuple(a + o for a, o in zip(i, off))
        for off in itertools.product((-1, 0, 1), repeat=len(i))
    ]


def _in_radius(i: Tuple[int, ...], radius: int) -> bool:
    return all(-radius <= a <= radius for a in i)


@dataclass
class DetectionCertificate:
    certain: bool
    slice_index: Optional[int]
    reason: str
    frontier_sizes: List[int]


def detection_certificate(
    field: SliceField, radius: int, n_slices: Optional[int] = None
) -> DetectionCertificate:
    """Sound certificate that every possible target is detected.

    Tracks an over-approximation of the cells a surviving target could
    visit per slice; the target is arbitrarily fast, so each slice closes
    the frontier under connected non-blocked movement.  A frontier that
    reaches the tracking radius can never be pronounced dead.
    """
    n = field.n_slices if n_slices is None else min(n_slices, field.n_slices)
    if field.origin_detected_at_start:
        return DetectionCertificate(True, 0, "origin covered at start", [])

    def closed(cells: Set[Tuple[int, ...]], tau: int) -> Tuple[Set, bool]:
        # close under adjacency through non-blocked cells; flag radius contact
        frontier = list(cells)
        out = set(cells)
        touched = any(not _in_radius(c, radius - 1) for c in out)
        while frontier:
            c = frontier.pop()
            for nb in _neighbours(c):
                if nb in out or not _in_radius(nb, radius):
                    continue
                if not field.blocked(nb, tau):
                    out.add(nb)
                    frontier.append(nb)
                    touched = touched or not _in_radius(nb, radius - 1)
        return out, touched

    current = {c for c in _origin_cells(field.p.d) if not field.blocked(c, 0)}
    if not current:
        return DetectionCertificate(True, 0, "all origin cells blocked", [])
    sizes: List[int] = []
    current, touched = closed(current, 0)
    sizes.append(len(current))
    if touched:
        return DetectionCertificate(
            False, None, "frontier reached the tracking radius", sizes
        )
    for tau in range(1, n):
        step = set()
        for c in current:
            for nb in _neighbours(c):
                if _in_radius(nb, radius) and not field.blocked(nb, tau):
                    step.add(nb)
        if not step:
            return DetectionCertificate(True, tau, "frontier extinguished", sizes)
        current, touched = closed(step, tau)
        sizes.append(len(current))
        if touched:
            return DetectionCertificate(
                False, None, "frontier reached the tracking radius", sizes
            )
    return DetectionCertificate(False, None, "frontier alive at horizon", sizes)


@dataclass
class EvasionWitness:
    cells: List[Tuple[int, ...]]  # one cell per slice
    static: bool

    def positions(self, field: SliceField) -> np.ndarray:
        """Target position at every sub-step of the certified horizon."""
        p, s = field.p, field.s
        n = len(self.cells)
        out = np.empty((n * s + 1, p.d))
        if self.static:
            out[:] = 0.0
            return out
        for tau, c in enumerate(self.cells):
            center = (np.asarray(c, dtype=float) + 0.5) * p.ell
            out[tau * s : (tau + 1) * s + 1] = center
        # boundary instants belong to both slices; the later cell wins,
        # which is safe because it is vacant at that very instant
        for tau in range(1, n):
            center = (np.asarray(self.cells[tau], dtype=float) + 0.5) * p.ell
            out[tau * s] = center
        return out


@dataclass
class EvasionCertificate:
    possible: bool
    witness: Optional[EvasionWitness]
    mode: str
    reason: str


def evasion_certificate(
    field: SliceField,
    radius: int,
    n_slices: Optional[int] = None,
    mode: str = "closure",
) -> EvasionCertificate:
    """Exhibit a target strategy that survives every slice, if one exists
    in the vacant-cell graph.

    hop mode restricts the witness to single-cell moves per slice
    boundary (a bounded-speed piecewise-linear target); closure mode also
    lets the witness roam a connected vacant region within a slice.  When
    the graph search fails, the constant position at the origin is offered
    to the replay oracle as a last resort.
    """
    if mode not in ("hop", "closure"):
        raise ParamError(f"unknown evasion mode {mode!r}")
    n = field.n_slices if n_slices is None else min(n_slices, field.n_slices)
    d = field.p.d

    parents: List[Dict[Tuple[int, ...], Tuple[int, ...]]] = [dict()]
    current = {c: c for c in _origin_cells(d) if field.vacant(c, 0)}
    if current and mode == "closure":
        frontier = list(current)
        while frontier:
            c = frontier.pop()
            for nb in _neighbours(c):
                if nb in current or not _in_radius(nb, radius):
                    continue
                if field.vacant(nb, 0):
                    current[nb] = current[c]
                    frontier.append(nb)
    parents[0] = current

    alive = bool(current)
    for tau in range(1, n):
        if not alive:
            break
        step: Dict[Tuple[int, ...], Tuple[int, ...]] = {}
        for c in parents[tau - 1]:
            if not field.vacant(c, tau):
                continue
            for nb in _neighbours(c):
                if nb in step or not _in_radius(nb, radius):
                    continue
                if field.vacant(nb, tau - 1) and field.vacant(nb, tau):
                    step[nb] = c
        if mode == "closure":
            frontier = list(step)
            while frontier:
                c = frontier.pop()
                for nb in _neighbours(c):
                    if nb in step or not _in_radius(nb, radius):
                        continue
                    if field.vacant(nb, tau - 1) and field.vacant(nb, tau):
                        step[nb] = step[c]
                        frontier.append(nb)
        parents.append(step)
        alive = bool(step)

    if alive and parents and parents[-1] and len(parents) == n:
        cells = [next(iter(parents[-1]))]
        for tau in range(n - 1, 0, -1):
            cells.append(parents[tau][cells[-1]])
        cells.reverse()
        witness = EvasionWitness(cells, static=False)
        ok, _ = replay_witness(field, witness)
        if ok:
            return EvasionCertificate(True, witness, mode, "vacant cell path")
        # a failed replay means the safety margin lied; fall through

    static = EvasionWitness([(0,) * d] * n, static=True)
    ok, _ = replay_witness(field, static)
    if ok:
        return EvasionCertificate(True, static, mode, "static origin position")
    return EvasionCertificate(False, None, mode, "no witness found")


def replay_witness(
    field: SliceField, witness: EvasionWitness
) -> Tuple[bool, float]:
    """Check a witness against the raw trajectories: the target position
    must stay farther than the sensing radius from every node at every
    sub-step.  Returns (survived, min clearance)."""
    pos = witness.positions(field)
    n_steps = len(pos)
    nodes = field.traj.positions[:n_steps]
    if nodes.shape[1] == 0:
        return True, math.inf
    diff = nodes - pos[:, None, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    min_clear = float(dist.min())
    return min_clear > field.p.r, min_clear


@dataclass
class StaticDetection:
    detected: bool
    step_index: Optional[int]
    t: Optional[float]
    min_clearance: float
    uncertain: bool


def static_detection(field: SliceField, x: Optional[Sequence[float]] = None) -> StaticDetection:
    """Earliest sub-step at which a fixed target position is covered.

    uncertain flags clearances within the sub-step safety margin of the
    sensing radius: a finer grid could flip the outcome.
    """
    p = field.p
    pos = np.zeros(p.d) if x is None else np.asarray(x, dtype=float)
    nodes = field.traj.positions[: field.n_slices * field.s + 1]
    if nodes.shape[1] == 0:
        return StaticDetection(False, None, None, math.inf, False)
    dist = np.sqrt(np.sum((nodes - pos) ** 2, axis=2)).min(axis=1)
    hit = np.flatnonzero(dist <= p.r)
    min_clear = float(dist.min())
    uncertain = abs(min_clear - p.r) <= field.delta_safe
    if len(hit):
        j = int(hit[0])
        return StaticDetection(True, j, float(field.traj.times[j]), min_clear, uncertain)
    return StaticDetection(False, None, None, min_clear, uncertain)


# -- estimators ---------------------------------------------------------------


@dataclass
class RhoBracket:
    rho_low: float
    rho_low_ci: Tuple[float, float]
    rho_up: float
    rho_up_ci: Tuple[float, float]
    n: int
    evasion_flags: List[bool]
    not_certain_flags: List[bool]


def _bracket_box(p: ScaleParams, radius: int, horizon: float, variance_rate: float) -> Box:
    reach = (radius + 1) * p.ell + padded_half_width(
        p.r, horizon, variance_rate=variance_rate
    )
    return Box.cube(reach, p.d)


def simulate_game(
    p: ScaleParams,
    n_slices: int,
    s: int,
    seed: int,
    radius: int,
    variance_rate: float = 1.0,
    lam: Optional[float] = None,
) -> SliceField:
    """One realization of the detection game field."""
    times = slice_grid(p, n_slices, s)
    box = _bracket_box(p, radius, float(times[-1]), variance_rate)
    traj = simulate(
        p.lam if lam is None else lam, box, times, seed, variance_rate=variance_rate
    )
    return SliceField(p, traj, s)


def rho_bracket(
    p: ScaleParams,
    n_slices: int,
    n_replicas: int,
    seed: int,
    s: int = 8,
    radius: int = 12,
    mode: str = "closure",
    variance_rate: float = 1.0,
) -> RhoBracket:
    """Bracket the survival probability: the fraction of realizations with
    an evasion certificate from below, the fraction without a detection
    certificate from above."""
    ev: List[bool] = []
    nc: List[bool] = []
    for rep in range(n_replicas):
        field = simulate_game(
            p, n_slices, s, _rng.replica_seed(seed, rep), radius, variance_rate
        )
        cert_d = detection_certificate(field, radius)
        cert_e = evasion_certificate(field, radius, mode=mode)
        ev.append(cert_e.possible)
        nc.append(not cert_d.certain)
        if cert_e.possible and cert_d.certain:
            raise AssertionError(
                "certificates disagree: evasion witness under certain detection"
            )
    lo_ci = wilson_interval(sum(ev), n_replicas)
    up_ci = wilson_interval(sum(nc), n_replicas)
    return RhoBracket(
        sum(ev) / n_replicas, lo_ci, sum(nc) / n_replicas, up_ci,
        n_replicas, ev, nc,
    )


@dataclass
class RhoScanPoint:
    lam: float
    rho_low: float
    rho_up: float
    rho_low_ci: Tuple[float, float]
    rho_up_ci: Tuple[float, float]


def rho_scan(
    p: ScaleParams,
    lams: Sequence[float],
    n_slices: int,
    n_replicas: int,
    seed: int,
    s: int = 8,
    radius: int = 12,
    mode: str = "closure",
    variance_rate: float = 1.0,
) -> Tuple[List[RhoScanPoint], bool]:
    """Survival bracket along an intensity grid with coupled thinning.

    Every intensity reuses one realization per replica through nested node
    subsets, so both bracket ends are monotone in the intensity replica by
    replica; the returned flag reports that the monotonicity indeed held.
    """
    lams = sorted(float(v) for v in lams)
    if not lams or lams[0] < 0:
        raise ParamError("lams must be non-negative")
    lam_max = lams[-1]
    if lam_max <= 0:
        raise ParamError("the largest intensity must be positive")
    times = slice_grid(p, n_slices, s)
    box = _bracket_box(p, radius, float(times[-1]), variance_rate)

    ev = {lam: 0 for lam in lams}
    nc = {lam: 0 for lam in lams}
    monotone = True
    for rep in range(n_replicas):
        rs = _rng.replica_seed(seed, rep)
        traj = simulate(lam_max, box, times, rs, variance_rate=variance_rate)
        u = _rng.stream(rs, _rng.THIN).random(traj.n)
        prev_ev, prev_nc = None, None
        for lam in lams:
            sub = traj.subset(u < lam / lam_max)
            field = SliceField(p, sub, s)
            e = evasion_certificate(field, radius, mode=mode).possible
            c = not detection_certificate(field, radius).certain
            ev[lam] += e
            nc[lam] += c
            if prev_ev is not None and (e > prev_ev or c > prev_nc):
                monotone = False
            prev_ev, prev_nc = e, c

    points = [
        RhoScanPoint(
            lam,
            ev[lam] / n_replicas,
            nc[lam] / n_replicas,
            wilson_interval(ev[lam], n_replicas),
            wilson_interval(nc[lam], n_replicas),
        )
        for lam in lams
    ]
    return points, monotone
