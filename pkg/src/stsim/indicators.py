"""Multi-scale occupancy and confinement indicator fields.

Each scale-1 cell carries a chain of ancestors up to the deepest scale; a
cell is good when every link of the chain is good.  Links combine a
density event (all subcubes of a neighbourhood populated at the cell's
anchor time) with a confinement event (every node of the neighbourhood
stays inside its displacement window for the relevant span).  Evaluation
is lazy and memoized: sweeps over windows prune whole subtrees as soon as
a deep ancestor is already good-for-free or bad, and the pruned sweep is
by construction equal to the exhaustive one.

Counting conventions: a node belongs to a cube by coordinate floor
division, all thresholds are closed (count >= threshold), and anchor
times must be exact grid times of the underlying trajectory set.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set, Tuple, Union

import numpy as np

from . import rng as _rng
from . import tessellation as tess
from .bounds import wilson_interval
from .errors import GeometryError, ParamError
from .geometry import Box, Cell
from .mobility import TrajectorySet, bounds_array, simulate
from .tessellation import IndexWindow, ScaleParams


@dataclass(frozen=True)
class FieldConfig:
    """Evaluation options for indicator fields.

    e_mode: "count" (scale-1 neighbourhood population), "detect" (some node
    of the cube is window-confined over the cell's interval), or a callable
    (grid, i, tau) -> 0/1 for custom occupancy events.
    """

    e_mode: Union[str, Callable] = "count"
    displacement_mode: str = "checked"
    q: float = 3.0


@dataclass
class SimulationPlan:
    """Time grid and sampling box big enough for a window of indicators."""

    time_units: np.ndarray  # integer multiples of beta / s
    times: np.ndarray
    s: int
    box: Box
    horizon: float


def _chain(p: ScaleParams, i: Tuple[int, ...], tau: int) -> List[Cell]:
    """Ancestor cells of the scale-1 cell (i, tau) for k = 1..kappa."""
    cells = [Cell(1, tuple(i), tau)]
    for k in range(1, p.kappa):
        prev = cells[-1]
        cells.append(
            Cell(
                k + 1,
                tess.cube_ancestor(p, k, 1, prev.i),
                tess.interval_ancestor(p, k, 1, prev.tau),
            )
        )
    return cells


def plan_simulation(
    p: ScaleParams,
    window: IndexWindow,
    s: int = 8,
    coarse_step: int = 2,
    pad_sigmas: float = 6.0,
    variance_rate: float = 1.0,
    max_coarse_points: int = 256,
    mem_budget_gib: float = 2.0,
) -> SimulationPlan:
    """Plan the trajectory grid and box that a window of scale-1 indicator
    chains needs: anchors of every ancestor, window ends, a fine ladder over
    the scale-1 span, and a coarse ladder over the deep-scale span.

    The coarse ladder step grows with the deep-scale horizon so it never
    exceeds ``max_coarse_points`` entries; confinement checks sample the
    trajectory on this grid, so the ladder density is an accuracy knob, not
    a correctness requirement.  Plans whose dense trajectory storage would
    exceed ``mem_budget_gib`` are rejected up front."""
    if p.kappa < 2:
        raise ParamError("indicator chains need kappa >= 2")
    if len(window.i_lo) != p.d:
        raise ParamError("window dimension must match params")
    if window.tau_lo < 0:
        raise ParamError("indicator windows start at tau >= 0")
    if window.cell_count() > 200_000:
        raise ParamError("window too large to plan")

    bt = [0] + [tess.interval_ratio(p, 1, k) for k in range(1, p.kappa + 1)]
    mandatory: Set[int] = set()
    reach_units = 0
    taus = range(window.tau_lo, window.tau_hi + 1)
    corners = set(
        itertools.product(*[(lo, hi) for lo, hi in zip(window.i_lo, window.i_hi)])
    )
    for i0 in corners | {tuple(0 for _ in range(p.d))}:
        for tau0 in {window.tau_lo, window.tau_hi}:
            for c in _chain(p, i0, tau0):
                k = c.k
                mandatory.add(c.tau * bt[k] * s)
                mandatory.add((c.tau + 2) * bt[k] * s)
                kinds = ["cube", "extended"]
                if k == 1:
                    kinds.append("super")
                if k < p.kappa:
                    kinds.append("base")
                for kind in kinds:
                    box = tess.region_units(p, c, kind)
                    for lo, hi in box.axes:
                        reach_units = max(reach_units, abs(lo), abs(hi))
    # every tau of the window, not only corners, needs its own cell times
    for tau0 in taus:
        for c in _chain(p, tuple(0 for _ in range(p.d)), tau0):
            mandatory.add(c.tau * bt[c.k] * s)
            mandatory.add((c.tau + 2) * bt[c.k] * s)

    lo_u = min(mandatory | {0})
    hi_u = max(mandatory | {(window.tau_hi + 2) * s})
    units: Set[int] = set(mandatory)
    units.update(range(window.tau_lo * s, (window.tau_hi + 2) * s + 1))
    span = hi_u - lo_u
    step = max(coarse_step, -(-span // (max_coarse_points * s))) * s
    units.update(range(lo_u, hi_u + 1, step))
    units.add(lo_u)
    units.add(hi_u)
    time_units = np.array(sorted(units), dtype=np.int64)
    dt = p.beta / s
    times = time_units.astype(float) * dt

    horizon = float(hi_u - lo_u) * dt
    half = float(reach_units) * p.ell / p.m + pad_sigmas * math.sqrt(
        variance_rate * max(horizon, dt)
    )
    est_bytes = len(time_units) * max(p.lam * (2.0 * half) ** p.d, 1.0) * p.d * 8.0
    if est_bytes > mem_budget_gib * 2**30:
        raise ParamError(
            f"plan needs about {est_bytes / 2**30:.1f} GiB of trajectory storage "
            f"({len(time_units)} grid times, box half-width {half:.3g}, intensity "
            f"{p.lam:g}); shrink the window, m, or kappa, or raise mem_budget_gib"
        )
    return SimulationPlan(
        time_units=time_units,
        times=times,
        s=s,
        box=Box.cube(half, p.d),
        horizon=horizon,
    )


class IndicatorGrid:
    """Lazy, memoized indicator field over a trajectory set."""

    def __init__(
        self,
        p: ScaleParams,
        traj: TrajectorySet,
        config: FieldConfig = FieldConfig(),
        s: int = 8,
    ):
        if p.kappa < 2:
            raise ParamError("indicator chains need kappa >= 2")
        self.p = p
        self.traj = traj
        self.cfg = config
        self.s = int(s)
        self._dt = p.beta / self.s
        self._memo: Dict[Tuple[str, Cell], int] = {}
        self._box_lo = bounds_array(traj.box)[:, 0]
        self._box_hi = bounds_array(traj.box)[:, 1]
        self._bt = [0] + [
            tess.interval_ratio(p, 1, k) for k in range(1, p.kappa + 1)
        ]

    # -- plumbing --------------------------------------------------------

    def _t(self, beta_units: int) -> float:
        return float(beta_units * self.s) * self._dt

    def _phys(self, units: int) -> float:
        return float(units) * self.p.ell / self.p.m

    def _require_region(self, box_units: Box) -> None:
        for a, (lo, hi) in enumerate(box_units.axes):
            if self._phys(lo) < self._box_lo[a] - 1e-9 or self._phys(hi) > self._box_hi[a] + 1e-9:
                raise GeometryError(
                    f"required region axis {a} [{self._phys(lo):g}, {self._phys(hi):g}] "
                    f"exceeds the simulated box "
                    f"[{self._box_lo[a]:g}, {self._box_hi[a]:g}]"
                )

    def _subcube_counts(
        self,
        k_sub: int,
        lo_idx: Tuple[int, ...],
        hi_idx: Tuple[int, ...],
        t: float,
        keep: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Node counts of every scale-k_sub cube in an index window at time t,
        flattened C-order; the window must sit inside the simulated box.
        ``keep`` restricts the census to a node subset (confined nodes)."""
        side_units = tess.cube_side_ratio(self.p, 0, k_sub)
        self._require_region(
            Box(
                tuple(
                    (lo * side_units, (hi + 1) * side_units)
                    for lo, hi in zip(lo_idx, hi_idx)
                )
            )
        )
        pos = self.traj.positions_at(t)
        side = self.p.ell * side_units / self.p.m
        idx = np.floor(pos / side).astype(np.int64)
        shape = tuple(hi - lo + 1 for lo, hi in zip(lo_idx, hi_idx))
        inside = np.ones(len(pos), dtype=bool) if keep is None else keep.copy()
        for a in range(self.p.d):
            inside &= (idx[:, a] >= lo_idx[a]) & (idx[:, a] <= hi_idx[a])
        idx = idx[inside]
        flat = np.zeros(int(np.prod(shape)), dtype=np.int64)
        if len(idx):
            offs = idx - np.asarray(lo_idx, dtype=np.int64)
            radix = np.cumprod([1] + list(shape[::-1][:-1]))[::-1].astype(np.int64)
            np.add.at(flat, offs @ radix, 1)
        return flat

    def _nodes_in(self, box_units: Box, t: float) -> np.ndarray:
        self._require_region(box_units)
        pos = self.traj.positions_at(t)
        mask = np.ones(len(pos), dtype=bool)
        for a, (lo, hi) in enumerate(box_units.axes):
            mask &= (pos[:, a] >= self._phys(lo)) & (pos[:, a] <= self._phys(hi))
        return mask

    def _confined_mask(self, t0: float, t1: float, z: float) -> np.ndarray:
        """Nodes whose displacement throughout [t0, t1] stays in the centered
        window of full width z."""
        return self.traj.displacement_in(
            t0, t1, z, self.cfg.displacement_mode, self.cfg.q
        )

    def _memoized(self, name: str, cell: Cell, fn) -> int:
        key = (name, cell)
        if key not in self._memo:
            self._memo[key] = int(fn())
        return self._memo[key]

    # -- indicators --------------------------------------------------------

    def occupied(self, i: Tuple[int, ...], tau: int) -> int:
        """Scale-1 occupancy event E."""
        cell = Cell(1, tuple(i), tau)

        def ev() -> int:
            p = self.p
            t0 = self._t(tau * self._bt[1])
            t1 = self._t((tau + p.eta) * self._bt[1])
            if callable(self.cfg.e_mode):
                return int(self.cfg.e_mode(self, tuple(i), tau))
            if self.cfg.e_mode == "count":
                # population of the super cell, window-confined nodes only
                mask = self._nodes_in(tess.region_units(p, cell, "super"), t0)
                ok = self._confined_mask(t0, t1, p.w * p.ell)
                thr = (1.0 - p.eps) * p.lam * (p.eta * p.ell) ** p.d
                return int((mask & ok).sum() >= thr)
            if self.cfg.e_mode == "detect":
                mask = self._nodes_in(tess.region_units(p, cell, "cube"), t0)
                if not mask.any():
                    return 0
                ok = self._confined_mask(t0, t1, p.w * p.ell)
                return int(bool((ok & mask).any()))
            raise ParamError(f"unknown occupancy mode {self.cfg.e_mode!r}")

        return self._memoized("E", cell, ev)

    def dense(self, cell: Cell) -> int:
        """All subcubes of the cell's own cube populated at its start time."""

        def ev() -> int:
            p, k = self.p, cell.k
            if not 1 <= k <= p.kappa:
                raise ParamError("dense needs 1 <= k <= kappa")
            ratio = tess.cube_side_ratio(p, k - 1, k)
            lo = tuple(a * ratio for a in cell.i)
            hi = tuple((a + 1) * ratio - 1 for a in cell.i)
            t0 = self._t(cell.tau * self._bt[k])
            counts = self._subcube_counts(k - 1, lo, hi, t0)
            thr = self._density_threshold(k)
            return int(bool((counts >= thr).all()))

        return self._memoized("D", cell, ev)

    def _density_threshold(self, k: int) -> float:
        p = self.p
        side = p.ell * tess.cube_side_ratio(p, 0, k - 1) / p.m
        return (1.0 - tess.density_slack(p, k)) * p.lam * side**p.d

    def dense_confined(self, cell: Cell) -> int:
        """Dext: the extended neighbourhood populated at the cell's start and
        window-confined over two of its intervals."""

        def ev() -> int:
            p, k = self.p, cell.k
            if not 1 <= k <= p.kappa:
                raise ParamError("dense_confined needs 1 <= k <= kappa")
            ratio = tess.cube_side_ratio(p, k - 1, k)
            halo = p.eta * p.m * p.n * k**3
            lo = tuple(a * ratio - halo for a in cell.i)
            hi = tuple((a + 1) * ratio + halo - 1 for a in cell.i)
            t0 = self._t(cell.tau * self._bt[k])
            t1 = self._t((cell.tau + 2) * self._bt[k])
            # each covered subcube needs enough nodes that stay within the
            # halo width for two of the cell's intervals
            z = halo * (p.ell * tess.cube_side_ratio(p, 0, k - 1) / p.m)
            ok = self._confined_mask(t0, t1, z)
            counts = self._subcube_counts(k - 1, lo, hi, t0, keep=ok)
            return int(bool((counts >= self._density_threshold(k)).all()))

        return self._memoized("Dext", cell, ev)

    def base_dense(self, cell: Cell) -> int:
        """Dbase: the base neighbourhood populated at the parent anchor time
        and window-confined from there to the cell's own start."""

        def ev() -> int:
            p, k = self.p, cell.k
            if not 1 <= k <= p.kappa - 1:
                raise ParamError("base_dense needs 1 <= k <= kappa - 1")
            g = tess.interval_ancestor(p, k, 1, cell.tau)
            t0 = self._t(g * self._bt[k + 1])
            t1 = self._t(cell.tau * self._bt[k])
            h = p.eta * p.m * p.n * (k + 1) ** 3
            lo = tuple(a - h for a in cell.i)
            hi = tuple(a + h for a in cell.i)
            z = h * (p.ell * tess.cube_side_ratio(p, 0, k) / p.m)
            ok = self._confined_mask(t0, t1, z)
            counts = self._subcube_counts(k, lo, hi, t0, keep=ok)
            thr = self._density_threshold(k + 1)
            return int(bool((counts >= thr).all()))

        return self._memoized("Dbase", cell, ev)

    def level_indicator(self, cell: Cell) -> int:
        """One link of the goodness chain at the cell's scale."""
        p, k = self.p, cell.k
        if k == p.kappa:
            return self.dense_confined(cell)
        if k == 1:
            return max(self.occupied(cell.i, cell.tau), 1 - self.base_dense(cell))
        return max(self.dense_confined(cell), 1 - self.base_dense(cell))

    def ancestry(self, i: Tuple[int, ...], tau: int, pruned: bool = True) -> int:
        """Product of the chain links for the scale-1 cell (i, tau)."""
        chain = _chain(self.p, tuple(i), tau)
        value = 1
        for cell in reversed(chain):
            link = self.level_indicator(cell)
            value *= link
            if pruned and value == 0:
                return 0
        return value

    # -- sweeps and clusters ----------------------------------------------

    def sweep(self, window: IndexWindow, pruned: bool = True) -> Dict[Tuple, int]:
        """Ancestry values for every scale-1 cell of the window, keyed by
        (i, tau)."""
        out: Dict[Tuple, int] = {}
        ranges = [range(lo, hi + 1) for lo, hi in zip(window.i_lo, window.i_hi)]
        for idx in itertools.product(*ranges):
            for tau in range(window.tau_lo, window.tau_hi + 1):
                out[(idx, tau)] = self.ancestry(idx, tau, pruned=pruned)
        return out

    def bad_cluster(
        self,
        window: IndexWindow,
        start: Optional[Tuple[Tuple[int, ...], int]] = None,
        badness: str = "ancestry",
    ) -> "BadCluster":
        """Connected component of bad cells containing the start cell.

        badness "ancestry" grows the cluster over cells whose whole chain
        fails; "detect" uses the scale-1 occupancy event alone.  Escape means
        touching a spatial face of the window or its last time layer; the
        first time layer is a wall, not an exit.
        """
        if start is None:
            start = (tuple(0 for _ in window.i_lo), window.tau_lo)
        start_i, start_tau = start
        checked = 0
        if badness == "ancestry":
            flag = self.ancestry
        elif badness == "detect":
            flag = self.occupied
        else:
            raise ParamError(f"unknown badness {badness!r}")

        def bad(i, tau) -> bool:
            return flag(i, tau) == 0

        def in_window(i, tau) -> bool:
            return all(
                lo <= a <= hi for a, lo, hi in zip(i, window.i_lo, window.i_hi)
            ) and window.tau_lo <= tau <= window.tau_hi

        def touches_exit(i, tau) -> bool:
            spatial = any(
                a == lo or a == hi for a, lo, hi in zip(i, window.i_lo, window.i_hi)
            )
            return spatial or tau == window.tau_hi

        if not in_window(start_i, start_tau):
            raise ParamError("start cell outside the window")
        if not bad(start_i, start_tau):
            return BadCluster(set(), False, 1)

        seen: Set[Tuple[Tuple[int, ...], int]] = {(start_i, start_tau)}
        frontier = [(start_i, start_tau)]
        escaped = touches_exit(start_i, start_tau)
        moves = [
            off
            for off in itertools.product((-1, 0, 1), repeat=self.p.d + 1)
            if any(off)
        ]
        while frontier:
            i, tau = frontier.pop()
            for off in moves:
                ni = tuple(a + o for a, o in zip(i, off[:-1]))
                ntau = tau + off[-1]
                if (ni, ntau) in seen or not in_window(ni, ntau):
                    continue
                checked += 1
                if bad(ni, ntau):
                    seen.add((ni, ntau))
                    frontier.append((ni, ntau))
                    escaped = escaped or touches_exit(ni, ntau)
        return BadCluster(seen, escaped, checked)

    def export_cells(self, window: IndexWindow, path: str) -> None:
        """CSV of the chain indicators for every window cell and its
        ancestors: columns k, i1..id, tau, E, Dext, Dbase, Ak, A."""
        p = self.p
        rows = []
        seen: Set[Cell] = set()
        ranges = [range(lo, hi + 1) for lo, hi in zip(window.i_lo, window.i_hi)]
        for idx in itertools.product(*ranges):
            for tau in range(window.tau_lo, window.tau_hi + 1):
                chain = _chain(p, idx, tau)
                a_val = self.ancestry(idx, tau, pruned=False)
                for cell in chain:
                    if cell in seen:
                        continue
                    seen.add(cell)
                    e = self.occupied(cell.i, cell.tau) if cell.k == 1 else ""
                    dext = self.dense_confined(cell) if cell.k >= 2 else ""
                    dbase = (
                        self.base_dense(cell) if cell.k <= p.kappa - 1 else ""
                    )
                    rows.append(
                        [cell.k, *cell.i, cell.tau, e, dext, dbase,
                         self.level_indicator(cell),
                         a_val if cell.k == 1 else ""]
                    )
        rows.sort(key=lambda r: (r[0], r[p.d + 1], tuple(r[1 : p.d + 1])))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["k"] + [f"i{a + 1}" for a in range(p.d)] + ["tau", "E", "Dext", "Dbase", "Ak", "A"]
            )
            w.writerows(rows)


@dataclass
class BadCluster:
    cells: Set[Tuple[Tuple[int, ...], int]]
    escaped: bool
    checked: int


@dataclass
class EscapeEstimate:
    value: float
    ci_low: float
    ci_high: float
    n: int
    escapes: List[bool]


def escape_probability(
    p: ScaleParams,
    window: IndexWindow,
    n_replicas: int,
    seed: int,
    config: FieldConfig = FieldConfig(e_mode="detect"),
    s: int = 8,
    coarse_step: int = 2,
    variance_rate: float = 1.0,
    lam: Optional[float] = None,
    badness: str = "ancestry",
) -> EscapeEstimate:
    """Monte Carlo probability that the bad cluster at the origin escapes
    the window.  Occupancy defaults to the detect event: with no nodes at
    all every cell is bad and the cluster escapes surely."""
    plan = plan_simulation(
        p, window, s=s, coarse_step=coarse_step, variance_rate=variance_rate
    )
    lam_eff = p.lam if lam is None else lam
    escapes: List[bool] = []
    for rep in range(n_replicas):
        rs = _rng.replica_seed(seed, rep)
        traj = simulate(
            lam_eff, plan.box, plan.times, rs, variance_rate=variance_rate
        )
        grid = IndicatorGrid(p, traj, config, s=s)
        escapes.append(grid.bad_cluster(window, badness=badness).escaped)
    k = sum(escapes)
    lo, hi = wilson_interval(k, n_replicas)
    return EscapeEstimate(k / n_replicas, lo, hi, n_replicas, escapes)
