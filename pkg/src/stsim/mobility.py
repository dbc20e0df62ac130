"""Node mobility: Poisson clouds, Brownian trajectories, coverage queries.

Trajectories are stored dense on an explicit, possibly non-uniform time
grid.  Increments are exact Brownian draws for whatever grid is supplied
(variance = dt * variance_rate per coordinate), so a coarse grid is not an
approximation of the node positions at grid times, only of path suprema
between them.  Randomness is addressed by (seed, purpose, step, box) so a
realization is reproducible regardless of query order or thread count.
"""

from __future__ import annotations

import csv
import itertools
import math
from typing import Optional, Sequence, Union

import numpy as np

from . import rng as _rng
from .errors import HorizonError, ParamError, RejectionError
from .geometry import Box

MAX_NODES = 20_000_000


def bounds_array(box: Box) -> np.ndarray:
    """Box bounds as a float array of shape (d, 2)."""
    return np.asarray([[float(lo), float(hi)] for lo, hi in box.axes], dtype=float)


def padded_half_width(
    r: float, horizon: float, variance_rate: float = 1.0, pad_sigmas: float = 6.0
) -> float:
    """Half-width of a sampling box that makes edge effects negligible.

    Covers the query radius plus pad_sigmas standard deviations of the
    per-coordinate drift over the whole simulated horizon.
    """
    if horizon < 0:
        raise ParamError("horizon must be non-negative")
    return r + pad_sigmas * math.sqrt(variance_rate * horizon)


def sample_ppp(
    lam: float,
    box: Box,
    seed: int,
    box_id: int = 0,
    max_nodes: int = MAX_NODES,
) -> np.ndarray:
    """Poisson point process of intensity lam on a box, (N, d) positions.

    Deterministic in (seed, box_id): the count and the uniform coordinates
    come from one dedicated stream.
    """
    if lam < 0:
        raise ParamError("intensity must be non-negative")
    b = bounds_array(box)
    vol = float(np.prod(b[:, 1] - b[:, 0]))
    mean = lam * vol
    if mean > max_nodes:
        raise ParamError(
            f"expected population {mean:.3g} exceeds the node cap {max_nodes}; "
            "shrink the box or the intensity"
        )
    gen = _rng.stream(seed, _rng.PPP, a=box_id)
    n = int(gen.poisson(mean))
    if n > max_nodes:
        raise ParamError(f"sampled population {n} exceeds the node cap {max_nodes}")
    u = gen.random((n, len(b)))
    return b[:, 0] + u * (b[:, 1] - b[:, 0])


class TrajectorySet:
    """Dense node trajectories on an explicit time grid.

    positions has shape (T, N, d) and is always stored unwrapped; torus
    wrapping, when enabled, happens at query time so displacement queries
    stay exact.
    """

    def __init__(
        self,
        times: Sequence[float],
        positions: np.ndarray,
        box: Box,
        variance_rate: float = 1.0,
        torus: bool = False,
    ):
        times = np.asarray(times, dtype=float)
        positions = np.asarray(positions, dtype=float)
        if times.ndim != 1 or len(times) < 1:
            raise ParamError("times must be a non-empty 1-D array")
        if np.any(np.diff(times) <= 0):
            raise ParamError("times must be strictly increasing")
        if positions.ndim != 3 or positions.shape[0] != len(times):
            raise ParamError("positions must have shape (len(times), N, d)")
        if positions.shape[2] != box.dim:
            raise ParamError("positions and box disagree on dimension")
        self.times = times
        self.positions = positions
        self.box = box
        self.variance_rate = float(variance_rate)
        self.torus = bool(torus)
        self._bounds = bounds_array(box)
        self._max_step: Optional[np.ndarray] = None

    # -- basic shape ---------------------------------------------------

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def d(self) -> int:
        return self.positions.shape[2]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float) -> int:
        """Grid index of time t; the grid is the contract, so t must hit it."""
        i = int(np.searchsorted(self.times, t))
        tol = 1e-9 * max(1.0, abs(t))
        for j in (i, i - 1, i + 1):
            if 0 <= j < len(self.times) and abs(self.times[j] - t) <= tol:
                return j
        raise HorizonError(
            f"time {t!r} is not on the simulation grid "
            f"[{self.t0!r}, {self.t1!r}] ({len(self.times)} points)"
        )

    def wrap(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = self._bounds[:, 0], self._bounds[:, 1]
        return lo + np.mod(pts - lo, hi - lo)

    def positions_at(self, t: float) -> np.ndarray:
        p = self.positions[self.index_of(t)]
        return self.wrap(p) if self.torus else p

    def subset(self, mask: np.ndarray) -> "TrajectorySet":
        """View with a subset of nodes (coupled thinning keeps the rest)."""
        return TrajectorySet(
            self.times,
            self.positions[:, mask, :],
            self.box,
            self.variance_rate,
            self.torus,
        )

    # -- displacement --------------------------------------------------

    def slice_max_step(self) -> np.ndarray:
        """Per-step max coordinate increment over all nodes, shape (T-1,)."""
        if self._max_step is None:
            if len(self.times) == 1 or self.n == 0:
                self._max_step = np.zeros(max(len(self.times) - 1, 0))
            else:
                d = np.abs(np.diff(self.positions, axis=0))
                self._max_step = d.max(axis=(1, 2))
        return self._max_step

    def max_coord_deviation(self, t_from: float, t_to: float) -> np.ndarray:
        """Per-node max over grid times in [t_from, t_to] of the sup-norm
        distance from the position at t_from, shape (N,)."""
        i0, i1 = self.index_of(t_from), self.index_of(t_to)
        if i1 < i0:
            raise ParamError("need t_to >= t_from")
        ref = self.positions[i0]
        dev = np.abs(self.positions[i0 : i1 + 1] - ref).max(axis=2)
        return dev.max(axis=0)

    def displacement_in(
        self,
        t_from: float,
        t_to: float,
        z: float,
        mode: str = "checked",
        q: float = 3.0,
    ) -> np.ndarray:
        """Per-node flags: did the node stay inside the centered box of full
        width z around its t_from position throughout [t_from, t_to]?

        ``checked`` verifies the condition at every grid time in the window;
        ``conservative`` additionally reserves q standard deviations of the
        largest between-grid-point drift, so a True is robust to excursions
        the grid cannot see.
        """
        if z < 0:
            raise ParamError("window width z must be non-negative")
        dev = self.max_coord_deviation(t_from, t_to)
        if mode == "checked":
            return dev <= z / 2.0
        if mode == "conservative":
            i0, i1 = self.index_of(t_from), self.index_of(t_to)
            if i1 == i0:
                margin = 0.0
            else:
                dt_max = float(np.max(np.diff(self.times[i0 : i1 + 1])))
                margin = q * math.sqrt(self.variance_rate * dt_max)
            return dev <= z / 2.0 - margin
        raise ParamError(f"unknown displacement mode {mode!r}")

    # -- io --------------------------------------------------------------

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "node"] + [f"x{a + 1}" for a in range(self.d)])
            for j, t in enumerate(self.times):
                for node in range(self.n):
                    w.writerow([repr(float(t)), node] + [
                        repr(float(v)) for v in self.positions[j, node]
                    ])


def simulate(
    lam_or_points: Union[float, np.ndarray],
    box: Box,
    times: Sequence[float],
    seed: int,
    variance_rate: float = 1.0,
    torus: bool = False,
    box_id: int = 0,
) -> TrajectorySet:
    """Sample initial nodes (PPP or given points) at times[0] and evolve them
    as independent Brownian motions along the grid."""
    times = np.asarray(times, dtype=float)
    if np.isscalar(lam_or_points) or np.ndim(lam_or_points) == 0:
        pts0 = sample_ppp(float(lam_or_points), box, seed, box_id=box_id)
    else:
        pts0 = np.asarray(lam_or_points, dtype=float)
        if pts0.ndim != 2 or pts0.shape[1] != box.dim:
            raise ParamError("initial points must have shape (N, d)")
    n, d = pts0.shape
    pos = np.empty((len(times), n, d), dtype=float)
    pos[0] = pts0
    for j in range(len(times) - 1):
        dt = float(times[j + 1] - times[j])
        g = _rng.stream(seed, _rng.EVOLVE, a=j, b=box_id)
        pos[j + 1] = pos[j] + math.sqrt(dt * variance_rate) * g.standard_normal((n, d))
    return TrajectorySet(times, pos, box, variance_rate=variance_rate, torus=torus)


class SpatialIndex:
    """Uniform bucket grid over points for radius queries.

    Bucket side must be at least the query radius so a query only touches
    the 3**d surrounding buckets; the final filter is an exact Euclidean
    distance test.
    """

    def __init__(self, points: np.ndarray, cell_side: float):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2:
            raise ParamError("points must have shape (N, d)")
        if not cell_side > 0:
            raise ParamError("cell_side must be positive")
        self.points = points
        self.side = float(cell_side)
        buckets: dict = {}
        for idx, key in enumerate(np.floor(points / self.side).astype(np.int64)):
            buckets.setdefault(tuple(key), []).append(idx)
        self._buckets = {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}

    def query_ball(self, x: np.ndarray, radius: float) -> np.ndarray:
        """Indices of points within Euclidean distance radius of x."""
        x = np.asarray(x, dtype=float)
        reach = max(1, int(math.ceil(radius / self.side)))
        base = np.floor(x / self.side).astype(np.int64)
        hits = []
        d = len(x)
        offs = range(-reach, reach + 1)
        for off in itertools.product(offs, repeat=d):
            idxs = self._buckets.get(tuple(base + np.asarray(off)))
            if idxs is None:
                continue
            pts = self.points[idxs]
            dist2 = np.sum((pts - x) ** 2, axis=1)
            hits.append(idxs[dist2 <= radius * radius])
        return np.concatenate(hits) if hits else np.empty(0, dtype=np.int64)

    def covered(self, x: np.ndarray, radius: float) -> bool:
        return len(self.query_ball(x, radius)) > 0


def covered(index: SpatialIndex, x: np.ndarray, r: float) -> bool:
    """Is the point x within Euclidean distance r of some node?"""
    return index.covered(x, r)


def conditioned_increment(
    d: int,
    delta_t: float,
    z: float,
    gen: np.random.Generator,
    substeps: int = 16,
    variance_rate: float = 1.0,
    max_proposals: int = 1 << 16,
) -> np.ndarray:
    """One Brownian increment over delta_t conditioned on the discretized
    path staying in the centered box of full width z.

    Rejection from the unconditioned path law; z = inf degenerates to a
    plain Gaussian draw.  Raises RejectionError (with the observed
    acceptance rate) when the tube is too tight to sample.
    """
    return conditioned_increments(
        1, d, delta_t, z, gen, substeps, variance_rate, max_proposals
    )[0]


def conditioned_increments(
    count: int,
    d: int,
    delta_t: float,
    z: float,
    gen: np.random.Generator,
    substeps: int = 16,
    variance_rate: float = 1.0,
    max_proposals: int = 1 << 16,
) -> np.ndarray:
    if delta_t < 0:
        raise ParamError("delta_t must be non-negative")
    if substeps < 1:
        raise ParamError("substeps must be positive")
    if count == 0:
        return np.empty((0, d))
    sigma = math.sqrt(variance_rate * delta_t)
    if not math.isfinite(z):
        return sigma * gen.standard_normal((count, d))
    if z <= 0:
        raise ParamError("tube width z must be positive (or inf)")
    out = np.empty((count, d))
    have = 0
    tried = 0
    step_sigma = math.sqrt(variance_rate * delta_t / substeps)
    batch = max(64, 2 * count)
    while have < count:
        if tried >= max_proposals:
            raise RejectionError(
                f"conditioned increment: {have}/{count} accepted after "
                f"{tried} proposals",
                acceptance_rate=have / tried if tried else 0.0,
            )
        steps = step_sigma * gen.standard_normal((batch, substeps, d))
        path = np.cumsum(steps, axis=1)
        ok = np.max(np.abs(path), axis=(1, 2)) <= z / 2.0
        tried += batch
        good = path[ok, -1, :]
        take = min(len(good), count - have)
        out[have : have + take] = good[:take]
        have += take
    return out
