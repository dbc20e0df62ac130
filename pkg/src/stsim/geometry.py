"""Exact axis-aligned boxes, time intervals, and space-time cells.

Endpoints may be ints, Fractions, or floats.  Comparisons are exact for
int and Fraction endpoints, which is what the tessellation layer relies
on: every region it builds has endpoints that are integer multiples of a
common unit, so containment and intersection tests never round.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple


@dataclass(frozen=True)
class Box:
    """Closed product of per-axis intervals ``[lo_a, hi_a]``."""

    axes: Tuple[Tuple[object, object], ...]

    def __post_init__(self):
        for lo, hi in self.axes:
            if lo > hi:
                raise ValueError(f"empty axis interval [{lo}, {hi}]")

    @classmethod
    def from_bounds(cls, lows: Sequence, highs: Sequence) -> "Box":
        return cls(tuple(zip(lows, highs)))

    @classmethod
    def cube(cls, half_side, d: int, center=0) -> "Box":
        """The cube of side ``2*half_side`` centred at ``center`` per axis."""
        return cls(tuple((center - half_side, center + half_side) for _ in range(d)))

    @property
    def dim(self) -> int:
        return len(self.axes)

    def side_lengths(self):
        return tuple(hi - lo for lo, hi in self.axes)

    def volume(self):
        v = 1
        for lo, hi in self.axes:
            v *= hi - lo
        return v

    def contains_point(self, point) -> bool:
        return all(lo <= x <= hi for (lo, hi), x in zip(self.axes, point))

    def contains(self, other: "Box") -> bool:
        return all(
            lo <= olo and ohi <= hi
            for (lo, hi), (olo, ohi) in zip(self.axes, other.axes)
        )

    def intersects(self, other: "Box") -> bool:
        """True when the closed boxes share at least one point."""
        return all(
            lo <= ohi and olo <= hi
            for (lo, hi), (olo, ohi) in zip(self.axes, other.axes)
        )

    def scaled(self, unit) -> "Box":
        return Box(tuple((lo * unit, hi * unit) for lo, hi in self.axes))

    def to_float(self) -> "Box":
        return Box(tuple((float(lo), float(hi)) for lo, hi in self.axes))


@dataclass(frozen=True)
class TimeInterval:
    """Closed interval ``[lo, hi]`` on the time axis."""

    lo: object
    hi: object

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty time interval [{self.lo}, {self.hi}]")

    def length(self):
        return self.hi - self.lo

    def contains_point(self, t) -> bool:
        return self.lo <= t <= self.hi

    def contains(self, other: "TimeInterval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def intersects(self, other: "TimeInterval") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def scaled(self, unit) -> "TimeInterval":
        return TimeInterval(self.lo * unit, self.hi * unit)

    def to_float(self) -> "TimeInterval":
        return TimeInterval(float(self.lo), float(self.hi))


@dataclass(frozen=True)
class SpaceTimeRegion:
    """Product of a spatial box and a time interval."""

    space: Box
    time: TimeInterval

    def contains(self, other: "SpaceTimeRegion") -> bool:
        return self.space.contains(other.space) and self.time.contains(other.time)

    def intersects(self, other: "SpaceTimeRegion") -> bool:
        return self.space.intersects(other.space) and self.time.intersects(other.time)

    def to_float(self) -> "SpaceTimeRegion":
        return SpaceTimeRegion(self.space.to_float(), self.time.to_float())


@dataclass(frozen=True, order=True)
class Cell:
    """A tessellation cell: scale ``k``, cube index ``i``, interval index ``tau``."""

    k: int
    i: Tuple[int, ...]
    tau: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("cell scale must be non-negative")
        if not all(isinstance(a, int) for a in self.i):
            raise ValueError("cube index must be a tuple of ints")
