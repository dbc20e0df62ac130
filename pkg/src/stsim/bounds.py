"""Concentration bounds and the exact references they are checked against.

The bound functions return the closed-form envelopes used throughout the
detection arguments; the poisson_* helpers provide numerically stable exact
tail probabilities (log-sum-exp over lgamma-based log pmf terms) so the
envelopes can be validated without Monte Carlo noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Dict, List, Tuple

from .errors import ParamError

_NORM = NormalDist()


def poisson_upper_tail_bound(lam: float, eps: float) -> float:
    """Chernoff envelope for P(X >= (1 + eps) * lam), X ~ Poisson(lam)."""
    if lam <= 0:
        raise ParamError("lam must be positive")
    if not 0 < eps < 1:
        raise ParamError("eps must lie in (0, 1)")
    return math.exp(-lam * eps * eps * (1.0 - eps / 3.0) / 2.0)


def poisson_lower_tail_bound(lam: float, eps: float) -> float:
    """Chernoff envelope for P(X <= (1 - eps) * lam), X ~ Poisson(lam)."""
    if lam <= 0:
        raise ParamError("lam must be positive")
    if not 0 < eps < 1:
        raise ParamError("eps must lie in (0, 1)")
    return math.exp(-lam * eps * eps / 2.0)


def gaussian_tail_bound(radius: float, sigma: float) -> float:
    """Mills-ratio envelope for P(N(0, sigma^2) >= radius), radius >= sigma."""
    if sigma <= 0:
        raise ParamError("sigma must be positive")
    if radius < sigma:
        raise ParamError("bound valid for radius >= sigma only")
    return (sigma / (math.sqrt(2.0 * math.pi) * radius)) * math.exp(
        -radius * radius / (2.0 * sigma * sigma)
    )


def confinement_bound(z: float, delta_t: float, d: int, variance_rate: float = 1.0) -> float:
    """Lower bound on the probability that a d-dimensional Brownian path over
    [0, delta_t] stays in the centered box of full width z; needs
    z >= 3 * sqrt(variance_rate * delta_t)."""
    if delta_t <= 0:
        raise ParamError("delta_t must be positive")
    if d < 1:
        raise ParamError("d must be a positive integer")
    sig2 = variance_rate * delta_t
    if z < 3.0 * math.sqrt(sig2):
        raise ParamError("bound valid for z >= 3 * sqrt(variance_rate * delta_t)")
    return 1.0 - d * math.exp(-z * z / (18.0 * sig2))


def wilson_interval(successes: int, n: int, conf: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ParamError("n must be positive")
    if not 0 <= successes <= n:
        raise ParamError("successes must lie in [0, n]")
    z = _NORM.inv_cdf(0.5 + conf / 2.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    return (max(0.0, center - half), min(1.0, center + half))


# -- exact Poisson tails ----------------------------------------------------


def log_poisson_pmf(k: int, lam: float) -> float:
    if k < 0:
        return -math.inf
    if lam <= 0:
        raise ParamError("lam must be positive")
    return k * math.log(lam) - lam - math.lgamma(k + 1)


def _logsumexp(terms: List[float]) -> float:
    m = max(terms)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(t - m) for t in terms))


def log_poisson_cdf(k: int, lam: float) -> float:
    """log P(X <= k) for X ~ Poisson(lam), exact up to double rounding."""
    if k < 0:
        return -math.inf
    return min(0.0, _logsumexp([log_poisson_pmf(j, lam) for j in range(k + 1)]))


def log_poisson_sf(k: int, lam: float) -> float:
    """log P(X >= k); summed upward until the terms stop mattering."""
    if k <= 0:
        return 0.0
    terms = []
    j = k
    best = -math.inf
    while True:
        t = log_poisson_pmf(j, lam)
        terms.append(t)
        best = max(best, t)
        # past the mode the terms decay faster than geometrically
        if j > lam and t < best - 60.0:
            break
        j += 1
        if j > k + 10_000_000:
            raise ParamError("poisson_sf failed to converge")
    return min(0.0, _logsumexp(terms))


def poisson_cdf(k: int, lam: float) -> float:
    return math.exp(log_poisson_cdf(k, lam))


def poisson_sf(k: int, lam: float) -> float:
    return math.exp(log_poisson_sf(k, lam))


# -- report plumbing --------------------------------------------------------


@dataclass
class BoundCheck:
    """One bound-vs-reference comparison: passes when the reference
    probability does not exceed the bound."""

    name: str
    params: Dict[str, float]
    reference: float
    bound: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.reference <= self.bound

    def line(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        ps = " ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{state} {self.name} [{ps}] reference={self.reference:.6g} bound={self.bound:.6g}"


def chernoff_suite(
    lams: Tuple[float, ...] = (10.0, 100.0, 1000.0),
    epss: Tuple[float, ...] = (0.1, 0.5, 0.9),
) -> List[BoundCheck]:
    """Chernoff envelopes against exact Poisson tails on a parameter grid."""
    checks = []
    for lam in lams:
        for eps in epss:
            k_up = math.ceil((1.0 + eps) * lam)
            checks.append(
                BoundCheck(
                    "poisson_upper_tail",
                    {"lam": lam, "eps": eps},
                    poisson_sf(k_up, lam),
                    poisson_upper_tail_bound(lam, eps),
                )
            )
            k_lo = math.floor((1.0 - eps) * lam)
            checks.append(
                BoundCheck(
                    "poisson_lower_tail",
                    {"lam": lam, "eps": eps},
                    poisson_cdf(k_lo, lam),
                    poisson_lower_tail_bound(lam, eps),
                )
            )
    return checks


def write_bound_report(path: str, checks: List[BoundCheck]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "params", "reference", "bound", "passed"])
        for c in checks:
            ps = ";".join(f"{k}={v!r}" for k, v in c.params.items())
            w.writerow([c.name, ps, repr(c.reference), repr(c.bound), int(c.passed)])
