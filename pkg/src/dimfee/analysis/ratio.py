"""Expectation ratio E[max of m draws] / E[Z]: exact sums, Monte Carlo, and the lower bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distributions import TRUNCATION_TOL, DiscreteDist

MAX_TERMS = 10**7
CHUNK = 4096


class TruncationError(RuntimeError):
    pass


def expected_max(dist: DiscreteDist, m: int) -> float:
    """E[max of m iid draws] = sum_{k>=0} (1 - F(k)^m), stopped once a term drops below 1e-12."""
    if m < 1:
        raise ValueError("m must be at least 1")
    mean = dist.mean()
    total = 0.0
    start = 0
    while start < MAX_TERMS:
        k = np.arange(start, start + CHUNK)
        # 1 - (1 - sf)^m without cancellation in the tail
        with np.errstate(divide="ignore"):
            terms = -np.expm1(m * np.log1p(-dist.sf(k)))
        small = np.flatnonzero((terms < TRUNCATION_TOL) & (k >= mean))
        if len(small):
            total += math.fsum(terms[:small[0]])
            return total
        total += math.fsum(terms)
        start += CHUNK
    raise TruncationError(f"{dist.name}: tail did not fall below {TRUNCATION_TOL} within {MAX_TERMS} terms")


def exact_ratio_iid(dist: DiscreteDist, m: int) -> float:
    if m == 1:
        return 1.0
    return expected_max(dist, m) / expected_max(dist, 1)


@dataclass(frozen=True)
class MCRatio:
    estimate: float
    ci_low: float
    ci_high: float

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def mc_ratio_iid(dist: DiscreteDist, m: int, n_samples: int, seed) -> MCRatio:
    """Mean of sampled maxima over the exact mean, with a normal-approximation 95% interval."""
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    rng = np.random.default_rng(seed)
    maxima = dist.sample(rng, (n_samples, m)).max(axis=1).astype(float)
    denom = expected_max(dist, 1)
    mean = float(np.mean(maxima))
    half = 1.959963984540054 * float(np.std(maxima, ddof=1)) / math.sqrt(n_samples)
    return MCRatio(mean / denom, (mean - half) / denom, (mean + half) / denom)


def theoretical_ratio_lower_bound(c: float, p: float, delta: float, m: int) -> float:
    """(1 + c)(p - delta)(1 - (1 - p - delta)^(m - 1)) / (p + delta), floored at 0."""
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    if not (0 < p < 1 and 0 <= delta < 1):
        raise ValueError(f"need p in (0, 1) and delta in [0, 1), got p={p}, delta={delta}")
    if not p + delta < 1:
        raise ValueError(f"need p + delta < 1, got {p + delta}")
    if not p > delta:
        raise ValueError(f"need p > delta, got p={p}, delta={delta}")
    if m < 1:
        raise ValueError("m must be at least 1")
    b = 1.0 - p - delta
    value = (1.0 + c) * (p - delta) * (-math.expm1((m - 1) * math.log(b))) / (p + delta)
    return max(0.0, value)


def tail_probability(samples: Sequence[float], c: float, mean: float | None = None) -> float:
    """Fraction of samples at or above (1 + c) times the mean (sample mean unless ``mean`` is given).

    For integer-valued samples whose threshold falls on an atom, the plug-in
    estimate jumps between neighbouring tail masses as the sample mean crosses it.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) == 0:
        raise ValueError("samples must be non-empty")
    threshold = (1.0 + c) * (float(np.mean(x)) if mean is None else mean)
    return float(np.mean(x >= threshold))


def exact_tail_probability(dist: DiscreteDist, c: float) -> float:
    """P[Z >= (1 + c) E[Z]] from the distribution itself."""
    k = math.ceil((1.0 + c) * dist.mean() - 1e-12)
    return float(dist.sf(k - 1))
