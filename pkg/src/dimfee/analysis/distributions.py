"""The four stabilization-time families, backed by scipy.stats."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats

FAMILIES = ("geometric", "poisson", "negative_binomial", "logarithmic")
TRUNCATION_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteDist:
    family: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        p = dict(self.params)
        if self.family in ("geometric", "logarithmic"):
            _need(p, {"q"})
            if not 0 < p["q"] < 1 or (self.family == "geometric" and p["q"] == 1):
                raise ValueError(f"q must lie in (0, 1), got {p['q']}")
        elif self.family == "poisson":
            _need(p, {"lam"})
            if not p["lam"] > 0:
                raise ValueError("lam must be positive")
        elif self.family == "negative_binomial":
            _need(p, {"r", "q"})
            if not (p["r"] > 0 and 0 < p["q"] < 1):
                raise ValueError("negative binomial needs r > 0 and q in (0, 1)")
        else:
            raise ValueError(f"unknown family {self.family!r}")
        object.__setattr__(self, "params", p)

    @classmethod
    def geometric(cls, q: float = 0.5) -> "DiscreteDist":
        """Trials up to and including the first success, support {1, 2, ...}."""
        return cls("geometric", {"q": q})

    @classmethod
    def poisson(cls, lam: float = 5.0) -> "DiscreteDist":
        return cls("poisson", {"lam": lam})

    @classmethod
    def negative_binomial(cls, r: float = 3.0, q: float = 0.5) -> "DiscreteDist":
        """Failures before the r-th success, support {0, 1, ...}."""
        return cls("negative_binomial", {"r": r, "q": q})

    @classmethod
    def logarithmic(cls, q: float = 0.7) -> "DiscreteDist":
        """pmf(k) = -q^k / (k ln(1 - q)) on {1, 2, ...}."""
        return cls("logarithmic", {"q": q})

    @property
    def name(self) -> str:
        args = ",".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.family}({args})"

    @property
    def frozen(self):
        p = self.params
        if self.family == "geometric":
            return stats.geom(p["q"])
        if self.family == "poisson":
            return stats.poisson(p["lam"])
        if self.family == "negative_binomial":
            return stats.nbinom(p["r"], p["q"])
        return stats.logser(p["q"])

    @property
    def support_min(self) -> int:
        return 1 if self.family in ("geometric", "logarithmic") else 0

    def pmf(self, k):
        return self.frozen.pmf(k)

    def cdf(self, k):
        return self.frozen.cdf(k)

    def sf(self, k):
        """P[Z > k]."""
        if self.family == "logarithmic":
            return self._logser_sf(k)
        return self.frozen.sf(k)

    def _logser_sf(self, k):
        # scipy's generic sf for logser sums the pmf per point; a reversed cumulative sum over
        # one grid is exact to rounding and orders of magnitude faster
        q = self.params["q"]
        k_arr = np.asarray(k)
        kk = np.floor(np.atleast_1d(k_arr).astype(float))
        hi = int(max(kk.max(), 0)) + int(math.ceil(math.log(1e-18) / math.log(q))) + 2
        j = np.arange(1, hi + 1)
        pmf = np.exp(j * math.log(q) - np.log(j)) / -math.log1p(-q)
        tail = np.cumsum(pmf[::-1])[::-1]  # tail[j-1] = P[Z >= j]
        idx = np.clip(kk.astype(int), 0, hi - 1)  # P[Z > k] = P[Z >= k + 1] = tail[k]
        out = np.where(kk < 1, 1.0, tail[idx])
        return float(out[0]) if k_arr.ndim == 0 else out

    def mean(self) -> float:
        return float(self.frozen.mean())

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.frozen.rvs(size=size, random_state=rng)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}

    def __hash__(self) -> int:
        return hash((self.family, tuple(sorted(self.params.items()))))


def _need(p: Mapping, keys: set[str]) -> None:
    if set(p) != keys:
        raise ValueError(f"expected parameters {sorted(keys)}, got {sorted(p)}")


def default_families() -> list[DiscreteDist]:
    return [DiscreteDist.geometric(0.5), DiscreteDist.poisson(5.0),
            DiscreteDist.negative_binomial(3.0, 0.5), DiscreteDist.logarithmic(0.7)]
