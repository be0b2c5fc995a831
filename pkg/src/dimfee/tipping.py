"""Tipping functions, the revenue-maximisation problem and its reduction from knapsack.

A tipping function maps a transaction's value (and, in general, the prices and
its consumption) to the tip offered.  The three families here ignore ``r`` and
``c``; they still accept them so the call shape stays general.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .allocator import KnapsackInstance, KnapsackSolution, solve

FAMILIES = ("linear", "power", "saturating")
INVERT_RTOL = 1e-9
MAX_DOUBLINGS = 64


class TippingRangeError(ValueError):
    pass


@dataclass(frozen=True)
class TippingSpec:
    family: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown tipping family {self.family!r}")
        required = {"linear": {"beta"}, "power": {"beta", "alpha"}, "saturating": {"beta", "gamma"}}[self.family]
        given = set(self.params)
        if given != required:
            raise ValueError(f"{self.family} needs parameters {sorted(required)}, got {sorted(given)}")
        for k, v in self.params.items():
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"parameter {k} must be positive and finite, got {v}")
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def linear(cls, beta: float = 1.0) -> "TippingSpec":
        return cls("linear", {"beta": beta})

    @classmethod
    def power(cls, beta: float = 1.0, alpha: float = 2.0) -> "TippingSpec":
        return cls("power", {"beta": beta, "alpha": alpha})

    @classmethod
    def saturating(cls, beta: float = 1.0, gamma: float = 1.0) -> "TippingSpec":
        return cls("saturating", {"beta": beta, "gamma": gamma})

    @property
    def supremum(self) -> float:
        """Least upper bound of attainable tips."""
        if self.family == "saturating":
            return self.params["beta"] / self.params["gamma"]
        return math.inf

    @property
    def default_range_cap(self) -> float | None:
        return None if math.isinf(self.supremum) else self.supremum / 2

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TippingSpec":
        return cls(d["family"], {k: float(v) for k, v in d.get("params", {}).items()})

    def __hash__(self) -> int:
        return hash((self.family, tuple(sorted(self.params.items()))))


def tip_value(spec: TippingSpec, v: float, r=None, c=None) -> float:
    if v < 0 or not math.isfinite(v):
        raise ValueError(f"value must be finite and nonnegative, got {v}")
    p = spec.params
    if spec.family == "linear":
        return p["beta"] * v
    if spec.family == "power":
        return p["beta"] * v ** p["alpha"]
    return p["beta"] * v / (1.0 + p["gamma"] * v)


def invert_tip(spec: TippingSpec, t: float, r=None, c=None) -> float:
    """Value whose tip is ``t``; closed form where one exists, else bisection."""
    if t < 0 or not math.isfinite(t):
        raise TippingRangeError(f"tip must be finite and nonnegative, got {t}")
    if t >= spec.supremum:
        raise TippingRangeError(f"tip {t} not attainable, supremum is {spec.supremum}")
    p = spec.params
    if t == 0:
        return 0.0
    if spec.family == "linear":
        return t / p["beta"]
    if spec.family == "power":
        return (t / p["beta"]) ** (1.0 / p["alpha"])
    return _bisect_inverse(lambda v: tip_value(spec, v), t)


def _bisect_inverse(f: Callable[[float], float], t: float) -> float:
    hi = 1.0
    for _ in range(MAX_DOUBLINGS):
        if f(hi) >= t:
            break
        hi *= 2.0
    else:
        raise TippingRangeError(f"no bracket for tip {t} after {MAX_DOUBLINGS} doublings")
    lo = 0.0
    # bisect until the interval cannot shrink further in floating point
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) < t:
            lo = mid
        else:
            hi = mid
    return hi if abs(f(hi) - t) <= abs(f(lo) - t) else lo


@dataclass
class AxiomReport:
    zero_at_zero: bool
    positive: bool
    monotone: bool
    round_trip: bool
    max_round_trip_error: float
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.zero_at_zero and self.positive and self.monotone and self.round_trip


def check_fv_axioms(spec: TippingSpec | Callable[[float], float], grid: Sequence[float],
                    r=None, c=None, inverse: Callable[[float], float] | None = None) -> AxiomReport:
    """Check the family axioms on a grid.  ``spec`` may be a plain callable for negative controls."""
    grid = list(grid)
    if not grid or grid[0] != 0 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must start at 0 and be strictly ascending")
    if isinstance(spec, TippingSpec):
        f = lambda v: tip_value(spec, v, r, c)
        inverse = inverse or (lambda t: invert_tip(spec, t, r, c))
    else:
        f = spec
    ys = [f(v) for v in grid]
    failures = []
    zero = ys[0] == 0
    if not zero:
        failures.append(f"f(0) = {ys[0]}")
    positive = all(y > 0 for y in ys[1:])
    if not positive:
        failures.append("nonpositive tip at positive value")
    monotone = all(b > a for a, b in zip(ys, ys[1:]))
    if not monotone:
        failures.append("not strictly increasing")
    worst = 0.0
    round_trip = True
    if inverse is None:
        round_trip = False
        failures.append("no inverse available")
    else:
        for v, y in zip(grid, ys):
            try:
                back = inverse(y)
            except (TippingRangeError, ValueError, ZeroDivisionError) as exc:
                round_trip = False
                failures.append(f"inverse failed at v={v}: {exc}")
                continue
            err = abs(back - v) / v if v > 0 else abs(back)
            worst = max(worst, err)
        if worst > INVERT_RTOL:
            round_trip = False
            failures.append(f"round-trip error {worst:.3g}")
    return AxiomReport(zero, positive, monotone, round_trip, worst, failures)


@dataclass(frozen=True, eq=False)
class RMInstance:
    prices: tuple[float, ...]
    bounds: tuple[float, ...]
    tipping: TippingSpec
    values: np.ndarray
    consumption: np.ndarray

    def __post_init__(self) -> None:
        prices = tuple(float(x) for x in self.prices)
        bounds = tuple(float(x) for x in self.bounds)
        if len(prices) != len(bounds):
            raise ValueError("prices and bounds must have the same length")
        if any(p < 0 for p in prices) or any(b <= 0 for b in bounds):
            raise ValueError("prices must be nonnegative and bounds positive")
        values = np.asarray(self.values, dtype=float).reshape(-1)
        cons = np.asarray(self.consumption, dtype=float).reshape(len(values), len(bounds))
        if len(values) and values.min() < 0:
            raise ValueError("values must be nonnegative")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "consumption", cons)

    @property
    def dims(self) -> int:
        return len(self.bounds)

    def tips(self) -> np.ndarray:
        return np.array([tip_value(self.tipping, float(v), self.prices, c)
                         for v, c in zip(self.values, self.consumption)])

    def to_knapsack(self) -> KnapsackInstance:
        return KnapsackInstance(np.array(self.bounds), self.tips(), self.consumption)


def solve_rm(inst: RMInstance, solver: str = "exact", **opts) -> KnapsackSolution:
    return solve(inst.to_knapsack(), solver, **opts)


def reduce_mdk_to_rm(mdk: KnapsackInstance, spec: TippingSpec, r: Sequence[float] | None = None,
                     range_cap: float | None = None) -> tuple[RMInstance, float]:
    """Build a revenue-maximisation instance whose tips are proportional to ``mdk``'s values."""
    vmax = float(mdk.values.max()) if mdk.n else 0.0
    if vmax <= 0:
        raise ValueError("reduction needs at least one positive value")
    if range_cap is None:
        range_cap = spec.default_range_cap
        scale = 1.0 if range_cap is None else range_cap / vmax
        range_cap = scale * vmax
    if not (range_cap > 0 and range_cap < spec.supremum):
        raise TippingRangeError(f"range cap {range_cap} outside (0, {spec.supremum})")
    scale = range_cap / vmax
    r = tuple(r) if r is not None else (0.0,) * mdk.dims
    new_values = [invert_tip(spec, scale * float(v), r, c) for v, c in zip(mdk.values, mdk.weights)]
    rm = RMInstance(r, tuple(mdk.capacities), spec, np.array(new_values), mdk.weights.copy())
    return rm, scale
