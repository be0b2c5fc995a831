"""Seeded experiment harnesses: demand-shock stabilization and stable-state welfare."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from ..allocator import build_block_1d, build_block_md
from ..mechanism import (
    BaseFeeState,
    Block,
    GasConfig,
    Mempool,
    ResourceBounds,
    check_safety_gas_cap,
    within_cap,
)
from .chain import MultiDim, OneDim, ScenarioConfig, find_stable_prices, measure_stabilization, run_scenario
from .demand import DemandModel, generate_mempool


def estimate_stat_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Total variation distance between two empirical distributions."""
    a = np.asarray(a)
    b = np.asarray(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    support, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    pa = np.bincount(inv[:len(a)], minlength=len(support)) / len(a)
    pb = np.bincount(inv[len(a):], minlength=len(support)) / len(b)
    return float(min(1.0, 0.5 * np.abs(pa - pb).sum()))


def bootstrap_ci(samples: Sequence[np.ndarray], statistic: Callable, seed: int,
                 n_resamples: int = 2000, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap over paired samples."""
    data = tuple(np.asarray(s, dtype=float) for s in samples)
    if len(data[0]) < 2 or all(np.all(s == s[0]) for s in data):
        v = float(statistic(*data))
        return v, v
    res = stats.bootstrap(data, statistic, paired=True, vectorized=False, n_resamples=n_resamples,
                          confidence_level=level, method="percentile", random_state=np.random.default_rng(seed))
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


@dataclass(frozen=True)
class ShockConfig:
    """Symmetric m-resource demand shock, run under both mechanisms.

    Each resource has cap ``cap`` and identical constant-elasticity demand whose
    stable price is ``base_price``.  Two one-dimensional references are run:
    "aggregate" prices all m resources as gas with unit weights and the largest
    safe gas cap, "single" prices one such resource alone.
    """

    m: int
    cap: float = 100.0
    base_price: float = 2.0
    elasticity: float = 4.0
    noise: float = 0.01
    shock_factor: float = 2.0
    tx_size: float = 2.0
    ineligible_ratio: float = 0.2
    shock_block: int = 3
    horizon: int = 400
    stability_tol: float = 1e-3
    stability_window: int = 3
    solver: str = "greedy"

    def demand(self) -> DemandModel:
        target = self.cap / 2
        amp = target * self.base_price ** self.elasticity
        return DemandModel((amp,) * self.m, (self.elasticity,) * self.m, noise=self.noise,
                           tx_size=(self.tx_size,) * self.m, ineligible_ratio=self.ineligible_ratio)

    def bounds(self) -> ResourceBounds:
        return ResourceBounds((self.cap,) * self.m)

    def scenario(self, mech, seed: int) -> ScenarioConfig:
        before = self.demand()
        return ScenarioConfig(mech, before, before.scaled(self.shock_factor), self.shock_block, self.horizon,
                              self.stability_tol, self.stability_window, seed, self.solver,
                              stop_when_stable=True)

    def multi(self) -> MultiDim:
        return MultiDim(self.bounds())

    def single(self) -> OneDim:
        bounds = self.bounds()
        return OneDim(GasConfig.tightest((1.0,) * self.m, bounds), bounds)


REFERENCES = ("aggregate", "single")


def _shock_run(args) -> tuple[int, tuple[int | None, ...], int | None, int | None]:
    cfg, index, seed_multi, seed_agg, seed_one = args
    measure = lambda tr: measure_stabilization(tr, cfg.shock_block, cfg.stability_tol, cfg.stability_window)
    zi = measure(run_scenario(cfg.scenario(cfg.multi(), seed_multi)))
    z_agg = measure(run_scenario(cfg.scenario(cfg.single(), seed_agg)))
    lone = replace(cfg, m=1)
    z_one = measure(run_scenario(lone.scenario(lone.single(), seed_one)))
    return index, zi.per_price, z_agg.overall, z_one.overall


@dataclass
class ShockSamples:
    config: ShockConfig
    z: np.ndarray  # one-dimensional times, all m resources priced as gas
    z_single: np.ndarray  # one-dimensional times, a single resource
    z_i: np.ndarray  # (runs, m) per-resource times
    z_m: np.ndarray  # max over resources
    n_runs: int
    unstabilized: int
    master_seed: int

    def reference(self, name: str = "aggregate") -> np.ndarray:
        if name not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")
        return self.z if name == "aggregate" else self.z_single

    def mean_z(self, reference: str = "aggregate") -> float:
        return float(np.mean(self.reference(reference)))

    @property
    def mean_z_m(self) -> float:
        return float(np.mean(self.z_m))

    def ratio(self, reference: str = "aggregate") -> float:
        mz = self.mean_z(reference)
        return self.mean_z_m / mz if mz > 0 else math.nan

    def ratio_ci(self, reference: str = "aggregate", seed: int | None = None,
                 n_resamples: int = 2000) -> tuple[float, float]:
        if self.mean_z(reference) == 0:
            return math.nan, math.nan
        return bootstrap_ci((self.reference(reference), self.z_m), lambda a, b: np.mean(b) / np.mean(a),
                            self.master_seed if seed is None else seed, n_resamples)

    def stat_distance(self, reference: str = "aggregate") -> float:
        """max_i TV(Z, Z_i)."""
        z = self.reference(reference)
        return max(estimate_stat_distance(z, self.z_i[:, i]) for i in range(self.z_i.shape[1]))


def shock_experiment(cfg: ShockConfig, n_runs: int, seed: int = 0, workers: int = 1) -> ShockSamples:
    """Independent seeded shock runs.  Runs where any price never re-stabilizes are dropped and counted."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    children = np.random.SeedSequence(seed).spawn(n_runs)
    jobs = []
    for j, child in enumerate(children):
        a, b, c = child.generate_state(3, dtype=np.uint64)
        jobs.append((cfg, j, int(a), int(b), int(c)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_shock_run, jobs, chunksize=max(1, n_runs // (4 * workers))))
    else:
        results = [_shock_run(job) for job in jobs]
    results.sort(key=lambda r: r[0])
    keep = [r for r in results if r[2] is not None and r[3] is not None and all(z is not None for z in r[1])]
    z = np.array([r[2] for r in keep], dtype=float)
    z_one = np.array([r[3] for r in keep], dtype=float)
    zi = np.array([r[1] for r in keep], dtype=float).reshape(len(keep), cfg.m)
    zm = zi.max(axis=1) if len(keep) else np.zeros(0)
    return ShockSamples(cfg, z, z_one, zi, zm, n_runs, n_runs - len(keep), seed)


# ---------------------------------------------------------------- welfare


class PreconditionError(ValueError):
    pass


@dataclass
class WelfareOutcome:
    w1: float
    wm: float
    block_1: Block
    block_m: Block
    fees_1: BaseFeeState | None
    fees_m: BaseFeeState
    shared: int
    strict_extension: bool
    flags: list[str] = field(default_factory=list)

    @property
    def preconditions_ok(self) -> bool:
        return not self.flags

    @property
    def dominates(self) -> bool:
        """Weak dominance always; strict whenever the multi-dimensional block adds transactions."""
        if self.wm < self.w1:
            return False
        return self.wm > self.w1 if self.strict_extension else True


def clearing_gas_price(mempool: Mempool, gas: GasConfig) -> float | None:
    """Price per gas at which the eligible set is the largest value-per-gas prefix using at most T gas.

    The price sits strictly between the last included and first excluded
    value-per-gas ratio, so eligibility is unambiguous.  None when even the
    best transaction alone exceeds the target.
    """
    g = mempool.consumption @ np.asarray(gas.weights)
    pos = g > 0
    theta = np.where(pos, mempool.bids / np.where(pos, g, 1.0), np.inf)
    order = np.argsort(-theta, kind="stable")
    cum = np.cumsum(g[order])
    fits = cum <= gas.gas_target * (1 + 1e-12)
    k = int(np.argmin(fits)) if not fits.all() else len(order)
    # shrink until there is a strict gap after the prefix
    while 0 < k < len(order) and not theta[order[k]] < theta[order[k - 1]]:
        k -= 1
    if k == 0:
        return None
    hi = theta[order[k - 1]]
    if k == len(order):
        return float(max(hi / 2, 1e-9)) if math.isfinite(hi) else 1.0
    lo = theta[order[k]]
    return float(math.sqrt(hi * lo)) if lo > 0 else float(hi / 2)


def welfare_experiment(seed: int, bounds: ResourceBounds, gas: GasConfig, model: DemandModel,
                       strict: bool = False, mempool: Mempool | None = None) -> WelfareOutcome:
    """One block per mechanism from an identical mempool at stable prices.

    The multi-dimensional fees come from the closed-form stable prices and the
    mempool is drawn noise-free at those fees, so its eligible consumption is
    exactly on target.  The one-dimensional fee is the clearing price of the
    same mempool.  Violated preconditions are reported in ``flags`` (or raised
    with ``strict=True``).  A caller-supplied ``mempool`` replaces the drawn one.
    """
    flags = []
    if not check_safety_gas_cap(gas, bounds):
        flags.append("gas cap exceeds w_i * G_i for some resource")
    mech_m = MultiDim(bounds)
    fees_m = find_stable_prices(model, mech_m)
    if mempool is None:
        mempool = generate_mempool(replace(model, noise=0.0), fees_m, np.random.default_rng(seed))
    m = bounds.dims
    if len(mempool) == 0:
        flags.append("empty mempool: stability unsustainable")
    tips_m = mempool.bids - mempool.consumption @ np.asarray(fees_m.fees)
    eligible_cons = mempool.consumption[tips_m >= 0].sum(axis=0) if len(mempool) else np.zeros(m)
    for i in range(m):
        if not (eligible_cons[i] >= bounds.targets[i] * (1 - 1e-9) and within_cap(eligible_cons[i], bounds.caps[i])):
            flags.append(f"resource {i}: eligible consumption {eligible_cons[i]:.6g} not in [T_i, G_i]")
    block_m = build_block_md(mempool, fees_m, bounds, "exact")
    r1 = clearing_gas_price(mempool, gas) if len(mempool) else None
    if r1 is None:
        flags.append("no one-dimensional clearing price")
        fees_1 = None
        block_1 = Block((), (0.0,) * m)
    else:
        fees_1 = BaseFeeState((r1,))
        block_1 = build_block_1d(mempool, fees_1, gas, "exact")
        if not within_cap(block_1.gas_total, gas.gas_target):
            flags.append("one-dimensional block above gas target")
    if strict and flags:
        raise PreconditionError("; ".join(flags))
    shared = set(block_1.tx_ids) & set(block_m.tx_ids)
    strict_ext = len(block_m.tx_ids) > len(shared)
    return WelfareOutcome(block_1.value_total, block_m.value_total, block_1, block_m, fees_1, fees_m,
                          len(shared), strict_ext, flags)


def random_welfare_setup(rng: np.random.Generator, m: int) -> tuple[ResourceBounds, GasConfig, DemandModel]:
    caps = rng.uniform(50, 150, size=m)
    bounds = ResourceBounds(tuple(caps))
    weights = rng.uniform(0.5, 2.0, size=m)
    gas = GasConfig(tuple(weights), float(np.min(weights * caps)) * rng.uniform(0.7, 1.0))
    eps = rng.uniform(0.5, 3.0, size=m)
    price = rng.uniform(0.5, 2.0, size=m)
    targets = np.asarray(bounds.targets)
    model = DemandModel(tuple(targets * price**eps), tuple(eps), tx_size=tuple(targets / rng.uniform(8, 25, size=m)),
                        bundle_share=float(rng.uniform(0, 0.8)), ineligible_ratio=1.0)
    return bounds, gas, model


@dataclass
class WelfareSweep:
    rows: list[tuple[int, int, WelfareOutcome]]

    @property
    def valid(self) -> list[tuple[int, int, WelfareOutcome]]:
        return [r for r in self.rows if r[2].preconditions_ok]

    @property
    def rejected(self) -> int:
        return len(self.rows) - len(self.valid)

    @property
    def verdict(self) -> bool:
        return bool(self.valid) and all(o.dominates for _, _, o in self.valid)


def welfare_sweep(seeds: Iterable[int], dims: Sequence[int] = (2, 3)) -> WelfareSweep:
    rows = []
    for m in dims:
        for seed in seeds:
            rng = np.random.default_rng([int(seed), int(m)])
            bounds, gas, model = random_welfare_setup(rng, m)
            rows.append((m, int(seed), welfare_experiment(int(seed), bounds, gas, model)))
    return WelfareSweep(rows)
