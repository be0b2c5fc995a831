"""Chain simulation: mechanism variants, the per-block step, scenarios and stabilization."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
from scipy import optimize

from ..allocator import build_block_1d, build_block_md, build_block_synthetic
from ..mechanism import (
    FEE_FLOOR,
    BaseFeeState,
    Block,
    GasConfig,
    Mempool,
    ResourceBounds,
    SyntheticProjection,
    check_safety_gas_cap,
    satisfies_safety,
    update_base_fee_1d,
    update_base_fee_md,
    update_weights_adaptive,
    validate_block_1d,
    validate_block_md,
    validate_block_synthetic,
    within_cap,
)
from .demand import DemandModel, generate_mempool


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OneDim:
    gas: GasConfig
    bounds: ResourceBounds | None = None
    kind = "one_dim"

    def __post_init__(self) -> None:
        if self.bounds is not None and not check_safety_gas_cap(self.gas, self.bounds):
            raise ValueError("gas cap violates per-resource caps")


@dataclass(frozen=True)
class MultiDim:
    bounds: ResourceBounds
    kind = "multi_dim"


@dataclass(frozen=True)
class Synthetic:
    projection: SyntheticProjection
    bounds: ResourceBounds | None = None
    kind = "synthetic"

    def __post_init__(self) -> None:
        if self.bounds is not None and not self.projection.is_safe(self.bounds):
            raise ValueError("synthetic caps do not guarantee per-resource safety")


@dataclass(frozen=True)
class Adaptive:
    """One-dimensional pricing whose gas weights drift toward observed usage once per epoch."""

    gas: GasConfig
    bounds: ResourceBounds
    eta: float = 0.01
    clip: float = 1.05
    epoch: int = 7200
    kind = "adaptive"

    def __post_init__(self) -> None:
        if not check_safety_gas_cap(self.gas, self.bounds):
            raise ValueError("gas cap violates per-resource caps")
        if self.epoch < 1:
            raise ValueError("epoch must be at least one block")


Mechanism = Union[OneDim, MultiDim, Synthetic, Adaptive]


def resource_count(mech: Mechanism) -> int:
    if isinstance(mech, MultiDim):
        return mech.bounds.dims
    if isinstance(mech, Synthetic):
        return mech.projection.m
    return mech.gas.dims


def fee_count(mech: Mechanism) -> int:
    if isinstance(mech, MultiDim):
        return mech.bounds.dims
    if isinstance(mech, Synthetic):
        return mech.projection.k
    return 1


@dataclass(frozen=True)
class ChainState:
    height: int
    fees: BaseFeeState
    # live gas config for the adaptive variant
    gas: GasConfig | None = None
    utilization_ema: tuple[float, ...] | None = None


def initial_state(mech: Mechanism, fees: BaseFeeState | Sequence[float]) -> ChainState:
    fees = fees if isinstance(fees, BaseFeeState) else BaseFeeState(tuple(fees))
    if len(fees) != fee_count(mech):
        raise ValueError(f"{mech.kind} needs {fee_count(mech)} fees, got {len(fees)}")
    if isinstance(mech, Adaptive):
        return ChainState(0, fees, mech.gas, (1.0,) * mech.gas.dims)
    return ChainState(0, fees)


def price_map(mech: Mechanism, state: ChainState | None = None) -> np.ndarray:
    """k x m matrix turning fees into per-resource prices."""
    if isinstance(mech, MultiDim):
        return np.eye(mech.bounds.dims)
    if isinstance(mech, Synthetic):
        return np.asarray(mech.projection.matrix, dtype=float)
    gas = state.gas if (state is not None and state.gas is not None) else mech.gas
    return np.asarray([gas.weights], dtype=float)


def build_block(state: ChainState, mempool, mech: Mechanism, solver: str = "exact", **opts) -> Block:
    if isinstance(mech, MultiDim):
        return build_block_md(mempool, state.fees, mech.bounds, solver, **opts)
    if isinstance(mech, Synthetic):
        return build_block_synthetic(mempool, state.fees, mech.projection, solver, **opts)
    gas = state.gas or mech.gas
    return build_block_1d(mempool, state.fees, gas, solver, **opts)


def validate_block(block: Block, state: ChainState, mech: Mechanism, txs) -> bool:
    """Full validity predicate of the active mechanism plus per-resource safety."""
    if isinstance(mech, MultiDim):
        ok = validate_block_md(block, mech.bounds, state.fees, txs)
        bounds = mech.bounds
    elif isinstance(mech, Synthetic):
        ok = validate_block_synthetic(block, mech.projection, state.fees, txs)
        bounds = mech.bounds
    else:
        ok = validate_block_1d(block, state.gas or mech.gas, state.fees, txs)
        bounds = mech.bounds
    if bounds is not None and ok:
        ok = satisfies_safety(block.consumption_total, bounds)
    return ok


def _next_fees(state: ChainState, block: Block, mech: Mechanism) -> BaseFeeState:
    if isinstance(mech, MultiDim):
        return update_base_fee_md(state.fees, block.consumption_total, mech.bounds)
    if isinstance(mech, Synthetic):
        proj = np.asarray(mech.projection.matrix) @ np.asarray(block.consumption_total)
        return update_base_fee_md(state.fees, tuple(proj), mech.projection.bounds)
    gas = state.gas or mech.gas
    return BaseFeeState((update_base_fee_1d(state.fees[0], block.gas_total, gas.gas_target),))


def step_chain(state: ChainState, mempool, mech: Mechanism, solver: str = "exact",
               validate: bool = False, **opts) -> tuple[ChainState, Block]:
    """Build the next block at the current fees, then advance the fees.

    Cheap cap checks always run; ``validate=True`` additionally re-checks the
    block with the reference validity predicate.
    """
    block = build_block(state, mempool, mech, solver, **opts)
    if isinstance(mech, (OneDim, Adaptive)):
        gas = state.gas or mech.gas
        if not within_cap(block.gas_total, gas.gas_cap):
            raise SimulationError(f"block gas {block.gas_total} exceeds cap {gas.gas_cap}")
    bounds = mech.bounds
    if bounds is not None and not satisfies_safety(block.consumption_total, bounds):
        raise SimulationError(f"block violates resource caps: {block.consumption_total}")
    if validate:
        table = Mempool.from_transactions(mempool, m=resource_count(mech)).by_id() if len(mempool) else {}
        if not validate_block(block, state, mech, table):
            raise SimulationError(f"invalid block at height {state.height}")
    fees = _next_fees(state, block, mech)
    gas, ema = state.gas, state.utilization_ema
    if isinstance(mech, Adaptive):
        alpha = 2.0 / (mech.epoch + 1)
        usage = np.asarray(block.consumption_total) / np.asarray(mech.bounds.targets)
        ema = tuple((1 - alpha) * np.asarray(ema) + alpha * usage)
        if (state.height + 1) % mech.epoch == 0:
            gas = update_weights_adaptive(gas, ema, mech.eta, mech.clip, mech.bounds)
    return ChainState(state.height + 1, fees, gas, ema), block


@dataclass
class ChainTrace:
    """Per-block records; ``fees[t]`` is the fee vector block t was built under."""

    fees: np.ndarray
    consumption: np.ndarray
    gas: np.ndarray
    welfare: np.ndarray
    tips: np.ndarray
    burn: np.ndarray
    mempool: np.ndarray
    final_fees: np.ndarray
    blocks: list[Block] | None = None

    @property
    def n_blocks(self) -> int:
        return len(self.gas)

    def fee_series(self) -> np.ndarray:
        """Fees before every block followed by the fees after the last one."""
        return np.vstack([self.fees.reshape(-1, len(self.final_fees)), self.final_fees[None, :]])

    def header(self) -> list[str]:
        k = self.fees.shape[1]
        m = self.consumption.shape[1]
        return (["block"] + [f"fee_{i}" for i in range(k)] + [f"cons_{i}" for i in range(m)]
                + ["gas", "welfare", "tips", "burn", "mempool"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for t in range(self.n_blocks):
            row = [t] + [repr(float(x)) for x in self.fees[t]] + [repr(float(x)) for x in self.consumption[t]]
            row += [repr(float(self.gas[t])), repr(float(self.welfare[t])), repr(float(self.tips[t])),
                    repr(float(self.burn[t])), int(self.mempool[t])]
            w.writerow(row)
        return buf.getvalue()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChainTrace):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("fees", "consumption", "gas", "welfare", "tips", "burn", "mempool", "final_fees"))


class _TraceBuilder:
    def __init__(self, k: int, m: int, keep_blocks: bool):
        self.k, self.m = k, m
        self.rows: list[tuple] = []
        self.blocks: list[Block] | None = [] if keep_blocks else None

    def add(self, state: ChainState, block: Block, mempool_size: int) -> None:
        self.rows.append((state.fees.fees, block.consumption_total, block.gas_total, block.value_total,
                          block.tip_total, block.burn_total, mempool_size))
        if self.blocks is not None:
            self.blocks.append(block)

    def finish(self, final: ChainState) -> ChainTrace:
        n = len(self.rows)
        col = lambda i: [r[i] for r in self.rows]
        return ChainTrace(
            np.array(col(0), dtype=float).reshape(n, self.k),
            np.array(col(1), dtype=float).reshape(n, self.m),
            np.array(col(2), dtype=float), np.array(col(3), dtype=float),
            np.array(col(4), dtype=float), np.array(col(5), dtype=float),
            np.array(col(6), dtype=np.int64), np.array(final.fees.fees, dtype=float), self.blocks)


@dataclass(frozen=True)
class ScenarioConfig:
    mechanism: Mechanism
    demand_before: DemandModel
    demand_after: DemandModel
    shock_block: int
    horizon: int
    stability_tol: float = 1e-3
    stability_window: int = 3
    seed: int = 0
    solver: str = "greedy"
    initial_fees: tuple[float, ...] | None = None
    # stop once every price has re-stabilized after the shock
    stop_when_stable: bool = False
    keep_blocks: bool = False

    def __post_init__(self) -> None:
        if not self.horizon > self.shock_block >= self.stability_window:
            raise ValueError("need horizon > shock_block >= stability_window")
        if not self.stability_tol > 0:
            raise ValueError("stability_tol must be positive")
        if self.stability_window < 1:
            raise ValueError("stability_window must be at least 1")
        m = resource_count(self.mechanism)
        if self.demand_before.dims != m or self.demand_after.dims != m:
            raise ValueError(f"demand models must cover the mechanism's {m} resources")


def run_scenario(cfg: ScenarioConfig) -> ChainTrace:
    mech = cfg.mechanism
    fees = cfg.initial_fees
    if fees is None:
        fees = find_stable_prices(cfg.demand_before, mech).fees
    state = initial_state(mech, fees)
    rng = np.random.default_rng(cfg.seed)
    tb = _TraceBuilder(fee_count(mech), resource_count(mech), cfg.keep_blocks)
    k = fee_count(mech)
    run = np.zeros(k, dtype=int)
    settled = np.zeros(k, dtype=bool)
    for t in range(cfg.horizon):
        model = cfg.demand_before if t < cfg.shock_block else cfg.demand_after
        mempool = generate_mempool(model, state.fees, rng, price_map(mech, state))
        new_state, block = step_chain(state, mempool, mech, cfg.solver)
        tb.add(state, block, len(mempool))
        if cfg.stop_when_stable and t >= cfg.shock_block:
            prev = np.asarray(state.fees.fees)
            change = np.abs(np.asarray(new_state.fees.fees) - prev) / prev
            run = np.where(change <= cfg.stability_tol, run + 1, 0)
            settled |= run >= cfg.stability_window
            if settled.all():
                state = new_state
                break
        state = new_state
    return tb.finish(state)


@dataclass(frozen=True)
class Stabilization:
    per_price: tuple[int | None, ...]

    @property
    def overall(self) -> int | None:
        """Time until every price is stable, or None if some price never was."""
        if any(z is None for z in self.per_price):
            return None
        return max(self.per_price)

    @property
    def stabilized(self) -> bool:
        return self.overall is not None


def relative_changes(fee_series: np.ndarray) -> np.ndarray:
    f = np.asarray(fee_series, dtype=float)
    return np.abs(np.diff(f, axis=0)) / f[:-1]


def measure_stabilization(trace: ChainTrace | np.ndarray, shock_block: int, tol: float,
                          window: int) -> Stabilization:
    """Blocks after the shock until each price changes by at most ``tol`` for ``window`` blocks."""
    series = trace.fee_series() if isinstance(trace, ChainTrace) else np.asarray(trace, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    delta = relative_changes(series)
    n = len(delta)
    out = []
    for i in range(series.shape[1]):
        ok = delta[:, i] <= tol
        z = None
        run = 0
        for t in range(shock_block, n):
            run = run + 1 if ok[t] else 0
            if run >= window:
                z = t - window + 1 - shock_block
                break
        out.append(z)
    return Stabilization(tuple(out))


def find_stable_prices(model: DemandModel, mech: Mechanism, tol: float = 1e-6,
                       gas: GasConfig | None = None) -> BaseFeeState:
    """Fees at which noise-free eligible demand sits exactly on target."""
    A = np.asarray(model.amplitudes)
    eps = np.asarray(model.elasticities)
    if isinstance(mech, MultiDim):
        if model.dims != mech.bounds.dims:
            raise ValueError("demand and bounds differ in m")
        r = (A / np.asarray(mech.bounds.targets)) ** (1.0 / eps)
        fees = BaseFeeState(tuple(float(max(FEE_FLOOR, x)) for x in r))
    elif isinstance(mech, Synthetic):
        fees = _synthetic_prices(model, mech.projection)
    else:
        gas = gas or mech.gas
        if model.dims != gas.dims:
            raise ValueError("demand and gas weights differ in m")
        w = np.asarray(gas.weights)

        def excess(log_r: float) -> float:
            return math.log(float(np.sum(w * model.demand(math.exp(log_r) * w)))) - math.log(gas.gas_target)

        lo, hi = -1.0, 1.0
        for _ in range(200):
            if excess(lo) > 0:
                break
            lo -= 4.0
        for _ in range(200):
            if excess(hi) < 0:
                break
            hi += 4.0
        if not (excess(lo) > 0 > excess(hi)):
            raise SimulationError("no stable gas price in bracket")
        r = math.exp(optimize.brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))
        fees = BaseFeeState((max(FEE_FLOOR, r),))
    _verify_fixed_point(model, mech, fees, tol, gas)
    return fees


def _synthetic_prices(model: DemandModel, proj: SyntheticProjection) -> BaseFeeState:
    P = np.asarray(proj.matrix, dtype=float)
    target = np.asarray(proj.synthetic_targets)

    def resid(x):
        return np.log(P @ model.demand(np.exp(x) @ P)) - np.log(target)

    sol = optimize.root(resid, np.zeros(proj.k), method="hybr", options={"xtol": 1e-14})
    if not sol.success or np.max(np.abs(resid(sol.x))) > 1e-9:
        raise SimulationError(f"no stable synthetic prices found: {sol.message}")
    return BaseFeeState(tuple(float(max(FEE_FLOOR, v)) for v in np.exp(sol.x)))


def _verify_fixed_point(model: DemandModel, mech: Mechanism, fees: BaseFeeState, tol: float,
                        gas: GasConfig | None) -> None:
    state = initial_state(mech, fees)
    if gas is not None and isinstance(mech, (OneDim, Adaptive)):
        state = replace(state, gas=gas)
    quiet = replace(model, noise=0.0, ineligible_ratio=0.0)
    mempool = generate_mempool(quiet, fees, np.random.default_rng(0), price_map(mech, state))
    nxt, _ = step_chain(state, mempool, mech, "greedy")
    change = np.max(np.abs(np.asarray(nxt.fees.fees) - fees.fees) / np.asarray(fees.fees))
    if change > tol:
        raise SimulationError(f"stable prices moved by {change:.3g} > {tol} in a noiseless step")
