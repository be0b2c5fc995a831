"""Knapsack solvers behind the allocation rules, and the block builders using them.

Every deterministic solver returns the same *canonical* optimum so results can
be compared set-for-set:

1. items whose value is at most ``tol`` are never selected, where
   ``tol = 1e-9 * sum of positive values`` (scale free, so multiplying all
   values by a constant changes nothing);
2. total value is maximised, two totals within ``tol`` count as tied;
3. ties go to the set with fewer items, then to the lexicographically
   smallest sorted index tuple.

Block builders order eligible transactions by id, so rule 3 prefers lower ids.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .mechanism import (
    BaseFeeState,
    Block,
    DimensionError,
    GasConfig,
    Mempool,
    ResourceBounds,
    SyntheticProjection,
    gas_of,
    tip_1d,
    tip_md,
    tip_synthetic,
    within_cap,
)

VALUE_RTOL = 1e-9
DEFAULT_NODE_BUDGET = 10**7
BRUTEFORCE_MAX_ITEMS = 25
DP_MAX_CAPACITY_UNITS = 10**7
DP_MAX_TABLE_CELLS = 2 * 10**8

SOLVERS = ("exact", "bruteforce", "dp", "fptas", "greedy")


class SolverError(RuntimeError):
    pass


class BudgetExhausted(SolverError):
    """Branch-and-bound stopped before proving optimality."""

    def __init__(self, message: str, nodes: int):
        super().__init__(message)
        self.nodes = nodes


@dataclass(frozen=True, eq=False)
class KnapsackInstance:
    capacities: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        caps = np.asarray(self.capacities, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(len(values), len(caps))
        if len(caps) < 1:
            raise ValueError("knapsack needs at least one dimension")
        if np.any(caps < 0) or not np.all(np.isfinite(caps)):
            raise ValueError("capacities must be finite and nonnegative")
        if len(values) and (values.min() < 0 or weights.min() < 0):
            raise ValueError("values and consumption must be nonnegative")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(weights))):
            raise ValueError("non-finite value or consumption")
        object.__setattr__(self, "capacities", caps)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_items(cls, capacities: Sequence[float],
                   items: Iterable[tuple[float, Sequence[float]]]) -> "KnapsackInstance":
        items = list(items)
        m = len(capacities)
        return cls(np.array(capacities, dtype=float), np.array([v for v, _ in items], dtype=float),
                   np.array([list(c) for _, c in items], dtype=float).reshape(len(items), m))

    @property
    def dims(self) -> int:
        return len(self.capacities)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def items(self) -> list[tuple[float, tuple[float, ...]]]:
        return [(float(v), tuple(float(x) for x in c)) for v, c in zip(self.values, self.weights)]

    def scaled(self, factor: float) -> "KnapsackInstance":
        return KnapsackInstance(self.capacities, self.values * factor, self.weights)

    def to_dict(self) -> dict:
        return {"dims": self.dims, "capacities": self.capacities.tolist(),
                "items": [{"value": v, "consumption": list(c)} for v, c in self.items]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "KnapsackInstance":
        inst = cls.from_items(d["capacities"], [(it["value"], it["consumption"]) for it in d["items"]])
        if "dims" in d and int(d["dims"]) != inst.dims:
            raise DimensionError(f"dims={d['dims']} but {inst.dims} capacities given")
        return inst


@dataclass(frozen=True)
class KnapsackSolution:
    chosen: tuple[int, ...]
    total_value: float
    totals: tuple[float, ...]
    kind: str
    nodes: int | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        d = {"chosen": list(self.chosen), "total_value": self.total_value, "kind": self.kind}
        if self.nodes is not None:
            d["nodes"] = self.nodes
        return d


def value_tolerance(inst: KnapsackInstance) -> float:
    return VALUE_RTOL * float(np.sum(inst.values[inst.values > 0]))


def is_feasible(inst: KnapsackInstance, chosen: Iterable[int]) -> bool:
    """Independent capacity check used by tests and block validation."""
    chosen = list(chosen)
    if len(set(chosen)) != len(chosen) or any(not 0 <= j < inst.n for j in chosen):
        return False
    return all(within_cap(math.fsum(inst.weights[j, d] for j in chosen), inst.capacities[d])
               for d in range(inst.dims))


def _solution(inst: KnapsackInstance, chosen: Iterable[int], kind: str,
              nodes: int | None = None) -> KnapsackSolution:
    chosen = tuple(sorted(int(j) for j in chosen))
    total = math.fsum(float(inst.values[j]) for j in chosen)
    totals = tuple(math.fsum(float(inst.weights[j, d]) for j in chosen) for d in range(inst.dims))
    return KnapsackSolution(chosen, total, totals, kind, nodes)


def _candidates(inst: KnapsackInstance, tol: float) -> list[int]:
    """Items that could ever appear in a canonical optimum."""
    out = []
    for j in range(inst.n):
        if inst.values[j] <= tol:
            continue
        if all(within_cap(inst.weights[j, d], inst.capacities[d]) for d in range(inst.dims)):
            out.append(j)
    return out


def _all_fit(inst: KnapsackInstance, idx: Sequence[int]) -> bool:
    if not idx:
        return True
    totals = inst.weights[list(idx)].sum(axis=0)
    return all(within_cap(t, c) for t, c in zip(totals, inst.capacities))


def solve_bruteforce(inst: KnapsackInstance) -> KnapsackSolution:
    """Enumerate every subset; the reference oracle for the other solvers."""
    if inst.n > BRUTEFORCE_MAX_ITEMS:
        raise ValueError(f"brute force limited to {BRUTEFORCE_MAX_ITEMS} items, got {inst.n}")
    tol = value_tolerance(inst)
    pool = [j for j in range(inst.n) if inst.values[j] > tol]
    feasible: list[tuple[float, tuple[int, ...]]] = []
    for size in range(len(pool) + 1):
        for subset in combinations(pool, size):
            if is_feasible(inst, subset):
                feasible.append((math.fsum(float(inst.values[j]) for j in subset), subset))
    best = max(v for v, _ in feasible)
    winner = min((len(s), s) for v, s in feasible if v >= best - tol)[1]
    return _solution(inst, winner, "exact")


def _density_bound(k, resid, cur, vals, wts, dim_orders, n):
    """Cheapest fractional-relaxation bound over items at positions >= k."""
    ub = math.inf
    for d, order in enumerate(dim_orders):
        room = resid[d]
        b = cur
        for p in order:
            if p < k:
                continue
            w = wts[p][d]
            if w <= room:
                room -= w
                b += vals[p]
            else:
                b += vals[p] * room / w
                break
        if b < ub:
            ub = b
    return ub


def solve_mdk_exact(inst: KnapsackInstance, node_budget: int = DEFAULT_NODE_BUDGET,
                    time_limit: float | None = None) -> KnapsackSolution:
    """Depth-first branch and bound.

    The bound at each node is the current value plus the smallest of the m
    single-dimension fractional relaxations over the undecided items.  Raises
    :class:`BudgetExhausted` instead of ever returning an unproven answer.
    """
    tol = value_tolerance(inst)
    cand = _candidates(inst, tol)
    caps = [float(c) for c in inst.capacities]
    m = inst.dims
    if _all_fit(inst, cand):
        return _solution(inst, cand, "exact", nodes=1)

    def agg_density(j):
        load = sum(inst.weights[j, d] / caps[d] for d in range(m) if caps[d] > 0)
        return inst.values[j] / load if load > 0 else math.inf

    order = sorted(cand, key=lambda j: (-agg_density(j), j))
    n = len(order)
    vals = [float(inst.values[j]) for j in order]
    wts = [tuple(float(x) for x in inst.weights[j]) for j in order]
    dim_orders = []
    for d in range(m):
        dim_orders.append(sorted(range(n), key=lambda p: (
            -(vals[p] / wts[p][d]) if wts[p][d] > 0 else -math.inf, p)))
    suffix_w = [[0.0] * m for _ in range(n + 1)]
    suffix_v = [0.0] * (n + 1)
    for p in range(n - 1, -1, -1):
        suffix_v[p] = suffix_v[p + 1] + vals[p]
        for d in range(m):
            suffix_w[p][d] = suffix_w[p + 1][d] + wts[p][d]

    greedy = solve_greedy_density(inst)
    best = {"val": greedy.total_value, "size": len(greedy.chosen), "set": greedy.chosen}
    chosen: list[int] = []
    nodes = 0
    deadline = None if time_limit is None else time.perf_counter() + time_limit

    def consider(value: float, members: list[int]) -> None:
        if value > best["val"] + tol:
            best.update(val=value, size=len(members), set=tuple(sorted(members)))
        elif value >= best["val"] - tol:
            key = (len(members), tuple(sorted(members)))
            if key < (best["size"], best["set"]):
                best.update(val=max(value, best["val"]), size=key[0], set=key[1])

    def dfs(k: int, cur: float, resid: list[float]) -> None:
        nonlocal nodes
        nodes += 1
        if nodes > node_budget:
            raise BudgetExhausted(f"node budget {node_budget} exhausted", nodes)
        if deadline is not None and nodes % 512 == 0 and time.perf_counter() > deadline:
            raise BudgetExhausted(f"time budget {time_limit}s exhausted", nodes)
        if k == n:
            return
        if all(within_cap(suffix_w[k][d], resid[d]) for d in range(m)):
            consider(cur + suffix_v[k], chosen + order[k:])
            return
        ub = _density_bound(k, resid, cur, vals, wts, dim_orders, n)
        if ub < best["val"] - tol:
            return
        if ub <= best["val"] + tol and len(chosen) >= best["size"]:
            return
        w = wts[k]
        if all(within_cap(w[d], resid[d]) for d in range(m)):
            chosen.append(order[k])
            consider(cur + vals[k], chosen)
            dfs(k + 1, cur + vals[k], [resid[d] - w[d] for d in range(m)])
            chosen.pop()
        dfs(k + 1, cur, resid)

    limit = sys.getrecursionlimit()
    if limit < n + 100:
        sys.setrecursionlimit(n + 100)
    try:
        dfs(0, 0.0, caps)
    finally:
        sys.setrecursionlimit(limit)
    return _solution(inst, best["set"], "exact", nodes=nodes)


def solve_1d_dp(inst: KnapsackInstance, unit: float) -> KnapsackSolution:
    """Exact 0/1 knapsack by dynamic programming over integer capacity.

    Consumptions must be whole multiples of ``unit``.  The table is filled
    over suffixes so that the forward reconstruction can prefer lower indices
    on ties.
    """
    if inst.dims != 1:
        raise DimensionError(f"dynamic programming path needs m=1, got m={inst.dims}")
    if not unit > 0:
        raise ValueError("unit must be positive")
    tol = value_tolerance(inst)
    q = inst.weights[:, 0] / unit
    w_int = np.rint(q)
    if np.any(np.abs(q - w_int) > 1e-9 * np.maximum(1.0, q)):
        raise ValueError(f"consumptions are not integral multiples of unit={unit}")
    cap_units = math.floor(inst.capacities[0] / unit + 1e-9)
    if cap_units > DP_MAX_CAPACITY_UNITS:
        raise ValueError(f"capacity of {cap_units} units exceeds {DP_MAX_CAPACITY_UNITS}")
    cand = [j for j in range(inst.n) if inst.values[j] > tol and w_int[j] <= cap_units]
    if len(cand) * (cap_units + 1) > DP_MAX_TABLE_CELLS:
        raise ValueError("dynamic programming table too large")
    width = cap_units + 1
    f_val = np.zeros(width)
    f_size = np.zeros(width, dtype=np.int64)
    take = np.zeros((len(cand), width), dtype=bool)
    for row in range(len(cand) - 1, -1, -1):
        j = cand[row]
        w = int(w_int[j])
        v = float(inst.values[j])
        inc_val = np.full(width, -np.inf)
        inc_size = np.zeros(width, dtype=np.int64)
        inc_val[w:] = f_val[:width - w] + v
        inc_size[w:] = f_size[:width - w] + 1
        better = (inc_val > f_val + tol) | ((inc_val >= f_val - tol) & (inc_size <= f_size))
        take[row] = better
        f_val = np.where(better, inc_val, f_val)
        f_size = np.where(better, inc_size, f_size)
    chosen = []
    c = cap_units
    for row, j in enumerate(cand):
        if take[row, c]:
            chosen.append(j)
            c -= int(w_int[j])
    return _solution(inst, chosen, "exact")


def solve_1d_fptas(inst: KnapsackInstance, epsilon: float) -> KnapsackSolution:
    """Value-scaling approximation scheme: total value >= (1 - epsilon) * optimum."""
    if inst.dims != 1:
        raise DimensionError(f"approximation scheme needs m=1, got m={inst.dims}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    kind = f"fptas({epsilon:g})"
    cand = _candidates(inst, value_tolerance(inst))
    if not cand:
        return _solution(inst, [], kind)
    n = len(cand)
    vals = inst.values[cand]
    wts = inst.weights[cand, 0]
    scale = epsilon * float(vals.max()) / n
    profit = np.floor(vals / scale).astype(np.int64)
    top = int(profit.sum())
    if n * (top + 1) > DP_MAX_TABLE_CELLS:
        raise ValueError("approximation table too large")
    min_w = np.full(top + 1, np.inf)
    min_w[0] = 0.0
    take = np.zeros((n, top + 1), dtype=bool)
    for row in range(n):
        p = int(profit[row])
        trial = np.full(top + 1, np.inf)
        trial[p:] = min_w[:top + 1 - p] + wts[row]
        better = trial < min_w
        take[row] = better
        min_w = np.where(better, trial, min_w)
    cap = float(inst.capacities[0])
    reachable = [p for p in range(top, -1, -1) if within_cap(min_w[p], cap)]
    p = reachable[0]
    chosen = []
    for row in range(n - 1, -1, -1):
        if take[row, p]:
            chosen.append(cand[row])
            p -= int(profit[row])
    return _solution(inst, chosen, kind)


def solve_greedy_density(inst: KnapsackInstance) -> KnapsackSolution:
    """Insert items by value per unit of normalised load, skipping those that do not fit."""
    caps = inst.capacities
    safe_caps = np.where(caps > 0, caps, np.inf)
    load = (inst.weights / safe_caps).sum(axis=1)
    load[np.any(inst.weights[:, caps <= 0] > 0, axis=1)] = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        density = np.where(load > 0, inst.values / load, np.inf)
    order = sorted(range(inst.n), key=lambda j: (-density[j], j))
    used = np.zeros(inst.dims)
    chosen = []
    for j in order:
        if inst.values[j] <= 0:
            continue
        trial = used + inst.weights[j]
        if all(within_cap(t, c) for t, c in zip(trial, caps)):
            used = trial
            chosen.append(j)
    return _solution(inst, chosen, "greedy")


def solve_greedy_combined(inst: KnapsackInstance) -> KnapsackSolution:
    """Better of density greedy and the best single item (half-optimal when m = 1)."""
    greedy = solve_greedy_density(inst)
    singles = [j for j in range(inst.n) if is_feasible(inst, [j]) and inst.values[j] > 0]
    if not singles:
        return greedy
    j = max(singles, key=lambda j: (inst.values[j], -j))
    if inst.values[j] > greedy.total_value:
        return _solution(inst, [j], "greedy")
    return greedy


def solve(inst: KnapsackInstance, solver: str = "exact", **opts) -> KnapsackSolution:
    """Dispatch by name.  When every candidate fits at once that set is returned directly."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    cand = _candidates(inst, value_tolerance(inst))
    if _all_fit(inst, cand):
        kind = {"fptas": f"fptas({opts.get('epsilon', 0.1):g})", "greedy": "greedy"}.get(solver, "exact")
        return _solution(inst, cand, kind)
    if solver == "exact":
        return solve_mdk_exact(inst, **{k: v for k, v in opts.items() if k in ("node_budget", "time_limit")})
    if solver == "bruteforce":
        return solve_bruteforce(inst)
    if solver == "dp":
        return solve_1d_dp(inst, opts["unit"])
    if solver == "fptas":
        return solve_1d_fptas(inst, opts.get("epsilon", 0.1))
    return solve_greedy_density(inst)


def _build(mempool, fees: BaseFeeState, price_map: np.ndarray, caps: Sequence[float],
           exact_tip: Callable, gas_weights, solver: str, opts: dict) -> Block:
    """Shared block builder.

    ``price_map`` (k x m) turns the k base fees into per-resource prices and
    the k x m consumption seen by the constraints.
    """
    mp = Mempool.from_transactions(mempool, m=price_map.shape[1])
    if mp.dims != price_map.shape[1]:
        raise DimensionError(f"mempool has m={mp.dims}, mechanism expects {price_map.shape[1]}")
    m = mp.dims
    if len(mp) == 0:
        return Block((), (0.0,) * m)
    fee_vec = np.asarray(fees.fees, dtype=float)
    constrained = mp.consumption @ price_map.T
    tips = mp.bids - constrained @ fee_vec
    # recheck transactions sitting on the eligibility boundary with the reference arithmetic
    near = np.flatnonzero(np.abs(tips) <= 1e-9 * np.maximum(1.0, mp.bids))
    for i in near:
        tips[i] = exact_tip(mp[int(i)])
    eligible = np.flatnonzero(tips >= 0)
    eligible = eligible[np.argsort(mp.ids[eligible], kind="stable")]
    inst = KnapsackInstance(np.asarray(caps, dtype=float), tips[eligible], constrained[eligible])
    sol = solve(inst, solver, **opts)
    picked = eligible[list(sol.chosen)]
    picked = picked[np.argsort(mp.ids[picked], kind="stable")]
    cons = tuple(math.fsum(mp.consumption[picked, i]) for i in range(m))
    gas = 0.0
    if gas_weights is not None:
        gas = math.fsum(float(mp.consumption[i] @ np.asarray(gas_weights)) for i in picked)
    burn = math.fsum(float(constrained[i] @ fee_vec) for i in picked)
    return Block(tuple(int(x) for x in mp.ids[picked]), cons, gas,
                 math.fsum(tips[picked]), burn, math.fsum(mp.values[picked]))


def build_block_1d(mempool, fee: BaseFeeState, cfg: GasConfig, solver: str = "exact", **opts) -> Block:
    """Maximise tips of eligible transactions subject to the gas cap."""
    if len(fee) != 1:
        raise DimensionError("one-dimensional fee expected")
    price_map = np.asarray([cfg.weights], dtype=float)
    return _build(mempool, fee, price_map, [cfg.gas_cap], lambda tx: tip_1d(tx, fee, cfg),
                  cfg.weights, solver, opts)


def build_block_md(mempool, fees: BaseFeeState, bounds: ResourceBounds, solver: str = "exact",
                   gas: GasConfig | None = None, **opts) -> Block:
    """Maximise tips subject to every per-resource cap."""
    if len(fees) != bounds.dims:
        raise DimensionError(f"{len(fees)} fees for {bounds.dims} resources")
    price_map = np.eye(bounds.dims)
    return _build(mempool, fees, price_map, bounds.caps, lambda tx: tip_md(tx, fees),
                  None if gas is None else gas.weights, solver, opts)


def build_block_synthetic(mempool, fees: BaseFeeState, projection: SyntheticProjection,
                          solver: str = "exact", gas: GasConfig | None = None, **opts) -> Block:
    if len(fees) != projection.k:
        raise DimensionError(f"{len(fees)} fees for {projection.k} synthetic dimensions")
    price_map = np.asarray(projection.matrix, dtype=float)
    return _build(mempool, fees, price_map, projection.synthetic_caps,
                  lambda tx: tip_synthetic(tx, fees, projection),
                  None if gas is None else gas.weights, solver, opts)


def block_gas(block: Block, txs, cfg: GasConfig) -> float:
    table = txs if isinstance(txs, Mapping) else {tx.id: tx for tx in txs}
    return math.fsum(gas_of(table[j], cfg) for j in block.tx_ids)
