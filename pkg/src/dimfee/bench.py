"""Solver benchmark matrix and the knapsack-to-revenue reduction check."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .allocator import (
    BudgetExhausted,
    KnapsackInstance,
    is_feasible,
    solve_1d_dp,
    solve_1d_fptas,
    solve_bruteforce,
    solve_greedy_combined,
    solve_greedy_density,
    solve_mdk_exact,
)
from .tipping import TippingSpec, reduce_mdk_to_rm, solve_rm, tip_value


def benchmark_instance(rng: np.random.Generator, n: int, m: int) -> KnapsackInstance:
    """Uncorrelated integer instance, each capacity half the total demand on its dimension."""
    weights = rng.integers(1, 101, size=(n, m)).astype(float)
    values = rng.integers(1, 101, size=n).astype(float)
    caps = np.floor(0.5 * weights.sum(axis=0))
    return KnapsackInstance(caps, values, weights)


def dp_instance(rng: np.random.Generator, n: int, capacity: int) -> KnapsackInstance:
    weights = rng.integers(1, 41, size=(n, 1)).astype(float)
    values = rng.uniform(1, 100, size=n)
    return KnapsackInstance(np.array([float(capacity)]), values, weights)


@dataclass
class BenchRow:
    n: int
    m: int
    instance: int
    solver: str
    status: str  # ok | budget_exhausted
    seconds: float
    value: float | None
    nodes: int | None
    gap: float | None  # 1 - value / exact value

    def to_dict(self) -> dict:
        return asdict(self)


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def revenue_benchmark(n_values: Sequence[int], m_values: Sequence[int], instances: int, time_budget: float,
                      seed: int) -> list[BenchRow]:
    rows = []
    for n in n_values:
        for m in m_values:
            for j in range(instances):
                inst = benchmark_instance(np.random.default_rng([seed, n, m, j]), n, m)
                exact_value = None
                t0 = time.perf_counter()
                try:
                    sol = solve_mdk_exact(inst, time_limit=time_budget)
                    dt = time.perf_counter() - t0
                    exact_value = sol.total_value
                    rows.append(BenchRow(n, m, j, "exact", "ok", dt, sol.total_value, sol.nodes, 0.0))
                except BudgetExhausted as exc:
                    dt = time.perf_counter() - t0
                    rows.append(BenchRow(n, m, j, "exact", "budget_exhausted", dt, None, exc.nodes, None))
                approx = [("greedy", solve_greedy_density, {})]
                if m == 1:
                    approx += [("dp", solve_1d_dp, {"unit": 1.0}), ("fptas(0.1)", solve_1d_fptas, {"epsilon": 0.1})]
                for name, fn, kw in approx:
                    sol, dt = _timed(fn, inst, **kw)
                    gap = None if exact_value is None else 1.0 - sol.total_value / exact_value
                    rows.append(BenchRow(n, m, j, name, "ok", dt, sol.total_value, sol.nodes, gap))
    return rows


def node_growth(rows: Iterable[BenchRow]) -> dict[int, dict[int, float]]:
    """Median exact-solver node count per (n, m)."""
    table: dict[int, dict[int, list[int]]] = {}
    for r in rows:
        if r.solver == "exact" and r.nodes is not None:
            table.setdefault(r.n, {}).setdefault(r.m, []).append(r.nodes)
    return {n: {m: float(np.median(v)) for m, v in sorted(ms.items())} for n, ms in sorted(table.items())}


def dp_benchmark(n_values: Sequence[int], capacity: int, seed: int) -> list[BenchRow]:
    rows = []
    for n in n_values:
        inst = dp_instance(np.random.default_rng([seed, n]), n, capacity)
        sol, dt = _timed(solve_1d_dp, inst, 1.0)
        rows.append(BenchRow(n, 1, 0, "dp", "ok", dt, sol.total_value, None, None))
    return rows


# ---------------------------------------------------------------- reduction


def random_mdk(rng: np.random.Generator, n_max: int = 12, m_max: int = 3) -> KnapsackInstance:
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    values = rng.integers(0, 51, size=n).astype(float)
    if values.max() == 0:
        values[rng.integers(n)] = 1.0
    weights = rng.integers(0, 21, size=(n, m)).astype(float)
    caps = rng.integers(10, 61, size=m).astype(float)
    return KnapsackInstance(caps, values, weights)


@dataclass
class ReductionCheck:
    index: int
    family: str
    n: int
    m: int
    mdk_set: tuple[int, ...]
    rm_set: tuple[int, ...]
    equivalent: bool
    brute_force_ok: bool
    tips_proportional: bool
    scaling_ok: bool

    @property
    def passed(self) -> bool:
        return self.equivalent and self.brute_force_ok and self.tips_proportional and self.scaling_ok


def check_reduction(inst: KnapsackInstance, spec: TippingSpec, scales: Sequence[float] = (0.01, 1.0, 100.0),
                    index: int = 0) -> ReductionCheck:
    """Reduce, solve both sides exactly, confirm with brute force and check scale invariance.

    Scale invariance is checked twice: the knapsack values are multiplied by
    each C directly, and the reduction is rerun with range caps in the same
    proportions (all kept inside the family's attainable tip range).
    """
    base = solve_mdk_exact(inst)
    rm, scale = reduce_mdk_to_rm(inst, spec)
    rm_sol = solve_rm(rm, "exact")
    equivalent = rm_sol.chosen == base.chosen
    tips = rm.tips()
    tips_ok = bool(np.all(np.abs(tips - scale * inst.values) <= 1e-9 * np.maximum(1.0, scale * inst.values)))
    bf_ok = (solve_bruteforce(inst).chosen == base.chosen
             and solve_bruteforce(rm.to_knapsack()).chosen == rm_sol.chosen
             and is_feasible(inst, rm_sol.chosen))
    scaling_ok = True
    vmax = float(inst.values.max())
    top = max(scales)
    for c in scales:
        if solve_mdk_exact(inst.scaled(c)).chosen != base.chosen:
            scaling_ok = False
        cap = scale * vmax * c / top
        rm_c, _ = reduce_mdk_to_rm(inst, spec, range_cap=cap)
        if solve_rm(rm_c, "exact").chosen != base.chosen:
            scaling_ok = False
    return ReductionCheck(index, spec.family, inst.n, inst.dims, base.chosen, rm_sol.chosen, equivalent,
                          bf_ok, tips_ok, scaling_ok)


def reduction_suite(count: int, specs: Sequence[TippingSpec], seed: int, n_max: int = 12, m_max: int = 3,
                    scales: Sequence[float] = (0.01, 1.0, 100.0)) -> list[ReductionCheck]:
    out = []
    for j in range(count):
        inst = random_mdk(np.random.default_rng([seed, j]), n_max, m_max)
        for spec in specs:
            out.append(check_reduction(inst, spec, scales, j))
    return out
