import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dimfee.allocator import (
    BudgetExhausted,
    KnapsackInstance,
    build_block_1d,
    build_block_md,
    build_block_synthetic,
    is_feasible,
    solve,
    solve_1d_dp,
    solve_1d_fptas,
    solve_bruteforce,
    solve_greedy_combined,
    solve_greedy_density,
    solve_mdk_exact,
)
from dimfee.mechanism import (
    BaseFeeState,
    GasConfig,
    ResourceBounds,
    SyntheticProjection,
    Transaction,
    tip_md,
    validate_block_1d,
    validate_block_md,
    validate_block_synthetic,
)


def oracle(caps, values, weights):
    """Canonical optimum by bitmask enumeration: max value (1e-9 relative ties), then fewest items,
    then lexicographically smallest index tuple; items of non-positive value never chosen."""
    n = len(values)
    tol = 1e-9 * sum(v for v in values if v > 0)
    best = None
    for mask in range(1 << n):
        s = tuple(j for j in range(n) if mask >> j & 1)
        if any(values[j] <= tol for j in s):
            continue
        if any(sum(weights[j][d] for j in s) > caps[d] * (1 + 1e-12) + 1e-12 for d in range(len(caps))):
            continue
        v = sum(values[j] for j in s)
        if best is None or v > best[0] + tol:
            best = (v, s)
        elif v >= best[0] - tol and (len(s), s) < (len(best[1]), best[1]):
            best = (max(v, best[0]), s)
    return best[1]


def random_instance(rng, n, m, integral=True):
    w = rng.integers(0, 11, size=(n, m)).astype(float)
    v = rng.integers(0, 21, size=n).astype(float) if integral else rng.uniform(0, 20, size=n)
    caps = rng.integers(1, 31, size=m).astype(float)
    return KnapsackInstance(caps, v, w)


# ---------------------------------------------------------------- brute force


def test_bruteforce_examples():
    empty = KnapsackInstance(np.array([1.0]), np.zeros(0), np.zeros((0, 1)))
    assert solve_bruteforce(empty).chosen == () and solve_bruteforce(empty).total_value == 0
    inst = KnapsackInstance.from_items([2, 2], [(3, (1, 2)), (2, (1, 1)), (2, (1, 1))])
    sol = solve_bruteforce(inst)
    assert sol.chosen == (1, 2) and sol.total_value == 4
    single = KnapsackInstance.from_items([5], [(7, (5,)), (1, (6,))])
    assert solve_bruteforce(single).chosen == (0,)


def test_bruteforce_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(150):
        inst = random_instance(rng, int(rng.integers(0, 9)), int(rng.integers(1, 4)))
        assert solve_bruteforce(inst).chosen == oracle(inst.capacities, inst.values, inst.weights)


# ---------------------------------------------------------------- exact solvers


def test_exact_examples():
    zero = KnapsackInstance.from_items([3, 3], [(0, (1, 1)), (0, (1, 1))])
    assert solve_mdk_exact(zero).chosen == () and solve_mdk_exact(zero).total_value == 0
    roomy = KnapsackInstance.from_items([100, 100], [(1, (1, 1)), (0, (1, 1)), (5, (3, 2))])
    assert solve_mdk_exact(roomy).chosen == (0, 2)


def test_exact_ties_prefer_fewer_then_lexicographic():
    inst = KnapsackInstance.from_items([2], [(1, (1,)), (1, (1,)), (2, (2,))])
    assert solve_mdk_exact(inst).chosen == (2,)
    inst = KnapsackInstance.from_items([1], [(1, (1,)), (1, (1,))])
    assert solve_mdk_exact(inst).chosen == (0,)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 12), m=st.integers(1, 4))
def test_exact_matches_bruteforce(seed, n, m):
    inst = random_instance(np.random.default_rng(seed), n, m, integral=bool(seed % 2))
    exact = solve_mdk_exact(inst)
    assert exact.chosen == solve_bruteforce(inst).chosen
    assert is_feasible(inst, exact.chosen)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 12))
def test_dp_matches_bruteforce(seed, n):
    inst = random_instance(np.random.default_rng(seed), n, 1)
    assert solve_1d_dp(inst, 1.0).chosen == solve_bruteforce(inst).chosen


def test_dp_examples():
    inst = KnapsackInstance.from_items([4], [(3, (4,))])
    assert solve_1d_dp(inst, 1.0).chosen == (0,)
    zero_cap = KnapsackInstance.from_items([0], [(3, (1,)), (2, (2,))])
    assert solve_1d_dp(zero_cap, 1.0).chosen == ()
    with pytest.raises(ValueError):
        solve_1d_dp(KnapsackInstance.from_items([4], [(3, (1.5,))]), 1.0)


def test_node_budget():
    rng = np.random.default_rng(0)
    inst = KnapsackInstance(np.full(4, 200.0), rng.integers(1, 100, 40).astype(float),
                            rng.integers(1, 100, (40, 4)).astype(float))
    with pytest.raises(BudgetExhausted) as exc:
        solve_mdk_exact(inst, node_budget=50)
    assert exc.value.nodes >= 50


# ---------------------------------------------------------------- approximations


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 60), eps=st.sampled_from([0.05, 0.1, 0.3]))
def test_fptas_guarantee(seed, n, eps):
    rng = np.random.default_rng(seed)
    inst = KnapsackInstance(np.array([float(rng.integers(5, 200))]), rng.uniform(0, 100, n),
                            rng.integers(1, 40, (n, 1)).astype(float))
    opt = solve_1d_dp(inst, 1.0).total_value
    sol = solve_1d_fptas(inst, eps)
    assert is_feasible(inst, sol.chosen)
    assert sol.total_value >= (1 - eps) * opt - 1e-9
    assert sol.kind == f"fptas({eps:g})"


def test_fptas_examples():
    inst = KnapsackInstance.from_items([10], [(50, (10,)), (1, (1,)), (1, (1,))])
    assert solve_1d_fptas(inst, 0.1).total_value == 50
    same = KnapsackInstance.from_items([10], [(3, (2,))] * 7)
    assert len(solve_1d_fptas(same, 0.1).chosen) == len(solve_1d_dp(same, 1.0).chosen) == 5


def test_greedy_examples():
    empty = KnapsackInstance(np.array([1.0]), np.zeros(0), np.zeros((0, 1)))
    assert solve_greedy_density(empty).chosen == ()
    ident = KnapsackInstance.from_items([9], [(2, (3,))] * 3)
    assert solve_greedy_density(ident).chosen == (0, 1, 2)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40))
def test_greedy_combined_half_optimal(seed, n):
    rng = np.random.default_rng(seed)
    inst = KnapsackInstance(np.array([50.0]), rng.uniform(0, 100, n), rng.integers(1, 40, (n, 1)).astype(float))
    opt = solve_1d_dp(inst, 1.0).total_value
    assert solve_greedy_combined(inst).total_value >= 0.5 * opt - 1e-9
    assert solve_greedy_combined(inst).total_value >= solve_greedy_density(inst).total_value


# ---------------------------------------------------------------- properties


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 12), m=st.integers(1, 3),
       c=st.sampled_from([1e-3, 0.01, 0.5, 3.0, 100.0, 1e4]))
def test_scaling_invariance(seed, n, m, c):
    inst = random_instance(np.random.default_rng(seed), n, m)
    for name in ("exact", "bruteforce", "greedy"):
        assert solve(inst.scaled(c), name).chosen == solve(inst, name).chosen
    if m == 1:
        assert solve_1d_dp(inst.scaled(c), 1.0).chosen == solve_1d_dp(inst, 1.0).chosen
        assert solve_1d_fptas(inst.scaled(c), 0.1).chosen == solve_1d_fptas(inst, 0.1).chosen


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 11), m=st.integers(1, 3))
def test_adding_item_never_hurts(seed, n, m):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n + 1, m)
    smaller = KnapsackInstance(inst.capacities, inst.values[:n], inst.weights[:n])
    assert solve_mdk_exact(inst).total_value >= solve_mdk_exact(smaller).total_value


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 20), m=st.integers(1, 4))
def test_every_solver_feasible(seed, n, m):
    inst = random_instance(np.random.default_rng(seed), n, m, integral=False)
    for name in ("exact", "greedy"):
        sol = solve(inst, name)
        assert is_feasible(inst, sol.chosen)
        assert sol.total_value == pytest.approx(math.fsum(inst.values[list(sol.chosen)]))
        assert all(t <= c + 1e-9 for t, c in zip(sol.totals, inst.capacities))


def test_instance_json_round_trip():
    inst = KnapsackInstance.from_items([2, 3], [(1, (1, 0)), (4, (0.5, 2))])
    d = inst.to_dict()
    assert d == {"dims": 2, "capacities": [2.0, 3.0],
                 "items": [{"value": 1.0, "consumption": [1.0, 0.0]}, {"value": 4.0, "consumption": [0.5, 2.0]}]}
    back = KnapsackInstance.from_dict(d)
    assert np.array_equal(back.weights, inst.weights) and np.array_equal(back.values, inst.values)
    assert set(solve(inst).to_dict()) >= {"chosen", "total_value", "kind"}


# ---------------------------------------------------------------- block builders


def random_txs(rng, n, m):
    return [Transaction.truthful(int(j), float(rng.uniform(0, 30)), tuple(rng.integers(0, 6, m).astype(float)))
            for j in rng.permutation(n) + 100]


def test_block_examples():
    cfg = GasConfig((1, 1), 10)
    assert build_block_1d([], BaseFeeState((1,)), cfg).tx_ids == ()
    assert build_block_md([], BaseFeeState((1, 1)), ResourceBounds((5, 5))).tx_ids == ()
    one = [Transaction.truthful(4, 10, (2, 3))]
    b = build_block_1d(one, BaseFeeState((1,)), cfg)
    assert b.tx_ids == (4,) and b.gas_total == 5 and b.tip_total == 5 and b.burn_total == 5
    assert b.value_total == 10


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 12), m=st.integers(1, 3))
def test_block_md_exact_matches_bruteforce(seed, n, m):
    rng = np.random.default_rng(seed)
    txs = random_txs(rng, n, m)
    fees = BaseFeeState(tuple(rng.uniform(0.1, 3, m)))
    bounds = ResourceBounds(tuple(rng.integers(3, 15, m).astype(float)))
    block = build_block_md(txs, fees, bounds, "exact")
    assert validate_block_md(block, bounds, fees, txs)
    assert all(tip_md(t, fees) >= 0 for t in txs if t.id in block.tx_ids)
    # oracle over eligible transactions in id order
    elig = sorted((t for t in txs if tip_md(t, fees) >= 0), key=lambda t: t.id)
    pick = oracle(bounds.caps, [tip_md(t, fees) for t in elig], [t.consumption for t in elig])
    assert block.tx_ids == tuple(elig[j].id for j in pick)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 12))
def test_block_md_m1_equals_1d(seed, n):
    rng = np.random.default_rng(seed)
    txs = random_txs(rng, n, 1)
    fee = BaseFeeState((float(rng.uniform(0.1, 3)),))
    cap = float(rng.integers(3, 15))
    a = build_block_1d(txs, fee, GasConfig((1.0,), cap), "exact")
    b = build_block_md(txs, fee, ResourceBounds((cap,)), "exact")
    assert a.tx_ids == b.tx_ids and a.value_total == b.value_total


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 15), m=st.integers(1, 3),
       solver=st.sampled_from(["exact", "greedy"]))
def test_block_1d_valid(seed, n, m, solver):
    rng = np.random.default_rng(seed)
    txs = random_txs(rng, n, m)
    cfg = GasConfig(tuple(rng.uniform(0.5, 2, m)), float(rng.uniform(5, 20)))
    fee = BaseFeeState((float(rng.uniform(0.1, 2)),))
    assert validate_block_1d(build_block_1d(txs, fee, cfg, solver), cfg, fee, txs)


def test_block_synthetic_valid():
    rng = np.random.default_rng(5)
    p = SyntheticProjection(((1, 1, 0), (0, 0, 2)), (12, 10))
    for _ in range(30):
        txs = random_txs(rng, 10, 3)
        fees = BaseFeeState(tuple(rng.uniform(0.2, 2, 2)))
        assert validate_block_synthetic(build_block_synthetic(txs, fees, p, "exact"), p, fees, txs)
