"""Acceptance run: one PASS/FAIL line per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed to the
terminal) or directly with ``python tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest
from scipy.optimize import linprog

from dimfee.allocator import KnapsackInstance, solve_1d_dp, solve_1d_fptas, solve_bruteforce, solve_mdk_exact
from dimfee.analysis.distributions import default_families
from dimfee.analysis.ratio import exact_ratio_iid, mc_ratio_iid, tail_probability, theoretical_ratio_lower_bound
from dimfee.analysis.report import ratio_curve
from dimfee.bench import dp_benchmark, node_growth, reduction_suite, revenue_benchmark
from dimfee.config import default_tipping_specs
from dimfee.mechanism import BaseFeeState, GasConfig, ResourceBounds, max_consumption, update_base_fee_1d, \
    update_base_fee_md
from dimfee.sim.experiments import REFERENCES, ShockConfig, shock_experiment, welfare_sweep

SEED = 20240611
_capman = None


@pytest.fixture(autouse=True)
def _terminal(request):
    global _capman
    _capman = request.config.pluginmanager.getplugin("capturemanager")
    yield
    _capman = None


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    if _capman is not None:
        with _capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    return ok


def test_criterion_1_base_fee_dynamics():
    T = 50.0
    up = update_base_fee_1d(100, 2 * T, T)
    down = update_base_fee_1d(100, 0, T)
    rng = np.random.default_rng(SEED)
    agree = True
    for _ in range(1000):
        m = int(rng.integers(1, 6))
        caps = rng.uniform(1, 100, m)
        b = ResourceBounds(tuple(caps))
        fees = rng.uniform(1e-3, 1e3, m)
        cons = rng.uniform(0, 1, m) * caps
        out = update_base_fee_md(BaseFeeState(tuple(fees)), cons, b).fees
        agree &= out == tuple(update_base_fee_1d(r, c, t) for r, c, t in zip(fees, cons, b.targets))
    ok = up == 112.5 and down == 87.5 and agree
    assert report(1, ok, f"r(100, 2T)={up}, r(100, 0)={down}, per-coordinate agreement on 1000 draws: {agree}")


def test_criterion_2_welfare_dominance():
    t0 = time.perf_counter()
    sweep = welfare_sweep(range(100), (2, 3))
    dt = time.perf_counter() - t0
    rows = [o for _, _, o in sweep.rows]
    weak = sum(o.wm >= o.w1 for o in rows)
    ext = [o for o in rows if o.strict_extension]
    strict = sum(o.wm > o.w1 for o in ext)
    ok = sweep.rejected == 0 and weak == len(rows) and strict == len(ext) and dt < 60
    assert report(2, ok, f"W^m >= W^1 in {weak}/{len(rows)} runs (100 seeds x m in {{2,3}}), "
                         f"W^m > W^1 in {strict}/{len(ext)} strict extensions, "
                         f"{sweep.rejected} precondition failures, {dt:.1f}s")


def test_criterion_3_expectation_ratio_bound():
    t0 = time.perf_counter()
    lines = []
    ok = True
    vacuous = total = 0
    for m in (2, 4, 8):
        s = shock_experiment(ShockConfig(m=m), 500, seed=SEED)
        for ref in REFERENCES:
            z = s.reference(ref)
            lo, hi = s.ratio_ci(ref)
            delta = s.stat_distance(ref)
            for c in (0.5, 1.0, 2.0):
                p = tail_probability(z, c)
                total += 1
                if p > delta and p + delta < 1:
                    bound = theoretical_ratio_lower_bound(c, p, delta, m)
                    tag = ""
                else:
                    bound, tag = 0.0, " (vacuous: p<=delta)"
                    vacuous += 1
                passed = lo >= bound
                ok &= passed
                lines.append(f"    m={m} ref={ref:9s} c={c:<3g} ratio={s.ratio(ref):.3f} CI=[{lo:.3f},{hi:.3f}] "
                             f"p={p:.3f} delta={delta:.3f} bound={bound:.3f}{tag} {'ok' if passed else 'VIOLATED'}")
        lines.append(f"    m={m}: {s.n_runs} runs, {s.unstabilized} unstabilized and excluded")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    report(3, ok, f"bootstrap CI lower edge >= bound in every cell: {ok}; {vacuous}/{total} cells have "
                  f"p<=delta (bound 0); {dt:.0f}s\n" + "\n".join(lines))
    assert ok


def test_criterion_4_limit_example():
    vals = {p: theoretical_ratio_lower_bound(2, p, 0.0, 64) for p in (0.05, 0.2)}
    errs = {p: abs(v - 3) / 3 for p, v in vals.items()}
    ok = all(e <= 0.01 for e in errs.values())
    detail = ", ".join(f"p={p}: {v:.5f} ({100 * errs[p]:.2f}% from 3)" for p, v in vals.items())
    assert report(4, ok, detail + ("" if ok else "; m=64 is too small for p=0.05, (1-p)^63 = 0.039"))


def test_criterion_5_ratio_curves():
    t0 = time.perf_counter()
    ok = True
    cells = covered = 0
    parts = []
    for dist in default_families():
        curve = ratio_curve(dist, range(1, 17), 100_000, SEED)
        ex = [p.exact for p in curve.points]
        inc = ex[0] == 1.0 and all(b > a for a, b in zip(ex, ex[1:]))
        ok &= inc
        cov = sum(p.ci_lo <= p.exact <= p.ci_hi for p in curve.points)
        cells += len(curve.points)
        covered += cov
        parts.append(f"{dist.family}: increasing={inc}, Ratio_16={ex[-1]:.3f}, MC cover {cov}/16")
    g = default_families()[0]
    exact2 = exact_ratio_iid(g, 2)
    mc2 = mc_ratio_iid(g, 2, 100_000, SEED)
    ok &= abs(exact2 - 4 / 3) <= 1e-9 and mc2.covers(4 / 3) and covered / cells >= 0.93
    dt = time.perf_counter() - t0
    ok &= dt < 120
    assert report(5, ok, f"MC coverage {covered}/{cells}={covered / cells:.3f}; Geometric m=2 exact "
                         f"{exact2:.12f}, MC CI [{mc2.ci_low:.4f},{mc2.ci_high:.4f}]; {dt:.0f}s\n    "
                         + "\n    ".join(parts))


def test_criterion_6_solver_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    mdk_ok = dp_ok = 0
    for _ in range(1000):
        n, m = int(rng.integers(0, 16)), int(rng.integers(1, 5))
        inst = KnapsackInstance(rng.integers(1, 41, m).astype(float), rng.integers(0, 51, n).astype(float),
                                rng.integers(0, 16, (n, m)).astype(float))
        mdk_ok += solve_mdk_exact(inst).chosen == solve_bruteforce(inst).chosen
    for _ in range(1000):
        n = int(rng.integers(0, 16))
        inst = KnapsackInstance(rng.integers(1, 41, 1).astype(float), rng.integers(0, 51, n).astype(float),
                                rng.integers(0, 16, (n, 1)).astype(float))
        dp_ok += solve_1d_dp(inst, 1.0).chosen == solve_bruteforce(inst).chosen
    worst = math.inf
    for _ in range(500):
        n = int(rng.integers(1, 101))
        inst = KnapsackInstance(np.array([float(rng.integers(10, 500))]), rng.uniform(0, 100, n),
                                rng.integers(1, 50, (n, 1)).astype(float))
        opt = solve_1d_dp(inst, 1.0).total_value
        if opt > 0:
            worst = min(worst, solve_1d_fptas(inst, 0.1).total_value / opt)
    dt = time.perf_counter() - t0
    ok = mdk_ok == 1000 and dp_ok == 1000 and worst >= 0.9 and dt < 300
    assert report(6, ok, f"exact B&B = brute force {mdk_ok}/1000, DP = brute force {dp_ok}/1000, "
                         f"worst FPTAS(0.1)/OPT = {worst:.4f} over 500, {dt:.0f}s")


def test_criterion_7_reduction_equivalence():
    t0 = time.perf_counter()
    checks = reduction_suite(200, default_tipping_specs(), SEED, n_max=12, m_max=3, scales=(0.01, 1.0, 100.0))
    dt = time.perf_counter() - t0
    by_family = {}
    for c in checks:
        by_family.setdefault(c.family, []).append(c.passed)
    ok = all(all(v) and len(v) == 200 for v in by_family.values()) and dt < 120
    assert report(7, ok, ", ".join(f"{f}: {sum(v)}/{len(v)}" for f, v in by_family.items())
                  + f" (equivalence, brute force, tip proportionality, scaling C in {{0.01,1,100}}), {dt:.0f}s")


def greedy_packing(w, caps, k):
    """Pour resource-k units into the block until the gas cap or the resource cap binds."""
    gas_cap = min(wi * gi for wi, gi in zip(w, caps))
    return min(caps[k], gas_cap / w[k])


def test_criterion_8_max_consumption():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 7))
        w = rng.uniform(0.1, 10, m)
        caps = rng.uniform(1, 1000, m)
        b = ResourceBounds(tuple(caps))
        cfg = GasConfig.tightest(tuple(w), b)
        for k in range(m):
            got = max_consumption(cfg, b, k)
            c = np.zeros(m)
            c[k] = -1
            lp = -linprog(c, A_ub=[w], b_ub=[cfg.gas_cap], bounds=[(0, g) for g in caps], method="highs").fun
            worst = max(worst, abs(got - greedy_packing(w, caps, k)) / got, abs(got - lp) / got)
    assert report(8, worst <= 1e-9, f"max relative error vs greedy packing and LP over 100 configs: {worst:.2e}")


def test_criterion_9_hardness_illustration():
    t0 = time.perf_counter()
    ms = (1, 2, 3, 4, 6, 8)
    rows = revenue_benchmark([50], ms, 5, 10.0, SEED)
    growth = node_growth(rows)[50]
    exhausted = {m: sum(r.status != "ok" for r in rows if r.solver == "exact" and r.m == m) for m in ms}
    dp_rows = dp_benchmark([1000, 2000, 5000, 10000], 1000, SEED)
    dp_ok = all(r.seconds < 1.0 for r in dp_rows)
    grows = growth[ms[-1]] > growth[ms[0]]
    dt = time.perf_counter() - t0
    table = "  ".join(f"m={m}:{int(growth[m])}{'*' * exhausted[m]}" for m in ms)
    dps = ", ".join(f"n={r.n}: {r.seconds * 1000:.0f}ms" for r in dp_rows)
    assert report(9, grows and dp_ok, f"median B&B nodes at n=50 (5 instances, * = budget exhausted): {table}; "
                                      f"1-D DP {dps}; {dt:.0f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
