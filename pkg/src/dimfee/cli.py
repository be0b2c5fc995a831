"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 a checked
property failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bench
from .analysis.ratio import tail_probability, theoretical_ratio_lower_bound
from .analysis.report import emit_ratio_curve, read_curve_csv, summarize_trace, to_json
from .config import (
    ConfigError,
    RunConfig,
    build_mechanism,
    build_ratio_families,
    build_scenario,
    build_shock_configs,
    build_demand,
    build_tipping_specs,
    load_config,
    parse_config,
)
from .sim.chain import find_stable_prices, run_scenario
from .sim.experiments import REFERENCES, shock_experiment, welfare_sweep

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_PROPERTY = 0, 1, 2, 3
log = logging.getLogger("dimfee")


class OutputExists(ConfigError):
    pass


def _out_dir(args, cfg: RunConfig, name: str) -> Path:
    out = Path(args.out_dir) if args.out_dir else (cfg.out_dir or Path("out")) / name
    if out.exists() and any(out.iterdir()) and not args.force:
        raise OutputExists(f"{out} exists and is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _load(args) -> RunConfig:
    if args.config is None:
        cfg = parse_config({})
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    return cfg


def cmd_validate(args) -> int:
    """Check a configuration file without running anything."""
    if args.config is None:
        raise ConfigError("validate needs --config")
    cfg = _load(args)
    sections = sorted(k for k, v in cfg.raw.items() if isinstance(v, dict))
    print(f"{cfg.path}: valid ({', '.join(sections) or 'no sections'})")
    return EXIT_OK


def cmd_stable(args) -> int:
    """Print the stable base fees for the configured mechanism and demand."""
    cfg = _load(args)
    if "mechanism" not in cfg.raw or "demand" not in cfg.raw:
        raise ConfigError("stable needs [mechanism] and [demand] sections")
    mech = build_mechanism(cfg.raw["mechanism"])
    demand = build_demand(cfg.raw["demand"])
    fees = find_stable_prices(demand, mech)
    print(json.dumps({"mechanism": mech.kind, "fees": list(fees.fees)}, indent=2))
    return EXIT_OK


def shock_report(samples, c_values, n_resamples: int) -> list[dict]:
    """Ratio against the bound at estimated (p, delta), for both one-dimensional references."""
    rows = []
    for ref in REFERENCES:
        z = samples.reference(ref)
        if len(z) == 0:
            continue
        lo, hi = samples.ratio_ci(ref, n_resamples=n_resamples)
        delta = samples.stat_distance(ref)
        for c in c_values:
            p = tail_probability(z, c)
            if p > delta and p + delta < 1:
                bound, vacuous = theoretical_ratio_lower_bound(c, p, delta, samples.config.m), False
            else:
                # outside the bound's hypotheses the only valid statement is Ratio >= 0
                bound, vacuous = 0.0, True
            rows.append({"m": samples.config.m, "reference": ref, "c": c, "runs": samples.n_runs,
                         "unstabilized": samples.unstabilized, "mean_z": samples.mean_z(ref),
                         "mean_z_m": samples.mean_z_m, "ratio": samples.ratio(ref), "ci_lo": lo, "ci_hi": hi,
                         "p_hat": p, "delta_hat": delta, "bound": bound, "vacuous": vacuous,
                         "pass": bool(lo >= bound)})
    return rows


def cmd_shock(args) -> int:
    """Run the demand-shock experiment and compare the ratio with its lower bound."""
    cfg = _load(args)
    sec = cfg.section("shock")
    configs = build_shock_configs(sec)
    runs = int(sec.get("runs", 500))
    c_values = [float(c) for c in sec.get("c_values", [0.5, 1.0, 2.0])]
    n_boot = int(sec.get("bootstrap_resamples", 2000))
    out = _out_dir(args, cfg, "shock")
    report = []
    for sc in configs:
        log.info("shock experiment m=%d, %d runs", sc.m, runs)
        samples = shock_experiment(sc, runs, cfg.seed, args.workers)
        header = ["run", "z", "z_single"] + [f"z_{i}" for i in range(sc.m)] + ["z_max"]
        rows = [[j, int(samples.z[j]), int(samples.z_single[j])] + [int(x) for x in samples.z_i[j]]
                + [int(samples.z_m[j])] for j in range(len(samples.z))]
        _write_csv(out / f"shock_m{sc.m}.csv", header, rows)
        report += shock_report(samples, c_values, n_boot)
    if "scenario" in cfg.raw:
        scen = build_scenario(cfg)
        trace = run_scenario(scen)
        (out / "trace.csv").write_text(trace.to_csv())
        summary = summarize_trace(trace, scen.shock_block, scen.stability_tol, scen.stability_window)
        (out / "trace_summary.json").write_text(to_json(summary))
    ok = all(r["pass"] for r in report)
    (out / "shock_report.json").write_text(to_json({"rows": report, "verdict": "PASS" if ok else "FAIL"}))
    for r in report:
        print(f"m={r['m']} ref={r['reference']:9s} c={r['c']:<4g} ratio={r['ratio']:.3f} "
              f"ci=[{r['ci_lo']:.3f},{r['ci_hi']:.3f}] p={r['p_hat']:.3f} delta={r['delta_hat']:.3f} "
              f"bound={r['bound']:.3f}{' (vacuous)' if r['vacuous'] else ''} {'PASS' if r['pass'] else 'FAIL'}")
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_welfare(args) -> int:
    """Compare one- and multi-dimensional block welfare over many seeds."""
    cfg = _load(args)
    sec = cfg.section("welfare")
    n = int(sec.get("seeds", 100))
    dims = [int(m) for m in sec.get("dims", [2, 3])]
    out = _out_dir(args, cfg, "welfare")
    seeds = [int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(n, dtype=np.uint32)]
    sweep = welfare_sweep(seeds, dims)
    rows = []
    for m, seed, o in sweep.rows:
        rows.append([m, seed, _fmt(o.w1), _fmt(o.wm), len(o.block_1.tx_ids), len(o.block_m.tx_ids), o.shared,
                     int(o.strict_extension), int(o.preconditions_ok), int(o.dominates), "; ".join(o.flags)])
    _write_csv(out / "welfare.csv", ["m", "seed", "w1", "wm", "n1", "nm", "shared", "strict_extension",
                                     "preconditions_ok", "dominates", "flags"], rows)
    verdict = "PASS" if sweep.verdict else "FAIL"
    valid = sweep.valid
    summary = {"runs": len(sweep.rows), "rejected": sweep.rejected,
               "weak_dominance": sum(o.wm >= o.w1 for _, _, o in valid),
               "strict_extension": sum(o.strict_extension for _, _, o in valid),
               "strict_dominance": sum(o.strict_extension and o.wm > o.w1 for _, _, o in valid),
               "verdict": verdict}
    (out / "welfare.json").write_text(to_json(summary))
    print(f"welfare dominance: {verdict} ({summary['weak_dominance']}/{len(valid)} weak, "
          f"{summary['strict_dominance']}/{summary['strict_extension']} strict, {sweep.rejected} rejected)")
    return EXIT_OK if sweep.verdict else EXIT_PROPERTY


def cmd_ratio(args) -> int:
    """Write expectation-ratio curves for the configured distributions."""
    cfg = _load(args)
    sec = cfg.section("ratio")
    dists = build_ratio_families(sec)
    m_max = int(sec.get("m_max", 16))
    samples = int(sec.get("samples", 100_000))
    out = _out_dir(args, cfg, "ratio")
    written = emit_ratio_curve(dists, range(1, m_max + 1), out, samples, cfg.seed)
    ok = True
    cells = covered = 0
    for path in written:
        if path.suffix != ".csv":
            continue
        rows = read_curve_csv(path)
        ex = [r["exact"] for r in rows]
        mono = rows[0]["exact"] == 1.0 and all(b > a for a, b in zip(ex, ex[1:]))
        ok &= mono
        cells += len(rows)
        covered += sum(r["ci_lo"] <= r["exact"] <= r["ci_hi"] for r in rows)
        print(f"{path.name}: {'increasing' if mono else 'NOT increasing'}")
    coverage = covered / cells if cells else 0.0
    print(f"Monte Carlo coverage {covered}/{cells} = {coverage:.3f}")
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_revenue(args) -> int:
    """Benchmark the knapsack solvers over (n, m)."""
    cfg = _load(args)
    sec = cfg.section("revenue")
    out = _out_dir(args, cfg, "revenue")
    rows = bench.revenue_benchmark([int(n) for n in sec.get("n_values", [50, 100, 200])],
                                   [int(m) for m in sec.get("m_values", [1, 2, 3, 4, 6, 8])],
                                   int(sec.get("instances", 3)), float(sec.get("time_budget", 10.0)), cfg.seed)
    header = ["n", "m", "instance", "solver", "status", "seconds", "value", "nodes", "gap"]
    # wall-clock seconds stay out of the deterministic CSV and go to a separate timing file
    _write_csv(out / "revenue.csv", [h for h in header if h != "seconds"],
               [[_fmt(getattr(r, h)) for h in header if h != "seconds"] for r in rows])
    dp_limit = float(sec.get("dp_time_limit", 1.0))
    dp_rows = bench.dp_benchmark([int(n) for n in sec.get("dp_n_values", [1000, 5000, 10000])],
                                 int(sec.get("dp_capacity", 1000)), cfg.seed)
    _write_csv(out / "revenue_dp.csv", ["n", "capacity", "value"],
               [[r.n, int(sec.get("dp_capacity", 1000)), _fmt(r.value)] for r in dp_rows])
    _write_csv(out / "revenue_timing.csv", ["n", "m", "instance", "solver", "seconds"],
               [[r.n, r.m, r.instance, r.solver, _fmt(r.seconds)] for r in rows + dp_rows])
    growth = bench.node_growth(rows)
    dp_ok = all(r.seconds < dp_limit for r in dp_rows)
    (out / "revenue.json").write_text(to_json({"median_nodes": {str(n): {str(m): v for m, v in ms.items()}
                                                                for n, ms in growth.items()},
                                               "budget_exhausted": sum(r.status != "ok" for r in rows),
                                               "dp_under_limit": dp_ok}))
    print("median exact-solver nodes by (n, m):")
    for n, ms in growth.items():
        print(f"  n={n}: " + "  ".join(f"m={m}:{int(v)}" for m, v in ms.items()))
    print(f"1-D DP under {dp_limit:g}s on all {len(dp_rows)} instances: {dp_ok}")
    return EXIT_OK if dp_ok else EXIT_PROPERTY


def cmd_reduce(args) -> int:
    """Check the knapsack-to-revenue reduction on random instances."""
    cfg = _load(args)
    sec = cfg.section("reduce")
    specs = build_tipping_specs(sec)
    out = _out_dir(args, cfg, "reduce")
    checks = bench.reduction_suite(int(sec.get("instances", 200)), specs, cfg.seed, int(sec.get("n_max", 12)),
                                   int(sec.get("m_max", 3)), [float(c) for c in sec.get("scales", [0.01, 1.0, 100.0])])
    header = ["index", "family", "n", "m", "mdk_set", "rm_set", "equivalent", "brute_force_ok",
              "tips_proportional", "scaling_ok", "passed"]
    _write_csv(out / "reduce.csv", header, [[c.index, c.family, c.n, c.m, " ".join(map(str, c.mdk_set)),
                                             " ".join(map(str, c.rm_set)), int(c.equivalent), int(c.brute_force_ok),
                                             int(c.tips_proportional), int(c.scaling_ok), int(c.passed)]
                                            for c in checks])
    passed = sum(c.passed for c in checks)
    ok = passed == len(checks)
    (out / "reduce.json").write_text(to_json({"checks": len(checks), "passed": passed,
                                              "verdict": "PASS" if ok else "FAIL"}))
    print(f"reduction equivalence: {passed}/{len(checks)} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_PROPERTY


COMMANDS = {"validate": cmd_validate, "stable": cmd_stable, "shock": cmd_shock, "welfare": cmd_welfare,
            "ratio": cmd_ratio, "revenue": cmd_revenue, "reduce": cmd_reduce}


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    # flags are accepted before or after the subcommand; the subcommand copy must not reset them
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", type=Path, default=d(None), help="TOML run configuration")
    p.add_argument("--seed", type=int, default=d(None), help="master seed, overrides the config")
    p.add_argument("--out-dir", type=Path, default=d(None), help="output directory")
    p.add_argument("--force", action="store_true", default=d(False),
                   help="allow writing into a non-empty output directory")
    p.add_argument("--workers", type=int, default=d(1), help="parallel worker processes")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dimfee", description="one- vs multi-dimensional fee mechanism laboratory")
    _add_common(parser, False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        _add_common(sp, True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any failure inside a run maps to one exit code
        log.debug("run failed", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
