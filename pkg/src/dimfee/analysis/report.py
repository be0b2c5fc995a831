"""Ratio curves, file emission and trace summaries."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..sim.chain import ChainTrace, measure_stabilization
from .distributions import FAMILIES, DiscreteDist
from .ratio import exact_ratio_iid, exact_tail_probability, mc_ratio_iid, theoretical_ratio_lower_bound
from .svg import line_chart

CSV_COLUMNS = ("m", "exact", "mc", "ci_lo", "ci_hi", "bound")


@dataclass(frozen=True)
class RatioPoint:
    m: int
    exact: float
    mc: float
    ci_lo: float
    ci_hi: float
    bound: float


@dataclass(frozen=True)
class RatioCurve:
    dist: DiscreteDist
    points: tuple[RatioPoint, ...]

    @property
    def monotone(self) -> bool:
        ex = [p.exact for p in self.points]
        return all(b >= a for a, b in zip(ex, ex[1:]))

    def coverage(self) -> float:
        return float(np.mean([p.ci_lo <= p.exact <= p.ci_hi for p in self.points]))


def cell_seed(seed: int, dist: DiscreteDist, m: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), FAMILIES.index(dist.family), int(m)])


def ratio_curve(dist: DiscreteDist, m_range: Iterable[int], n_samples: int = 100_000, seed: int = 0,
                c: float = 1.0) -> RatioCurve:
    """Exact and sampled ratios per m, plus the bound at the exact tail mass with delta = 0."""
    p = exact_tail_probability(dist, c)
    pts = []
    for m in sorted(m_range):
        mc = mc_ratio_iid(dist, m, n_samples, cell_seed(seed, dist, m))
        bound = theoretical_ratio_lower_bound(c, p, 0.0, m) if 0 < p < 1 else 0.0
        pts.append(RatioPoint(m, exact_ratio_iid(dist, m), mc.estimate, mc.ci_low, mc.ci_high, bound))
    return RatioCurve(dist, tuple(pts))


def write_curve_csv(curve: RatioCurve, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p in curve.points:
            w.writerow([p.m] + [repr(float(getattr(p, k))) for k in CSV_COLUMNS[1:]])


def read_curve_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "m" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def curve_svg(curve: RatioCurve) -> str:
    ms = [p.m for p in curve.points]
    series = {
        "exact": (ms, [p.exact for p in curve.points]),
        "Monte Carlo": (ms, [p.mc for p in curve.points]),
        "lower bound (c=1)": (ms, [p.bound for p in curve.points]),
    }
    return line_chart(series, f"Expectation ratio, {curve.dist.name}", "number of dimensions m",
                      "E[max] / E[Z]", dashed=("lower bound (c=1)",))


def emit_ratio_curve(dists: Sequence[DiscreteDist], m_range: Iterable[int], out_dir: Path | str,
                     n_samples: int = 100_000, seed: int = 0) -> list[Path]:
    """One CSV and one SVG per distribution; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m_range = list(m_range)
    written = []
    for dist in dists:
        curve = ratio_curve(dist, m_range, n_samples, seed)
        csv_path = out / f"ratio_{dist.family}.csv"
        write_curve_csv(curve, csv_path)
        svg_path = out / f"ratio_{dist.family}.svg"
        svg_path.write_text(curve_svg(curve))
        written += [csv_path, svg_path]
    return written


def summarize_trace(trace: ChainTrace, shock_block: int | None = None, tol: float = 1e-3,
                    window: int = 3) -> dict:
    """Totals and per-block means of welfare, tips and burn, plus stabilization times if a shock is given."""
    n = trace.n_blocks
    if n == 0:
        raise ValueError("empty trace")
    out = {"blocks": n}
    for key in ("welfare", "tips", "burn", "gas"):
        col = getattr(trace, key)
        total = math.fsum(col)
        out[f"{key}_total"] = total
        out[f"{key}_mean"] = total / n
    out["consumption_total"] = [math.fsum(trace.consumption[:, i]) for i in range(trace.consumption.shape[1])]
    out["mempool_mean"] = float(np.mean(trace.mempool))
    out["final_fees"] = [float(x) for x in trace.final_fees]
    if shock_block is not None:
        st = measure_stabilization(trace, shock_block, tol, window)
        out["stabilization"] = {"shock_block": shock_block, "tol": tol, "window": window,
                                "per_price": list(st.per_price), "overall": st.overall}
    return out


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
