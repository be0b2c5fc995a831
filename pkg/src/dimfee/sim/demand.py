"""Constant-elasticity demand and the mempool generator.

Eligible consumption of resource i is D_i(p_i) = A_i * p_i ** -eps_i, where p_i
is the per-unit price of resource i under the active mechanism.  With no noise
the generator hits D_i exactly: transaction sizes are drawn until the
cumulative volume reaches the target and the last one is trimmed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..mechanism import BaseFeeState, Mempool


@dataclass(frozen=True)
class DemandModel:
    amplitudes: tuple[float, ...]
    elasticities: tuple[float, ...]
    noise: float = 0.0
    # mean consumption of a single transaction, per resource
    tx_size: tuple[float, ...] | None = None
    # fraction of the binding volume carried by multi-resource bundles
    bundle_share: float = 0.0
    margin_high: float = 3.0
    margin_low: float = 0.5
    # expected ineligible transactions per eligible one
    ineligible_ratio: float = 0.5

    def __post_init__(self) -> None:
        amps = tuple(float(a) for a in self.amplitudes)
        eps = tuple(float(e) for e in self.elasticities)
        if not amps or len(amps) != len(eps):
            raise ValueError("amplitudes and elasticities must be non-empty and equally long")
        if any(not (a > 0 and math.isfinite(a)) for a in amps):
            raise ValueError("amplitudes must be positive")
        if any(not (e > 0 and math.isfinite(e)) for e in eps):
            raise ValueError("elasticities must be positive")
        size = tuple(1.0 for _ in amps) if self.tx_size is None else tuple(float(s) for s in self.tx_size)
        if len(size) != len(amps) or any(s <= 0 for s in size):
            raise ValueError("tx_size needs one positive entry per resource")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if not 0 <= self.bundle_share <= 1:
            raise ValueError("bundle_share must lie in [0, 1]")
        if not (0 <= self.margin_low < 1 < self.margin_high):
            raise ValueError("margins must satisfy 0 <= low < 1 < high")
        if self.ineligible_ratio < 0:
            raise ValueError("ineligible_ratio must be nonnegative")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "elasticities", eps)
        object.__setattr__(self, "tx_size", size)

    @property
    def dims(self) -> int:
        return len(self.amplitudes)

    def demand(self, prices: Sequence[float]) -> np.ndarray:
        """Noise-free eligible consumption per resource."""
        p = np.asarray(prices, dtype=float)
        return np.asarray(self.amplitudes) * p ** -np.asarray(self.elasticities)

    def scaled(self, factor: float | Sequence[float]) -> "DemandModel":
        f = np.broadcast_to(np.asarray(factor, dtype=float), (self.dims,))
        return replace(self, amplitudes=tuple(np.asarray(self.amplitudes) * f))

    def to_dict(self) -> dict:
        return {"amplitudes": list(self.amplitudes), "elasticities": list(self.elasticities),
                "noise": self.noise, "tx_size": list(self.tx_size), "bundle_share": self.bundle_share,
                "margin_high": self.margin_high, "margin_low": self.margin_low,
                "ineligible_ratio": self.ineligible_ratio}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DemandModel":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def effective_prices(fees: BaseFeeState, price_map: np.ndarray | None, m: int) -> np.ndarray:
    """Per-unit price of each real resource: fees @ price_map (identity when k = m)."""
    f = np.asarray(fees.fees, dtype=float)
    if price_map is None:
        if len(f) != m:
            raise ValueError(f"{len(f)} fees for {m} resources and no price map")
        return f
    return f @ np.asarray(price_map, dtype=float)


def _fill(rng: np.random.Generator, volume: float, mean: float) -> np.ndarray:
    """Sizes with mean ``mean`` whose sum is exactly ``volume`` (last one trimmed)."""
    if volume <= 0:
        return np.zeros(0)
    out = []
    total = 0.0
    while True:
        batch = mean * rng.uniform(0.5, 1.5, size=int(1.2 * (volume - total) / mean) + 8)
        csum = total + np.cumsum(batch)
        hit = np.searchsorted(csum, volume)
        if hit < len(batch):
            out.append(batch[:hit])
            prior = total + (float(np.sum(batch[:hit])) if hit else 0.0)
            last = volume - prior
            if last > 0:
                out.append(np.array([last]))
            break
        out.append(batch)
        total = float(csum[-1])
    sizes = np.concatenate(out)
    return sizes[sizes > 0]


def generate_mempool(model: DemandModel, fees: BaseFeeState, rng: np.random.Generator,
                     price_map: np.ndarray | None = None, id_start: int = 0) -> Mempool:
    """Draw one block's worth of pending transactions at the given fees.

    Volumes V_i = D_i(p_i) * eta_i with eta_i lognormal of mean one.  A
    ``bundle_share`` of the binding volume is carried by transactions that
    consume every resource in proportion to ``tx_size``; the rest comes from
    single-resource transactions.  Eligible transactions get value
    base_cost * U(1, margin_high); ineligible ones get U(margin_low, 1), so
    their bids fall short of the base fee.  Bids are truthful.
    """
    m = model.dims
    prices = effective_prices(fees, price_map, m)
    sigma = model.noise
    eta = np.exp(sigma * rng.standard_normal(m) - 0.5 * sigma**2) if sigma > 0 else np.ones(m)
    volume = model.demand(prices) * eta
    u = np.asarray(model.tx_size)

    shapes = []  # (n, m) consumption blocks
    if model.bundle_share > 0:
        scale = model.bundle_share * float(np.min(volume / u))
        s = _fill(rng, scale, 1.0)
        shapes.append(np.outer(s, u))
        volume = np.maximum(volume - scale * u, 0.0)
    for i in range(m):
        s = _fill(rng, float(volume[i]), float(u[i]))
        block = np.zeros((len(s), m))
        block[:, i] = s
        shapes.append(block)
    eligible = np.vstack(shapes) if shapes else np.zeros((0, m))
    n_el = len(eligible)

    n_in = int(rng.poisson(model.ineligible_ratio * n_el)) if n_el else 0
    if n_in:
        kinds = rng.integers(0, m + (1 if model.bundle_share > 0 else 0), size=n_in)
        sizes = rng.uniform(0.5, 1.5, size=n_in)
        inel = np.zeros((n_in, m))
        single = kinds < m
        inel[np.flatnonzero(single), kinds[single]] = sizes[single] * u[kinds[single]]
        inel[~single] = np.outer(sizes[~single], u)
    else:
        inel = np.zeros((0, m))

    cons = np.vstack([eligible, inel])
    base = cons @ prices
    margins = np.concatenate([rng.uniform(1.0, model.margin_high, size=n_el),
                              rng.uniform(model.margin_low, 1.0, size=n_in)])
    values = base * margins
    # keep eligible transactions eligible after rounding
    values[:n_el] = np.maximum(values[:n_el], base[:n_el])
    ids = np.arange(id_start, id_start + len(cons), dtype=np.int64)
    return Mempool(ids, values, values.copy(), cons)
