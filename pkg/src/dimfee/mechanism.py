"""Domain types and pricing/validity rules for one- and multi-dimensional fee markets.

Both mechanisms share the same multiplicative base-fee update

    r_cur = r_pred * (1 + 1/8 * (g_pred - T) / T)

applied either to a single gas price (gas is a weighted sum of resource
consumption) or independently to one price per resource.  Everything here is
a pure function over immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

FEE_FLOOR = 1e-9
ADJUSTMENT_DENOMINATOR = 8.0
# relative slack when comparing float totals against caps
CAP_RTOL = 1e-9


class DimensionError(ValueError):
    """Vector lengths disagree with the configured number of resources."""


ResourceVector = tuple  # tuple[float, ...]


def as_resource_vector(entries: Iterable[float], m: int | None = None) -> tuple[float, ...]:
    vec = tuple(float(x) for x in entries)
    if m is not None and len(vec) != m:
        raise DimensionError(f"expected {m} resource entries, got {len(vec)}")
    for x in vec:
        if not math.isfinite(x) or x < 0:
            raise ValueError(f"resource entries must be finite and nonnegative, got {x!r}")
    return vec


def within_cap(total: float, cap: float) -> bool:
    return total <= cap + CAP_RTOL * max(1.0, abs(cap))


@dataclass(frozen=True)
class Transaction:
    id: int
    value: float
    bid: float
    consumption: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "consumption", as_resource_vector(self.consumption))
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ValueError(f"transaction {self.id}: value must be >= 0")
        if not (self.bid >= 0 and math.isfinite(self.bid)):
            raise ValueError(f"transaction {self.id}: bid must be >= 0")

    @classmethod
    def truthful(cls, id: int, value: float, consumption: Iterable[float]) -> "Transaction":
        return cls(id, value, value, tuple(consumption))

    @property
    def dims(self) -> int:
        return len(self.consumption)

    def to_dict(self) -> dict:
        return {"id": self.id, "value": self.value, "bid": self.bid,
                "consumption": list(self.consumption)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Transaction":
        return cls(int(d["id"]), float(d["value"]), float(d["bid"]), tuple(d["consumption"]))


@dataclass(frozen=True)
class ResourceBounds:
    """Per-resource caps G_i and targets T_i (default T_i = G_i / 2)."""

    caps: tuple[float, ...]
    targets: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        caps = tuple(float(g) for g in self.caps)
        if not caps:
            raise ValueError("at least one resource is required")
        if any(not (g > 0 and math.isfinite(g)) for g in caps):
            raise ValueError("resource caps must be positive and finite")
        targets = tuple(g / 2 for g in caps) if self.targets is None else tuple(float(t) for t in self.targets)
        if len(targets) != len(caps):
            raise DimensionError("caps and targets differ in length")
        for g, t in zip(caps, targets):
            # the update rule needs every valid block to satisfy g_pred <= 2T
            if not (g / 2 <= t <= g):
                raise ValueError(f"target {t} must lie in [cap/2, cap] for cap {g}")
        object.__setattr__(self, "caps", caps)
        object.__setattr__(self, "targets", targets)

    @property
    def dims(self) -> int:
        return len(self.caps)

    def to_dict(self) -> dict:
        return {"caps": list(self.caps), "targets": list(self.targets)}


@dataclass(frozen=True)
class GasConfig:
    weights: tuple[float, ...]
    gas_cap: float
    gas_target: float | None = None

    def __post_init__(self) -> None:
        weights = tuple(float(w) for w in self.weights)
        if not weights or any(not (w > 0 and math.isfinite(w)) for w in weights):
            raise ValueError("gas weights must be positive and finite")
        cap = float(self.gas_cap)
        if not (cap > 0 and math.isfinite(cap)):
            raise ValueError("gas cap must be positive")
        target = cap / 2 if self.gas_target is None else float(self.gas_target)
        if not (cap / 2 <= target <= cap):
            raise ValueError(f"gas target {target} must lie in [cap/2, cap]")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "gas_cap", cap)
        object.__setattr__(self, "gas_target", target)

    @property
    def dims(self) -> int:
        return len(self.weights)

    @classmethod
    def tightest(cls, weights: Sequence[float], bounds: ResourceBounds) -> "GasConfig":
        """Largest gas cap that still respects every resource cap."""
        if len(weights) != bounds.dims:
            raise DimensionError("weights and bounds differ in length")
        return cls(tuple(weights), min(w * g for w, g in zip(weights, bounds.caps)))

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "gas_cap": self.gas_cap, "gas_target": self.gas_target}


@dataclass(frozen=True)
class BaseFeeState:
    fees: tuple[float, ...]

    def __post_init__(self) -> None:
        fees = tuple(float(r) for r in self.fees)
        if not fees:
            raise ValueError("fee state must have at least one entry")
        for r in fees:
            if not math.isfinite(r) or r < FEE_FLOOR:
                raise ValueError(f"base fee {r!r} below floor {FEE_FLOOR}")
        object.__setattr__(self, "fees", fees)

    def __len__(self) -> int:
        return len(self.fees)

    def __getitem__(self, i: int) -> float:
        return self.fees[i]

    def to_dict(self) -> dict:
        return {"fees": list(self.fees)}


@dataclass(frozen=True)
class Block:
    tx_ids: tuple[int, ...]
    consumption_total: tuple[float, ...]
    gas_total: float = 0.0
    tip_total: float = 0.0
    burn_total: float = 0.0
    value_total: float = 0.0

    def to_dict(self) -> dict:
        return {
            "tx_ids": list(self.tx_ids),
            "consumption_total": list(self.consumption_total),
            "gas_total": self.gas_total,
            "tip_total": self.tip_total,
            "burn_total": self.burn_total,
            "value_total": self.value_total,
        }


@dataclass(frozen=True)
class SyntheticProjection:
    """k synthetic gas-like dimensions, each a nonnegative combination of the m real ones."""

    matrix: tuple[tuple[float, ...], ...]
    synthetic_caps: tuple[float, ...]
    synthetic_targets: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        rows = tuple(as_resource_vector(row) for row in self.matrix)
        if not rows:
            raise ValueError("projection needs at least one row")
        m = len(rows[0])
        if any(len(row) != m for row in rows):
            raise DimensionError("ragged projection matrix")
        if len(rows) > m:
            raise ValueError(f"k={len(rows)} synthetic dimensions exceed m={m}")
        caps = tuple(float(c) for c in self.synthetic_caps)
        if len(caps) != len(rows) or any(c <= 0 for c in caps):
            raise ValueError("need one positive synthetic cap per row")
        targets = tuple(c / 2 for c in caps) if self.synthetic_targets is None else tuple(self.synthetic_targets)
        if len(targets) != len(caps):
            raise DimensionError("synthetic caps and targets differ in length")
        object.__setattr__(self, "matrix", rows)
        object.__setattr__(self, "synthetic_caps", caps)
        object.__setattr__(self, "synthetic_targets", tuple(float(t) for t in targets))

    @property
    def k(self) -> int:
        return len(self.matrix)

    @property
    def m(self) -> int:
        return len(self.matrix[0])

    @property
    def bounds(self) -> ResourceBounds:
        return ResourceBounds(self.synthetic_caps, self.synthetic_targets)

    def is_safe(self, bounds: ResourceBounds) -> bool:
        """Sufficient condition for per-resource safety.

        Resource i is covered when some row s has matrix[s][i] > 0 and
        cap_s <= matrix[s][i] * G_i.
        """
        if bounds.dims != self.m:
            raise DimensionError("projection and bounds differ in m")
        for i, g in enumerate(bounds.caps):
            if not any(row[i] > 0 and within_cap(cap, row[i] * g)
                       for row, cap in zip(self.matrix, self.synthetic_caps)):
                return False
        return True

    def to_dict(self) -> dict:
        return {"matrix": [list(r) for r in self.matrix],
                "synthetic_caps": list(self.synthetic_caps),
                "synthetic_targets": list(self.synthetic_targets)}


def _check_dims(a: Sequence, b: Sequence, what: str) -> None:
    if len(a) != len(b):
        raise DimensionError(f"{what}: length {len(a)} != {len(b)}")


def gas_of(tx: Transaction, cfg: GasConfig) -> float:
    _check_dims(tx.consumption, cfg.weights, "gas_of")
    return math.fsum(w * c for w, c in zip(cfg.weights, tx.consumption))


def base_cost_md(tx: Transaction, fees: BaseFeeState) -> float:
    _check_dims(tx.consumption, fees.fees, "base_cost_md")
    return math.fsum(r * c for r, c in zip(fees.fees, tx.consumption))


def tip_1d(tx: Transaction, fee: BaseFeeState, cfg: GasConfig) -> float:
    """Bid minus gas base fee.  Negative means the transaction is ineligible."""
    if len(fee) != 1:
        raise DimensionError(f"one-dimensional fee expected, got {len(fee)} entries")
    return tx.bid - fee[0] * gas_of(tx, cfg)


def tip_md(tx: Transaction, fees: BaseFeeState) -> float:
    return tx.bid - base_cost_md(tx, fees)


def update_base_fee_1d(r_pred: float, g_pred: float, target: float) -> float:
    if not r_pred > 0:
        raise ValueError(f"previous base fee must be positive, got {r_pred}")
    if not target > 0:
        raise ValueError(f"target must be positive, got {target}")
    if g_pred < 0 or not within_cap(g_pred, 2 * target):
        raise ValueError(f"consumption {g_pred} outside [0, 2T] for T={target}")
    r_cur = r_pred * (1.0 + (g_pred - target) / target / ADJUSTMENT_DENOMINATOR)
    return max(FEE_FLOOR, r_cur)


def update_base_fee_md(fees: BaseFeeState, consumption: Sequence[float],
                       bounds: ResourceBounds) -> BaseFeeState:
    _check_dims(fees.fees, consumption, "update_base_fee_md")
    _check_dims(fees.fees, bounds.caps, "update_base_fee_md")
    for c, g in zip(consumption, bounds.caps):
        if not within_cap(c, g):
            raise ValueError(f"consumption {c} exceeds cap {g}")
    return BaseFeeState(tuple(update_base_fee_1d(r, c, t)
                              for r, c, t in zip(fees.fees, consumption, bounds.targets)))


def _lookup(txs, tx_ids: Iterable[int]) -> list[Transaction]:
    table = txs if isinstance(txs, Mapping) else {tx.id: tx for tx in txs}
    out = []
    for j in tx_ids:
        if j not in table:
            raise KeyError(f"unknown transaction id {j}")
        out.append(table[j])
    return out


def validate_block_1d(block: Block, cfg: GasConfig, fee: BaseFeeState, txs) -> bool:
    members = _lookup(txs, block.tx_ids)
    if len(set(block.tx_ids)) != len(block.tx_ids):
        return False
    gas = math.fsum(gas_of(tx, cfg) for tx in members)
    if not within_cap(gas, cfg.gas_cap):
        return False
    return all(tip_1d(tx, fee, cfg) >= 0 for tx in members)


def validate_block_md(block: Block, bounds: ResourceBounds, fees: BaseFeeState, txs) -> bool:
    _check_dims(fees.fees, bounds.caps, "validate_block_md")
    members = _lookup(txs, block.tx_ids)
    if len(set(block.tx_ids)) != len(block.tx_ids):
        return False
    for i, cap in enumerate(bounds.caps):
        if not within_cap(math.fsum(tx.consumption[i] for tx in members), cap):
            return False
    return all(tip_md(tx, fees) >= 0 for tx in members)


def satisfies_safety(consumption: Sequence[float], bounds: ResourceBounds) -> bool:
    _check_dims(consumption, bounds.caps, "satisfies_safety")
    return all(within_cap(c, g) for c, g in zip(consumption, bounds.caps))


def check_safety_gas_cap(cfg: GasConfig, bounds: ResourceBounds) -> bool:
    """Gas cap must not exceed w_i * G_i for any resource."""
    _check_dims(cfg.weights, bounds.caps, "check_safety_gas_cap")
    return all(cfg.gas_cap <= w * g for w, g in zip(cfg.weights, bounds.caps))


def safety_violations(cfg: GasConfig, bounds: ResourceBounds) -> list[int]:
    _check_dims(cfg.weights, bounds.caps, "safety_violations")
    return [i for i, (w, g) in enumerate(zip(cfg.weights, bounds.caps)) if cfg.gas_cap > w * g]


def max_consumption(cfg: GasConfig, bounds: ResourceBounds, k: int) -> float:
    """Largest total of resource ``k`` (0-based) a single M1 block can carry.

    Requires the gas cap to be the tightest safe one, min_i w_i G_i.
    """
    _check_dims(cfg.weights, bounds.caps, "max_consumption")
    if not 0 <= k < cfg.dims:
        raise IndexError(f"resource index {k} out of range for m={cfg.dims}")
    tightest = min(w * g for w, g in zip(cfg.weights, bounds.caps))
    if not math.isclose(cfg.gas_cap, tightest, rel_tol=1e-12):
        raise ValueError(f"gas cap {cfg.gas_cap} is not min_i w_i*G_i = {tightest}")
    return tightest / cfg.weights[k]


def project_synthetic(p: SyntheticProjection, c: Sequence[float]) -> tuple[float, ...]:
    _check_dims(p.matrix[0], c, "project_synthetic")
    return tuple(math.fsum(a * x for a, x in zip(row, c)) for row in p.matrix)


def update_weights_adaptive(cfg: GasConfig, utilization_ema: Sequence[float], eta: float,
                            clip: float, bounds: ResourceBounds) -> GasConfig:
    """Nudge gas weights toward observed usage, then restore gas-cap safety.

    Each weight moves by the factor 1 + eta*(u_i - 1), limited to
    [1/clip, clip] per call.  If the new weights make the old gas cap unsafe
    the cap (and with it the target) shrinks to min_i w_i G_i.
    """
    _check_dims(cfg.weights, utilization_ema, "update_weights_adaptive")
    _check_dims(cfg.weights, bounds.caps, "update_weights_adaptive")
    if not 0 < eta <= 0.1:
        raise ValueError(f"eta must lie in (0, 0.1], got {eta}")
    if not clip >= 1:
        raise ValueError(f"clip must be >= 1, got {clip}")
    weights = []
    for w, u in zip(cfg.weights, utilization_ema):
        factor = min(clip, max(1.0 / clip, 1.0 + eta * (u - 1.0)))
        weights.append(w * factor)
    target_ratio = cfg.gas_target / cfg.gas_cap
    cap = min(cfg.gas_cap, min(w * g for w, g in zip(weights, bounds.caps)))
    return GasConfig(tuple(weights), cap, cap * target_ratio)


def tip_synthetic(tx: Transaction, fees: BaseFeeState, p: SyntheticProjection) -> float:
    proj = project_synthetic(p, tx.consumption)
    _check_dims(fees.fees, proj, "tip_synthetic")
    return tx.bid - math.fsum(r * x for r, x in zip(fees.fees, proj))


def validate_block_synthetic(block: Block, p: SyntheticProjection, fees: BaseFeeState, txs) -> bool:
    _check_dims(fees.fees, p.synthetic_caps, "validate_block_synthetic")
    members = _lookup(txs, block.tx_ids)
    if len(set(block.tx_ids)) != len(block.tx_ids):
        return False
    projected = [project_synthetic(p, tx.consumption) for tx in members]
    for s, cap in enumerate(p.synthetic_caps):
        if not within_cap(math.fsum(x[s] for x in projected), cap):
            return False
    return all(tip_synthetic(tx, fees, p) >= 0 for tx in members)


class Mempool(Sequence):
    """Transactions stored column-wise; indexing yields :class:`Transaction`.

    The simulator produces hundreds of transactions per block, so the block
    builders work on these arrays directly instead of on objects.
    """

    def __init__(self, ids, values, bids, consumption):
        self.ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        self.values = np.asarray(values, dtype=float).reshape(-1)
        self.bids = np.asarray(bids, dtype=float).reshape(-1)
        self.consumption = np.asarray(consumption, dtype=float)
        n = len(self.ids)
        if self.consumption.ndim != 2 or self.consumption.shape[0] != n:
            raise DimensionError("consumption must be an (n, m) array")
        if len(self.values) != n or len(self.bids) != n:
            raise DimensionError("ids, values and bids must have equal length")
        if n and (self.consumption.min() < 0 or self.values.min() < 0 or self.bids.min() < 0):
            raise ValueError("negative value, bid or consumption in mempool")
        if len(np.unique(self.ids)) != n:
            raise ValueError("duplicate transaction ids in mempool")

    @classmethod
    def from_transactions(cls, txs: Iterable[Transaction], m: int | None = None) -> "Mempool":
        if isinstance(txs, Mempool):
            return txs
        txs = list(txs)
        if txs:
            m = txs[0].dims if m is None else m
            if any(tx.dims != m for tx in txs):
                raise DimensionError("transactions disagree on m")
        elif m is None:
            raise ValueError("m is required for an empty mempool")
        return cls([tx.id for tx in txs], [tx.value for tx in txs], [tx.bid for tx in txs],
                   np.array([tx.consumption for tx in txs], dtype=float).reshape(len(txs), m))

    @property
    def dims(self) -> int:
        return self.consumption.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return Transaction(int(self.ids[i]), float(self.values[i]), float(self.bids[i]),
                           tuple(float(x) for x in self.consumption[i]))

    def by_id(self) -> dict[int, Transaction]:
        return {tx.id: tx for tx in self}

    def subset(self, idx) -> "Mempool":
        idx = np.asarray(idx, dtype=np.int64)
        return Mempool(self.ids[idx], self.values[idx], self.bids[idx], self.consumption[idx])

    @classmethod
    def concat(cls, parts: Sequence["Mempool"], m: int) -> "Mempool":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls([], [], [], np.zeros((0, m)))
        return cls(np.concatenate([p.ids for p in parts]), np.concatenate([p.values for p in parts]),
                   np.concatenate([p.bids for p in parts]), np.vstack([p.consumption for p in parts]))
