"""TOML run configuration with strict key checking."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .mechanism import GasConfig, ResourceBounds, SyntheticProjection, safety_violations
from .sim.chain import Adaptive, Mechanism, MultiDim, OneDim, ScenarioConfig, Synthetic
from .sim.demand import DemandModel
from .sim.experiments import ShockConfig
from .tipping import TippingSpec
from .analysis.distributions import DiscreteDist


class ConfigError(ValueError):
    pass


# allowed keys per section: name -> accepted python types
NUM = (int, float)
LIST = (list,)
SCHEMA: dict[str, dict[str, tuple]] = {
    "": {"seed": (int,), "out_dir": (str,)},
    "mechanism": {"kind": (str,), "caps": LIST, "targets": LIST, "weights": LIST, "gas_cap": NUM,
                  "gas_target": NUM, "matrix": LIST, "synthetic_caps": LIST, "eta": NUM, "clip": NUM,
                  "epoch": (int,)},
    "demand": {"amplitudes": LIST, "elasticities": LIST, "noise": NUM, "tx_size": LIST,
               "bundle_share": NUM, "margin_high": NUM, "margin_low": NUM, "ineligible_ratio": NUM},
    "scenario": {"shock_factor": NUM, "shock_block": (int,), "horizon": (int,), "stability_tol": NUM,
                 "stability_window": (int,), "solver": (str,)},
    "shock": {"m_values": LIST, "runs": (int,), "cap": NUM, "base_price": NUM, "elasticity": NUM,
              "noise": NUM, "shock_factor": NUM, "tx_size": NUM, "ineligible_ratio": NUM,
              "shock_block": (int,), "horizon": (int,), "stability_tol": NUM, "stability_window": (int,),
              "c_values": LIST, "bootstrap_resamples": (int,)},
    "welfare": {"seeds": (int,), "dims": LIST},
    "ratio": {"m_max": (int,), "samples": (int,), "families": LIST},
    "revenue": {"n_values": LIST, "m_values": LIST, "time_budget": NUM, "instances": (int,),
                "dp_n_values": LIST, "dp_capacity": (int,), "dp_time_limit": NUM},
    "reduce": {"instances": (int,), "n_max": (int,), "m_max": (int,), "families": LIST,
               "scales": LIST},
}
TABLE_KEYS = {"families"}
MECHANISMS = ("one_dim", "multi_dim", "synthetic", "adaptive")


@dataclass
class RunConfig:
    raw: dict
    path: Path | None = None
    seed: int = 0
    out_dir: Path | None = None
    notes: list[str] = field(default_factory=list)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc}") from exc
    return parse_config(raw, path)


def parse_config(raw: Mapping[str, Any], path: Path | None = None) -> RunConfig:
    raw = dict(raw)
    check_keys(raw)
    seed = int(raw.get("seed", 0))
    if not 0 <= seed < 2**64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    out_dir = Path(raw["out_dir"]) if "out_dir" in raw else None
    cfg = RunConfig(raw, path, seed, out_dir)
    # build every present section once so errors surface before any run
    if "mechanism" in raw:
        mech = build_mechanism(raw["mechanism"])
        if "demand" in raw:
            demand = build_demand(raw["demand"])
            if demand.dims != _resource_count(mech):
                raise ConfigError(f"demand: {demand.dims} resources but mechanism has {_resource_count(mech)}")
            if "scenario" in raw:
                build_scenario(cfg)
    elif "demand" in raw or "scenario" in raw:
        raise ConfigError("demand/scenario sections need a [mechanism] section")
    if "shock" in raw:
        build_shock_configs(raw["shock"])
    if "ratio" in raw:
        build_ratio_families(raw["ratio"])
    if "reduce" in raw:
        build_tipping_specs(raw["reduce"])
    return cfg


def check_keys(raw: Mapping[str, Any]) -> None:
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in SCHEMA or key == "":
                raise ConfigError(f"unknown section [{key}]")
            allowed = SCHEMA[key]
            for sub, v in value.items():
                if sub not in allowed:
                    raise ConfigError(f"[{key}] unknown key '{sub}'")
                _check_type(f"{key}.{sub}", v, allowed[sub])
        else:
            if key not in SCHEMA[""]:
                raise ConfigError(f"unknown top-level key '{key}'")
            _check_type(key, value, SCHEMA[""][key])


def _check_type(name: str, value, types: tuple) -> None:
    if isinstance(value, bool) or not isinstance(value, types):
        raise ConfigError(f"{name}: expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")


def _resource_count(mech: Mechanism) -> int:
    from .sim.chain import resource_count
    return resource_count(mech)


def build_mechanism(sec: Mapping[str, Any]) -> Mechanism:
    kind = sec.get("kind")
    if kind not in MECHANISMS:
        raise ConfigError(f"mechanism.kind: expected one of {MECHANISMS}, got {kind!r}")
    try:
        bounds = ResourceBounds(tuple(sec["caps"]), tuple(sec["targets"]) if "targets" in sec else None) \
            if "caps" in sec else None
        if kind == "multi_dim":
            if bounds is None:
                raise ConfigError("mechanism.caps: required for multi_dim")
            return MultiDim(bounds)
        if kind == "synthetic":
            if "matrix" not in sec or "synthetic_caps" not in sec:
                raise ConfigError("mechanism: synthetic needs 'matrix' and 'synthetic_caps'")
            proj = SyntheticProjection(tuple(tuple(r) for r in sec["matrix"]), tuple(sec["synthetic_caps"]))
            if bounds is not None and not proj.is_safe(bounds):
                raise ConfigError("mechanism: synthetic caps do not cover every resource cap")
            return Synthetic(proj, bounds)
        if "weights" not in sec:
            raise ConfigError(f"mechanism.weights: required for {kind}")
        if "gas_cap" in sec:
            gas = GasConfig(tuple(sec["weights"]), sec["gas_cap"], sec.get("gas_target"))
        elif bounds is not None:
            gas = GasConfig.tightest(tuple(sec["weights"]), bounds)
        else:
            raise ConfigError("mechanism.gas_cap: required when caps are absent")
        if bounds is not None:
            if len(gas.weights) != bounds.dims:
                raise ConfigError("mechanism: weights and caps differ in length")
            bad = safety_violations(gas, bounds)
            if bad:
                desc = ", ".join(f"resource {i} (w*G = {gas.weights[i] * bounds.caps[i]:g})" for i in bad)
                raise ConfigError(f"mechanism.gas_cap: {gas.gas_cap:g} exceeds the cap of {desc}")
        if kind == "adaptive":
            if bounds is None:
                raise ConfigError("mechanism.caps: required for adaptive")
            return Adaptive(gas, bounds, sec.get("eta", 0.01), sec.get("clip", 1.05), sec.get("epoch", 7200))
        return OneDim(gas, bounds)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"mechanism: {exc}") from exc


def build_demand(sec: Mapping[str, Any]) -> DemandModel:
    try:
        return DemandModel.from_dict(sec)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"demand: {exc}") from exc


def build_scenario(cfg: RunConfig) -> ScenarioConfig:
    raw = cfg.raw
    mech = build_mechanism(raw["mechanism"])
    before = build_demand(raw["demand"])
    sec = dict(raw.get("scenario", {}))
    try:
        return ScenarioConfig(mech, before, before.scaled(sec.get("shock_factor", 2.0)),
                              sec.get("shock_block", 10), sec.get("horizon", 200),
                              sec.get("stability_tol", 1e-3), sec.get("stability_window", 3),
                              cfg.seed, sec.get("solver", "greedy"))
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def build_shock_configs(sec: Mapping[str, Any]) -> list[ShockConfig]:
    fields = {k: v for k, v in sec.items() if k not in ("m_values", "runs", "c_values", "bootstrap_resamples")}
    out = []
    try:
        for m in sec.get("m_values", [2, 4, 8]):
            out.append(ShockConfig(m=int(m), **fields))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"shock: {exc}") from exc
    for c in sec.get("c_values", [0.5, 1.0, 2.0]):
        if not c > 0:
            raise ConfigError("shock.c_values: every c must be positive")
    return out


def build_ratio_families(sec: Mapping[str, Any]) -> list[DiscreteDist]:
    fams = sec.get("families")
    if fams is None:
        from .analysis.distributions import default_families
        return default_families()
    try:
        return [DiscreteDist(f["family"], {k: float(v) for k, v in f.get("params", {}).items()}) for f in fams]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"ratio.families: {exc}") from exc


def build_tipping_specs(sec: Mapping[str, Any]) -> list[TippingSpec]:
    fams = sec.get("families")
    if fams is None:
        return default_tipping_specs()
    try:
        return [TippingSpec.from_dict(f) for f in fams]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"reduce.families: {exc}") from exc


def default_tipping_specs() -> list[TippingSpec]:
    return [TippingSpec.linear(0.5), TippingSpec.power(1.0, 2.0), TippingSpec.saturating(1.0, 1.0)]
