from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from dimfee.mechanism import BaseFeeState, GasConfig, Mempool, ResourceBounds, SyntheticProjection, Transaction
from dimfee.sim.chain import (
    Adaptive,
    MultiDim,
    OneDim,
    ScenarioConfig,
    Synthetic,
    find_stable_prices,
    initial_state,
    measure_stabilization,
    price_map,
    run_scenario,
    step_chain,
)
from dimfee.sim.demand import DemandModel, generate_mempool
from dimfee.sim.experiments import (
    ShockConfig,
    clearing_gas_price,
    estimate_stat_distance,
    shock_experiment,
    welfare_experiment,
    welfare_sweep,
)


def eligible_totals(mp, prices):
    tips = mp.bids - mp.consumption @ np.asarray(prices)
    return mp.consumption[tips >= 0].sum(axis=0)


# ---------------------------------------------------------------- demand


def test_noise_free_volume_is_exact():
    model = DemandModel((1000.0, 300.0), (2.0, 1.0), tx_size=(2.0, 0.5), bundle_share=0.3)
    fees = BaseFeeState((2.0, 3.0))
    mp = generate_mempool(model, fees, np.random.default_rng(1))
    assert eligible_totals(mp, fees.fees) == pytest.approx(model.demand(fees.fees), rel=1e-12)
    assert np.all(mp.bids == mp.values)


def test_noisy_volume_mean():
    model = DemandModel((500.0, 200.0), (1.5, 1.0), noise=0.3, tx_size=(3.0, 1.0))
    fees = BaseFeeState((2.0, 1.0))
    rng = np.random.default_rng(2)
    tot = np.mean([eligible_totals(generate_mempool(model, fees, rng), fees.fees) for _ in range(1000)], axis=0)
    assert np.all(np.abs(tot / model.demand(fees.fees) - 1) < 0.05)


def test_unit_elasticity_halving():
    model = DemandModel((400.0, 400.0), (1.0, 2.0))
    base = eligible_totals(generate_mempool(model, BaseFeeState((1.0, 1.0)), np.random.default_rng(0)), (1, 1))
    dbl = eligible_totals(generate_mempool(model, BaseFeeState((2.0, 1.0)), np.random.default_rng(0)), (2, 1))
    assert dbl[0] == pytest.approx(base[0] / 2, rel=1e-12)
    assert dbl[1] == pytest.approx(base[1], rel=1e-12)


def test_vanishing_demand():
    mp = generate_mempool(DemandModel((1e-6,), (1.0,)), BaseFeeState((1.0,)), np.random.default_rng(0))
    assert len(mp) <= 2 and mp.consumption.sum() < 1e-5


def test_demand_validation():
    with pytest.raises(ValueError):
        DemandModel((0.0,), (1.0,))
    with pytest.raises(ValueError):
        DemandModel((1.0,), (1.0,), margin_low=1.2)


# ---------------------------------------------------------------- chain


def test_empty_mempool_decays():
    mech = MultiDim(ResourceBounds((10.0, 10.0)))
    st_, block = step_chain(initial_state(mech, (16.0, 8.0)), [], mech)
    assert block.tx_ids == () and st_.fees.fees == (14.0, 7.0)
    mech1 = OneDim(GasConfig((1.0,), 10.0))
    st1, _ = step_chain(initial_state(mech1, (16.0,)), [], mech1)
    assert st1.fees.fees == (14.0,)


def test_on_target_unchanged():
    mech = MultiDim(ResourceBounds((10.0, 4.0)))
    txs = [Transaction.truthful(0, 100, (5, 0)), Transaction.truthful(1, 100, (0, 2))]
    st_, block = step_chain(initial_state(mech, (1.0, 1.0)), txs, mech, validate=True)
    assert st_.fees.fees == (1.0, 1.0) and block.tx_ids == (0, 1)


@pytest.mark.parametrize("A, eps, T, expect", [(800, 1, 2, 400), (100, 2, 4, 5)])
def test_stable_prices_closed_form(A, eps, T, expect):
    mech = MultiDim(ResourceBounds((2.0 * T,)))
    r = find_stable_prices(DemandModel((float(A),), (float(eps),)), mech).fees[0]
    assert r == pytest.approx(expect, rel=1e-12)


def test_stable_prices_one_dim_and_synthetic():
    model = DemandModel((900.0, 100.0), (2.0, 1.5))
    gas = GasConfig((1.0, 3.0), 120.0)
    r = find_stable_prices(model, OneDim(gas)).fees[0]
    w = np.asarray(gas.weights)
    assert float(w @ model.demand(r * w)) == pytest.approx(gas.gas_target, rel=1e-9)
    proj = SyntheticProjection(((1.0, 1.0),), (120.0,))
    rs = find_stable_prices(model, Synthetic(proj)).fees[0]
    assert float(np.sum(model.demand((rs, rs)))) == pytest.approx(60.0, rel=1e-9)


MODEL2 = DemandModel((800.0, 300.0), (2.0, 1.0), noise=0.05, tx_size=(2.0, 1.0), bundle_share=0.3)
BOUNDS2 = ResourceBounds((100.0, 60.0))
MECHS = [
    MultiDim(BOUNDS2),
    OneDim(GasConfig.tightest((1.0, 1.5), BOUNDS2), BOUNDS2),
    Synthetic(SyntheticProjection(((1.0, 1.0),), (60.0,)), BOUNDS2),
    Adaptive(GasConfig.tightest((1.0, 1.5), BOUNDS2), BOUNDS2, eta=0.1, clip=1.2, epoch=5),
]


@pytest.mark.parametrize("mech", MECHS, ids=lambda m: m.kind)
def test_safety_and_determinism(mech):
    cfg = ScenarioConfig(mech, MODEL2, MODEL2.scaled(2.0), 10, 80, seed=9, keep_blocks=True)
    tr = run_scenario(cfg)
    assert np.all(tr.consumption <= np.asarray(BOUNDS2.caps) * (1 + 1e-9))
    assert tr == run_scenario(cfg)
    assert tr.to_csv() == run_scenario(cfg).to_csv()
    assert tr.to_csv().splitlines()[0].startswith("block,fee_0")


def test_validate_flag_on_every_mechanism():
    for mech in MECHS:
        state = initial_state(mech, find_stable_prices(MODEL2, mech))
        rng = np.random.default_rng(4)
        for _ in range(10):
            mp = generate_mempool(MODEL2, state.fees, rng, price_map(mech, state))
            state, _ = step_chain(state, mp, mech, "exact", validate=True)


@pytest.mark.parametrize("mech", MECHS[:3], ids=lambda m: m.kind)
def test_fixed_point_noise_free(mech):
    quiet = replace(MODEL2, noise=0.0)
    cfg = ScenarioConfig(mech, quiet, quiet, 5, 100, stability_tol=1e-3)
    series = run_scenario(cfg).fee_series()
    assert np.max(np.abs(series / series[0] - 1)) <= 1e-3


def test_no_shock_zero_stabilization():
    quiet = replace(MODEL2, noise=0.0)
    tr = run_scenario(ScenarioConfig(MultiDim(BOUNDS2), quiet, quiet, 5, 40))
    st_ = measure_stabilization(tr, 5, 1e-3, 3)
    assert st_.per_price == (0, 0) and st_.overall == 0


def test_one_dim_shock_monotone_rise():
    model = DemandModel((400.0,), (1.0,))
    mech = OneDim(GasConfig((1.0,), 100.0))
    tr = run_scenario(ScenarioConfig(mech, model, model.scaled(2.0), 5, 200))
    fees = tr.fee_series()[:, 0]
    z = measure_stabilization(tr, 5, 1e-3, 3).overall
    assert z is not None
    seg = fees[5:5 + z + 1]
    assert np.all(np.diff(seg) >= 0)
    assert fees[-1] == pytest.approx(2 * fees[0], rel=1e-2)


def test_measure_stabilization_fixtures():
    assert measure_stabilization(np.full((20, 3), 4.0), 5, 1e-3, 3).per_price == (0, 0, 0)
    one = np.r_[np.ones(5), 1.1 ** np.arange(1, 5), np.full(10, 1.1**4)]
    st1 = measure_stabilization(one, 5, 1e-3, 3)
    assert st1.overall == st1.per_price[0]
    shock = 4
    f = np.ones((30, 2))
    for t in range(shock, 30):
        f[t + 1:, 0] *= 1.05 if t < shock + 2 else 1.0
        f[t + 1:, 1] *= 1.05 if t < shock + 7 else 1.0
    st2 = measure_stabilization(f, shock, 1e-3, 3)
    assert st2.per_price == (2, 7) and st2.overall == 7
    assert measure_stabilization(1.1 ** np.arange(10.0), 2, 1e-3, 3).overall is None


# ---------------------------------------------------------------- statistical distance


def test_stat_distance_examples():
    assert estimate_stat_distance([1, 2, 2, 3], [3, 2, 1, 2]) == 0
    assert estimate_stat_distance([1, 2], [3, 4]) == 1


def test_stat_distance_geometric_oracle():
    # closed form: half the L1 distance between the two pmfs on k >= 1
    exact = 0.5 * sum(abs(0.5 * 0.5 ** (k - 1) - 0.55 * 0.45 ** (k - 1)) for k in range(1, 200))
    rng = np.random.default_rng(7)
    est = estimate_stat_distance(rng.geometric(0.5, 100_000), rng.geometric(0.55, 100_000))
    assert abs(est - exact) < 0.01


# ---------------------------------------------------------------- shock experiments


def test_shock_no_shock_zero():
    cfg = ShockConfig(m=2, noise=0.0, shock_factor=1.0, horizon=30)
    s = shock_experiment(cfg, 1, seed=1)
    assert s.z.tolist() == [0] and s.z_m.tolist() == [0] and s.z_single.tolist() == [0]


def test_shock_reproducible_and_parallel_identical():
    cfg = ShockConfig(m=2, horizon=200)
    a = shock_experiment(cfg, 6, seed=5)
    b = shock_experiment(cfg, 6, seed=5, workers=2)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.z_i, b.z_i) and np.array_equal(a.z_single, b.z_single)
    assert a.mean_z_m == shock_experiment(cfg, 6, seed=5).mean_z_m


def test_shock_max_dominates():
    s = shock_experiment(ShockConfig(m=4, horizon=300), 30, seed=2)
    assert s.mean_z_m >= s.z_i[:, 0].mean()
    assert np.all(s.z_m == s.z_i.max(axis=1))


def test_stabilization_times_uncorrelated():
    s = shock_experiment(ShockConfig(m=2, horizon=300), 200, seed=11)
    r, p = stats.pearsonr(s.z_i[:, 0], s.z_i[:, 1])
    assert p > 0.05, (r, p)


# ---------------------------------------------------------------- welfare


def test_welfare_single_resource_coincides():
    b = ResourceBounds((10.0,))
    g = GasConfig((1.0,), 10.0)
    d = DemandModel((5.0,), (1.0,), tx_size=(0.7,))
    for seed in range(10):
        o = welfare_experiment(seed, b, g, d)
        assert o.preconditions_ok and o.w1 == o.wm


def test_welfare_empty_mempool_flags():
    b = ResourceBounds((10.0, 10.0))
    o = welfare_experiment(0, b, GasConfig.tightest((1, 1), b), DemandModel((5.0, 5.0), (1.0, 1.0)),
                           mempool=Mempool.from_transactions([], m=2))
    assert o.w1 == o.wm == 0 and not o.preconditions_ok


def test_welfare_proportional_bundles():
    # every transaction consumes resources in proportion to the targets
    b = ResourceBounds((40.0, 20.0))
    g = GasConfig.tightest((1.0, 2.0), b)
    d = DemandModel((20.0 * 1.5, 10.0 * 1.5), (1.0, 1.0), tx_size=(2.0, 1.0), bundle_share=1.0)
    for seed in range(100):
        o = welfare_experiment(seed, b, g, d)
        assert o.preconditions_ok and o.wm >= o.w1
        if o.strict_extension:
            assert o.wm > o.w1


def test_welfare_sweep_small():
    sweep = welfare_sweep(range(15), (2, 3))
    assert sweep.verdict and sweep.rejected == 0


def test_clearing_price_separates():
    txs = [Transaction.truthful(j, v, (g,)) for j, (v, g) in enumerate([(10, 2), (6, 2), (3, 2), (1, 2)])]
    mp = Mempool.from_transactions(txs)
    r = clearing_gas_price(mp, GasConfig((1.0,), 8.0))  # T = 4: two best fit
    assert 1.5 < r < 3
