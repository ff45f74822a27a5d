"""Bellman operator properties, value iteration, and both threshold methods."""
import dataclasses

import numpy as np
import pytest

from pfcbess import (ConvergenceError, ExcursionSignModel, MarketParams,
                     PfcEnergyDistribution, ScalarDistribution, StochasticModel,
                     ThresholdPolicy, TransitionMatrix, ValueFunction,
                     band_from_greedy, bellman_operator, build_transition_matrix,
                     one_stage_cost, policy_value, post_event_soc,
                     solve_thresholds_by_roots, solve_thresholds_direct,
                     value_iteration)
from pfcbess.solver import _GridTables


def _market(model, **kw) -> MarketParams:
    return dataclasses.replace(model.market, **kw)


def test_value_function_validation_and_interp():
    with pytest.raises(ValueError):
        ValueFunction(np.array([0.0, 0.3, 1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        ValueFunction(np.linspace(0.1, 1.0, 10), np.zeros(10))
    with pytest.raises(ValueError):
        ValueFunction(np.linspace(0.0, 1.0, 5), np.zeros(4))
    vf = ValueFunction(np.linspace(0.0, 1.0, 5), np.array([0.0, 1.0, 4.0, 9.0, 16.0]))
    assert vf(0.375) == pytest.approx(2.5)
    assert np.allclose(vf(vf.grid), vf.values)
    linear = ValueFunction(np.linspace(0.0, 1.0, 11), 3.0 * np.linspace(0.0, 1.0, 11))
    assert np.allclose(linear.derivative(), 3.0)


def test_transition_matrix_validation():
    grid = np.linspace(0.0, 1.0, 3)
    with pytest.raises(ValueError):
        TransitionMatrix(grid, np.full((3, 3), 0.5))
    with pytest.raises(ValueError):
        TransitionMatrix(grid, np.array([[1.2, -0.2, 0.0]] * 3))
    TransitionMatrix(grid, np.eye(3))


def test_bellman_contraction(canonical_model, rng):
    grid = np.linspace(0.0, 1.0, 101)
    alpha = canonical_model.market.discount
    for _ in range(5):
        h1 = ValueFunction(grid, rng.uniform(-50.0, 50.0, size=101))
        h2 = ValueFunction(grid, rng.uniform(-50.0, 50.0, size=101))
        t1, _ = bellman_operator(h1, canonical_model)
        t2, _ = bellman_operator(h2, canonical_model)
        gap_in = np.abs(h1.values - h2.values).max()
        gap_out = np.abs(t1.values - t2.values).max()
        assert gap_out <= alpha * gap_in + 1e-9


def test_bellman_monotone_and_shift(canonical_model, rng):
    grid = np.linspace(0.0, 1.0, 101)
    alpha = canonical_model.market.discount
    base = rng.uniform(0.0, 40.0, size=101)
    h1 = ValueFunction(grid, base)
    h2 = ValueFunction(grid, base + rng.uniform(0.0, 10.0, size=101))
    t1, _ = bellman_operator(h1, canonical_model)
    t2, _ = bellman_operator(h2, canonical_model)
    assert np.all(t2.values >= t1.values - 1e-9)
    shifted, _ = bellman_operator(ValueFunction(grid, base + 7.0), canonical_model)
    assert np.allclose(shifted.values, t1.values + alpha * 7.0, atol=1e-9)


def test_stage_matrix_matches_quadrature(canonical_model, rng):
    tables = _GridTables(canonical_model, 101)
    for _ in range(15):
        i, j = rng.integers(0, 101, size=2)
        direct = one_stage_cost(float(tables.grid[i]), float(tables.grid[j]),
                                canonical_model)
        assert tables.stage[i, j] == pytest.approx(direct, rel=2e-3, abs=1e-6)


def test_transition_row_point_laws_hand_case(canonical_model):
    # deterministic idle (always reaches the target) and a 1.25 kWh
    # event: absorbing moves +1 cell, delivering lands between cells
    sto = StochasticModel(
        dist_i=ScalarDistribution.point(1.0, units="h"),
        dist_j=ScalarDistribution.point(0.00125, units="h"),
        dist_p_pfc=ScalarDistribution.point(1000.0, units="kW"),
        signs=ExcursionSignModel(0.5),
        energy=PfcEnergyDistribution(ScalarDistribution.point(1.25, units="kWh")))
    model = dataclasses.replace(canonical_model, stochastic=sto)
    chain = build_transition_matrix(ThresholdPolicy(0.5, 0.5), model, n_grid=101)
    row = chain.matrix[50]
    assert row[51] == pytest.approx(0.5, abs=1e-12)
    assert row[48] == pytest.approx(0.5 * 0.5625, abs=1e-12)
    assert row[49] == pytest.approx(0.5 * 0.4375, abs=1e-12)
    assert row.sum() == pytest.approx(1.0, abs=1e-12)


def test_transition_rows_match_monte_carlo(canonical_model):
    policy = ThresholdPolicy(0.55, 0.60)
    n_grid = 101
    chain = build_transition_matrix(policy, canonical_model, n_grid=n_grid)
    grid, delta = chain.grid, 1.0 / (n_grid - 1)
    sto, bat = canonical_model.stochastic, canonical_model.battery
    rng = np.random.default_rng(23)
    n = 1_000_000
    for idx in (0, 30, 56, 100):
        s0 = grid[idx]
        target = policy.clamp(s0)
        i = sto.dist_i.sample(rng, size=n)
        reach = np.minimum(np.abs(target - s0), bat.power_limit_kw * i / bat.capacity_kwh)
        s_mid = s0 + np.sign(target - s0) * reach
        e = sto.energy.sample(rng, size=n)
        q = sto.signs.sample(rng, size=n)
        s_next = post_event_soc(s_mid, q, e, bat)
        # spread each sample linearly over its two bounding knots
        pos = s_next / delta
        lo = np.clip(np.floor(pos).astype(int), 0, n_grid - 2)
        w_hi = pos - lo
        counts = (np.bincount(lo, weights=1.0 - w_hi, minlength=n_grid)
                  + np.bincount(lo + 1, weights=w_hi, minlength=n_grid))
        tv = 0.5 * np.abs(counts / n - chain.matrix[idx]).sum()
        assert tv < 0.02


def test_value_iteration_converges(canonical_model, canonical_vi):
    res = canonical_vi
    alpha = canonical_model.market.discount
    assert res.iterations < 10_000
    assert res.residual <= res.tol * (1.0 - alpha) / (2.0 * alpha)
    assert res.values.values.shape == (201,)
    # the fixed point is reproducible
    again = value_iteration(canonical_model, n_grid=201)
    assert np.array_equal(again.values.values, res.values.values)


def test_value_iteration_raises_on_iteration_cap(canonical_model):
    with pytest.raises(ConvergenceError) as err:
        value_iteration(canonical_model, n_grid=101, max_iter=1)
    assert err.value.iterations == 1
    assert err.value.residual > 0.0


def test_value_function_convex(canonical_vi):
    h = canonical_vi.values.values
    second = np.diff(h, 2)
    assert second.min() >= -1e-6 * np.abs(h).max()


def test_greedy_policy_is_a_band(canonical_vi):
    band, deviation = band_from_greedy(canonical_vi)
    assert deviation == 0
    assert 0.0 < band.low <= band.high < 1.0
    # reference setup: idle band near [0.565, 0.590]
    assert band.low == pytest.approx(0.565, abs=0.0051)
    assert band.high == pytest.approx(0.590, abs=0.0051)


def test_roots_agree_with_greedy(canonical_model, canonical_vi):
    band, _ = band_from_greedy(canonical_vi)
    roots = solve_thresholds_by_roots(canonical_model, canonical_vi.values)
    delta = canonical_vi.values.delta
    assert abs(roots.low - band.low) <= delta + 1e-9
    assert abs(roots.high - band.high) <= delta + 1e-9
    assert roots.low <= roots.high


def test_direct_search_agrees_with_value_iteration(canonical_model):
    n_grid = 101
    direct = solve_thresholds_direct(canonical_model, n_grid=n_grid)
    assert not direct.degenerate
    res = value_iteration(canonical_model, n_grid=n_grid)
    band, _ = band_from_greedy(res)
    delta = 1.0 / (n_grid - 1)
    assert abs(direct.policy.low - band.low) <= 2.0 * delta + 1e-9
    assert abs(direct.policy.high - band.high) <= 2.0 * delta + 1e-9
    # its score is the mean of the policy-fixed values
    vf = policy_value(direct.policy, canonical_model, n_grid=n_grid)
    assert direct.score == pytest.approx(float(np.mean(vf.values)), rel=1e-3)
    assert direct.score == pytest.approx(float(np.mean(res.values.values)), rel=1e-2)


def test_policy_restriction_respected(canonical_model):
    # eleven allowed targets out of the 101-point state grid
    res = value_iteration(canonical_model, n_grid=101, pi_grid=11)
    coarse = np.linspace(0.0, 1.0, 11)
    assert np.all(np.isin(np.round(res.policy_targets, 10), np.round(coarse, 10)))
    with pytest.raises(ValueError):
        value_iteration(canonical_model, n_grid=101, pi_grid=1)


def test_zero_penalty_sells_everything(canonical_model):
    model = dataclasses.replace(canonical_model,
                                market=_market(canonical_model, penalty_rate=0.0))
    res = value_iteration(model, n_grid=101)
    band, deviation = band_from_greedy(res)
    assert deviation == 0
    assert band.low == 0.0 and band.high == 0.0
    # selling stored energy is revenue, so no state costs money
    assert res.values.values.max() <= 1e-9


def test_zero_prices_degenerate(canonical_model):
    model = dataclasses.replace(
        canonical_model,
        market=_market(canonical_model, energy_price=0.0, penalty_rate=0.0))
    direct = solve_thresholds_direct(model, n_grid=51)
    assert direct.degenerate
    assert direct.score == pytest.approx(0.0, abs=1e-12)


def test_symmetric_instance_centers_on_half(canonical_model):
    # free energy, lossless battery, even signs: nothing breaks the
    # symmetry between absorb and deliver, so the band centers on 0.5
    bat = dataclasses.replace(canonical_model.battery, efficiency=1.0)
    mkt = _market(canonical_model, energy_price=0.0)
    model = dataclasses.replace(canonical_model, battery=bat, market=mkt)
    res = value_iteration(model, n_grid=101)
    band, _ = band_from_greedy(res)
    mid = 0.5 * (band.low + band.high)
    assert mid == pytest.approx(0.5, abs=0.011)
    h = res.values.values
    assert np.allclose(h, h[::-1], atol=1e-6 * max(1.0, np.abs(h).max()))


def test_band_policy_clamp():
    pol = ThresholdPolicy(0.3, 0.7)
    assert pol.clamp(0.1) == pytest.approx(0.3)
    assert pol.clamp(0.5) == pytest.approx(0.5)
    assert pol.clamp(0.9) == pytest.approx(0.7)
    assert np.allclose(pol.clamp(np.array([0.0, 0.4, 1.0])), [0.3, 0.4, 0.7])
