"""Shared fixtures: the reference setup used across the suite.

The reference instance is a 100 kWh / 1000 kW battery at 80% split
efficiency selling a 1000 kW reserve, exponential idle times of mean
0.05 h, exponential excursions of mean one minute, uniform activation
power on [500, 1000] kW, symmetric excursion signs, energy price
0.1 $/kWh, penalty 10 $/kWh and discount 0.9. The energy table is
built at higher resolution than the library default so that tabulation
bias stays well below the tolerances asserted against it.
"""
import numpy as np
import pytest

from pfcbess import (BatteryParams, CostModel, MarketParams, ScalarDistribution,
                     StochasticModel, value_iteration)


@pytest.fixture(scope="session")
def canonical_stochastic() -> StochasticModel:
    return StochasticModel.build(
        dist_i=ScalarDistribution.exponential(mean=0.05, units="h"),
        dist_j=ScalarDistribution.exponential(mean=1.0 / 60.0, units="h"),
        dist_p_pfc=ScalarDistribution.uniform(500.0, 1000.0, units="kW"),
        p_over=0.5,
        n_samples=1_000_000,
        grid_size=2048,
        seed=0,
    )


@pytest.fixture(scope="session")
def canonical_model(canonical_stochastic) -> CostModel:
    return CostModel(
        battery=BatteryParams(capacity_kwh=100.0, power_limit_kw=1000.0,
                              efficiency=0.8),
        market=MarketParams(energy_price=0.1, penalty_rate=10.0,
                            discount=0.9, reserve_kw=1000.0),
        stochastic=canonical_stochastic,
    )


@pytest.fixture(scope="session")
def canonical_vi(canonical_model):
    return value_iteration(canonical_model, n_grid=201)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240911)
