"""Single-event battery arithmetic against hand-worked numbers.

All cases use a 100 kWh / 1000 kW battery with split efficiency 0.8
unless stated otherwise, so the oracle values can be verified by
hand: charging stores 0.8 of the grid draw, discharging delivers 0.8
of the drain.
"""
import numpy as np
import pytest

from pfcbess import (BatteryParams, ac_power, charging_cost, end_of_interval_soc,
                     penalty_cost, post_event_soc)

BAT = BatteryParams(capacity_kwh=100.0, power_limit_kw=1000.0, efficiency=0.8)


def test_params_validation():
    with pytest.raises(ValueError):
        BatteryParams(capacity_kwh=0.0, power_limit_kw=1000.0, efficiency=0.8)
    with pytest.raises(ValueError):
        BatteryParams(capacity_kwh=100.0, power_limit_kw=-1.0, efficiency=0.8)
    with pytest.raises(ValueError):
        BatteryParams(capacity_kwh=100.0, power_limit_kw=1000.0, efficiency=1.2)
    BatteryParams(capacity_kwh=100.0, power_limit_kw=1000.0, efficiency=1.0)


def test_ac_power_split():
    assert ac_power(800.0, 0.8) == pytest.approx(1000.0)
    assert ac_power(-800.0, 0.8) == pytest.approx(-640.0)
    assert ac_power(0.0, 0.8) == 0.0
    with pytest.raises(ValueError):
        ac_power(100.0, 0.0)


def test_end_of_interval_soc():
    # 0.03 h at 1000 kW moves 30 kWh = 0.3 SoC
    assert end_of_interval_soc(0.2, 0.9, 0.03, BAT) == pytest.approx(0.5)
    # long enough intervals stop exactly at the target
    assert end_of_interval_soc(0.2, 0.9, 0.08, BAT) == pytest.approx(0.9)
    assert end_of_interval_soc(0.2, 0.9, 10.0, BAT) == pytest.approx(0.9)
    # discharging toward a lower target
    assert end_of_interval_soc(0.9, 0.2, 0.03, BAT) == pytest.approx(0.6)
    # already there
    assert end_of_interval_soc(0.4, 0.4, 1.0, BAT) == pytest.approx(0.4)


def test_charging_cost_hand_values():
    # 30 kWh stored needs 37.5 kWh from the grid at 0.1 $/kWh
    assert charging_cost(0.2, 0.9, 0.03, BAT, 0.1) == pytest.approx(3.75)
    # capped by the gap: 70 kWh stored, 87.5 from the grid
    assert charging_cost(0.2, 0.9, 0.08, BAT, 0.1) == pytest.approx(8.75)
    # discharging 40 kWh delivers 32 kWh and earns 3.2
    assert charging_cost(0.9, 0.5, 1.0, BAT, 0.1) == pytest.approx(-3.2)
    assert charging_cost(0.4, 0.4, 1.0, BAT, 0.1) == 0.0


def test_penalty_cost_hand_values():
    # at SoC 0.5 the battery can absorb 62.5 kWh and deliver 40 kWh
    assert penalty_cost(0.5, 1, 70.0, BAT, 10.0) == pytest.approx(75.0)
    assert penalty_cost(0.5, -1, 50.0, BAT, 10.0) == pytest.approx(100.0)
    assert penalty_cost(0.5, 1, 62.5, BAT, 10.0) == 0.0
    assert penalty_cost(0.5, -1, 39.0, BAT, 10.0) == 0.0
    # full battery cannot absorb at all
    assert penalty_cost(1.0, 1, 5.0, BAT, 10.0) == pytest.approx(50.0)
    # empty battery cannot deliver at all
    assert penalty_cost(0.0, -1, 5.0, BAT, 10.0) == pytest.approx(50.0)


def test_post_event_soc_hand_values():
    assert post_event_soc(0.5, 1, 20.0, BAT) == pytest.approx(0.66)
    assert post_event_soc(0.5, -1, 20.0, BAT) == pytest.approx(0.25)
    # clamped at the rails
    assert post_event_soc(0.9, 1, 50.0, BAT) == 1.0
    assert post_event_soc(0.1, -1, 50.0, BAT) == 0.0


def test_round_trip_losses():
    # absorbing e then delivering eta^2 e returns exactly to the start
    s1 = post_event_soc(0.5, 1, 10.0, BAT)
    assert s1 == pytest.approx(0.58)
    s2 = post_event_soc(s1, -1, 0.64 * 10.0, BAT)
    assert s2 == pytest.approx(0.5)


def test_vectorized_matches_scalar(rng):
    socs = rng.uniform(0.0, 1.0, size=40)
    energies = rng.uniform(0.0, 80.0, size=40)
    signs = rng.choice([-1, 1], size=40)
    pens = penalty_cost(socs, signs, energies, BAT, 10.0)
    posts = post_event_soc(socs, signs, energies, BAT)
    for k in range(40):
        assert pens[k] == pytest.approx(
            penalty_cost(float(socs[k]), int(signs[k]), float(energies[k]), BAT, 10.0))
        assert posts[k] == pytest.approx(
            post_event_soc(float(socs[k]), int(signs[k]), float(energies[k]), BAT))
    idle = rng.uniform(0.0, 0.2, size=40)
    targets = rng.uniform(0.0, 1.0, size=40)
    costs = charging_cost(socs, targets, idle, BAT, 0.1)
    for k in range(40):
        assert costs[k] == pytest.approx(
            charging_cost(float(socs[k]), float(targets[k]), float(idle[k]), BAT, 0.1))
