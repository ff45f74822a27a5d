"""Battery physics and single-event cost primitives.

Canonical units throughout: energy in kWh, power in kW, time in hours,
money in $. State of charge (SoC) is stored energy over capacity, in
[0, 1]. Conversion losses are modeled by a round-trip split efficiency:
drawing p from the grid stores p * efficiency, while delivering p to the
grid drains p / efficiency. All functions accept scalars or numpy
arrays and broadcast elementwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import _maybe_scalar


@dataclass(frozen=True)
class BatteryParams:
    """Nameplate ratings of the storage system."""

    capacity_kwh: float
    power_limit_kw: float
    efficiency: float

    def __post_init__(self):
        if self.capacity_kwh <= 0:
            raise ValueError("capacity_kwh must be positive")
        if self.power_limit_kw <= 0:
            raise ValueError("power_limit_kw must be positive")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in (0, 1]")


def ac_power(p_battery_kw, efficiency):
    """Grid-side power for a given battery-side power.

    Positive battery power (charging) draws more from the grid,
    negative (discharging) delivers less to it.
    """
    if not 0.0 < efficiency <= 1.0:
        raise ValueError("efficiency must lie in (0, 1]")
    p = np.asarray(p_battery_kw, dtype=float)
    return _maybe_scalar(np.where(p > 0, p / efficiency, p * efficiency))


def end_of_interval_soc(soc, target, i_hours, battery: BatteryParams):
    """SoC when the idle interval ends while recharging toward target.

    The battery moves toward the target at its power limit and stops
    there; it never overshoots.
    """
    s = np.asarray(soc, dtype=float)
    reach = battery.power_limit_kw * np.asarray(i_hours, dtype=float) / battery.capacity_kwh
    gap = np.asarray(target, dtype=float) - s
    return _maybe_scalar(s + np.sign(gap) * np.minimum(reach, np.abs(gap)))


def charging_cost(soc, target, i_hours, battery: BatteryParams, energy_price):
    """Cost of the energy exchanged with the grid during an idle interval.

    Charging pays for conversion losses on top of the stored energy;
    discharging earns the price on the delivered, loss-reduced energy,
    so the result is negative when target < soc.
    """
    s = np.asarray(soc, dtype=float)
    t = np.asarray(target, dtype=float)
    moved = np.minimum(battery.power_limit_kw * np.asarray(i_hours, dtype=float),
                       np.abs(t - s) * battery.capacity_kwh)
    rate = np.where(t > s, energy_price / battery.efficiency,
                    -energy_price * battery.efficiency)
    return _maybe_scalar(rate * moved)


def penalty_cost(soc_end, sign, energy_kwh, battery: BatteryParams, penalty_rate):
    """Shortfall penalty for one excursion event.

    An absorb event (sign +1) fails on the energy beyond what the
    battery can still take, a delivery event (sign -1) on the energy
    beyond what it can still supply, both measured on the grid side.
    """
    s = np.asarray(soc_end, dtype=float)
    e = np.asarray(energy_kwh, dtype=float)
    room_deliver = battery.efficiency * battery.capacity_kwh * s
    room_absorb = (1.0 - s) * battery.capacity_kwh / battery.efficiency
    shortfall = np.where(np.asarray(sign) == 1, e - room_absorb, e - room_deliver)
    return _maybe_scalar(penalty_rate * np.maximum(shortfall, 0.0))


def post_event_soc(soc_end, sign, energy_kwh, battery: BatteryParams):
    """SoC after an excursion event, clamped to the physical range."""
    s = np.asarray(soc_end, dtype=float)
    e = np.asarray(energy_kwh, dtype=float)
    step = np.where(np.asarray(sign) == 1, battery.efficiency,
                    -1.0 / battery.efficiency) * e / battery.capacity_kwh
    return _maybe_scalar(np.clip(s + step, 0.0, 1.0))
