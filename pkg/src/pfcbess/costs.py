"""Expected economics of one control stage.

A stage is an idle interval, during which the controller recharges or
discharges toward a target SoC, followed by one excursion event. The
expected stage cost splits into the energy bought or sold while idle
and the expected shortfall penalty at the event. Both parts reduce to
partial moments of the idle-length and event-energy laws; only the
penalty averaged over a random interruption point needs quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .battery import BatteryParams
from .distributions import ScalarDistribution, StochasticModel, _maybe_scalar


class QuadratureError(RuntimeError):
    """Adaptive integration failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved tolerance {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class MarketParams:
    """Prices, the penalty rate, the per-stage discount, and the
    contracted reserve power (informational bound on deployed power)."""

    energy_price: float
    penalty_rate: float
    discount: float
    reserve_kw: float

    def __post_init__(self):
        if self.energy_price < 0 or self.penalty_rate < 0:
            raise ValueError("prices must be non-negative")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.reserve_kw <= 0:
            raise ValueError("reserve_kw must be positive")


@dataclass(frozen=True)
class CostModel:
    """Everything the controller and planner need about one setup."""

    battery: BatteryParams
    market: MarketParams
    stochastic: StochasticModel

    def with_capacity(self, capacity_kwh: float) -> "CostModel":
        """Same market and event process, different storage size."""
        return replace(self, battery=replace(self.battery, capacity_kwh=capacity_kwh))

    def quad_tol(self) -> float:
        return 1e-8 * (self.market.energy_price + self.market.penalty_rate) * self.battery.capacity_kwh


def time_to_target(soc, target, battery: BatteryParams):
    """Hours of full-power operation needed to move the SoC to target."""
    gap = np.abs(np.asarray(target, dtype=float) - np.asarray(soc, dtype=float))
    return _maybe_scalar(gap * battery.capacity_kwh / battery.power_limit_kw)


def expected_charging_cost(soc, target, model: CostModel):
    """Idle-interval energy cost averaged over the interval length.

    Exact: the truncated move is linear in the interval length, so the
    expectation is a partial mean of the idle law plus a tail term.
    """
    bat, mkt = model.battery, model.market
    s = np.asarray(soc, dtype=float)
    t = np.asarray(target, dtype=float)
    horizon = np.abs(t - s) * bat.capacity_kwh / bat.power_limit_kw
    dist_i = model.stochastic.dist_i
    moved = bat.power_limit_kw * np.asarray(dist_i.partial_mean(horizon)) \
        + np.abs(t - s) * bat.capacity_kwh * np.asarray(dist_i.ccdf(horizon))
    rate = np.where(t > s, mkt.energy_price / bat.efficiency,
                    -mkt.energy_price * bat.efficiency)
    return _maybe_scalar(np.where(t == s, 0.0, rate * moved))


def expected_penalty_at(soc_end, model: CostModel):
    """Expected shortfall penalty of one event hitting at a known SoC.

    Averages over the event sign and energy; both branches are tail
    expectations of the event-energy law, evaluated in closed form.
    """
    bat, mkt, sto = model.battery, model.market, model.stochastic
    s = np.asarray(soc_end, dtype=float)
    room_absorb = (1.0 - s) * bat.capacity_kwh / bat.efficiency
    room_deliver = bat.efficiency * bat.capacity_kwh * s
    over = sto.signs.p_over * np.asarray(sto.energy.tail_expectation(room_absorb))
    under = sto.signs.p_under * np.asarray(sto.energy.tail_expectation(room_deliver))
    return _maybe_scalar(mkt.penalty_rate * (over + under))


def expected_penalty(soc: float, target: float, model: CostModel,
                     tol: float | None = None) -> float:
    """Expected event penalty with the interruption point averaged out.

    The event interrupts the recharge after a random idle time, so the
    SoC it meets is the truncated move toward the target. Integrates
    the known-SoC penalty along that path against the idle-length law.
    """
    bat = model.battery
    soc, target = float(soc), float(target)
    horizon = time_to_target(soc, target, bat)
    dist_i = model.stochastic.dist_i
    if horizon == 0.0:
        return float(expected_penalty_at(soc, model))
    drift = np.sign(target - soc) * bat.power_limit_kw / bat.capacity_kwh
    tail = float(dist_i.ccdf(horizon)) * float(expected_penalty_at(target, model))
    if tol is None:
        tol = model.quad_tol()

    def along_path(x):
        return np.asarray(expected_penalty_at(soc + drift * x, model))

    return _expect_below(dist_i, along_path, horizon, tol) + tail


def one_stage_cost(soc: float, target: float, model: CostModel,
                   tol: float | None = None) -> float:
    """Expected cost of one full stage started at ``soc``."""
    return float(expected_charging_cost(soc, target, model)) \
        + expected_penalty(soc, target, model, tol)


def stage_cost_marginals(target, model: CostModel):
    """One-sided derivatives of the stage cost in the recharge target.

    Returns ``(up, down)``, the marginal cost per kWh of raising the
    target from below and from above. They differ only through the
    conversion-loss factor on the energy price, so up >= down always;
    their roots locate the idle band.
    """
    bat, mkt, sto = model.battery, model.market, model.stochastic
    t = np.asarray(target, dtype=float)
    room_absorb = (1.0 - t) * bat.capacity_kwh / bat.efficiency
    room_deliver = bat.efficiency * bat.capacity_kwh * t
    swing = mkt.penalty_rate * (
        sto.signs.p_over / bat.efficiency * np.asarray(sto.energy.ccdf(room_absorb))
        - sto.signs.p_under * bat.efficiency * np.asarray(sto.energy.ccdf(room_deliver)))
    up = mkt.energy_price / bat.efficiency + swing
    down = mkt.energy_price * bat.efficiency + swing
    return _maybe_scalar(up), _maybe_scalar(down)


# ----------------------------------------------------------------------
# quadrature helpers

def _expect_below(dist: ScalarDistribution, fn: Callable, hi: float, tol: float) -> float:
    """integral of fn(x) against the law of dist over (-inf, hi]."""
    if dist.kind == "point":
        return float(fn(dist.lower)) if dist.lower <= hi else 0.0
    lo = dist.lower
    hi_eff = min(hi, dist.truncated_upper(1.0 - 1e-9))
    if hi_eff <= lo:
        return 0.0
    if dist.kind in ("uniform", "exponential"):
        return _adaptive_simpson(lambda x: fn(x) * dist.pdf(x), lo, hi_eff, tol)
    return _piecewise_trapezoid(dist, fn, lo, hi_eff)


def _piecewise_trapezoid(dist: ScalarDistribution, fn: Callable,
                         lo: float, hi: float, points: int = 4096) -> float:
    # constant density per knot cell, so integrate fn cell by cell
    knots = dist.xs
    inner = knots[(knots > lo) & (knots < hi)]
    edges = np.concatenate([[lo], inner, [hi]])
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        rho = float(dist.pdf(0.5 * (a + b)))
        if rho == 0.0:
            continue
        n = max(8, int(points * (b - a) / (hi - lo)))
        xs = np.linspace(a, b, n + 1)
        total += rho * float(np.trapz(np.asarray(fn(xs), dtype=float), xs))
    return total


def _adaptive_simpson(f: Callable, a: float, b: float, tol: float,
                      max_depth: int = 28) -> float:
    """Adaptive composite Simpson rule with Richardson acceptance."""
    fa, fm, fb = float(f(a)), float(f(0.5 * (a + b))), float(f(b))
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)


def _simpson_recurse(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = float(f(lm)), float(f(rm))
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    err = left + right - whole
    if abs(err) <= 15.0 * tol:
        return left + right + err / 15.0
    if depth <= 0:
        raise QuadratureError("adaptive Simpson depth exhausted", abs(err) / 15.0)
    half = 0.5 * tol
    return (_simpson_recurse(f, a, m, fa, flm, fm, left, half, depth - 1)
            + _simpson_recurse(f, m, b, fm, frm, fb, right, half, depth - 1))
