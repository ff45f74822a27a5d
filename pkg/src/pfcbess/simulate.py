"""Event-level replay and Monte Carlo evaluation of recharge policies."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .battery import (charging_cost, end_of_interval_soc, penalty_cost,
                      post_event_soc)
from .costs import CostModel
from .distributions import StochasticModel, _maybe_scalar
from .ingest import EventSequence


@dataclass(frozen=True)
class Policy:
    """Recharge-target rule applied at the start of each idle interval."""

    kind: str
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("band", "no_recharge"):
            raise ValueError("kind must be 'band' or 'no_recharge'")
        if self.kind == "band" and not 0.0 <= self.low <= self.high <= 1.0:
            raise ValueError("need 0 <= low <= high <= 1")

    @classmethod
    def band(cls, low: float, high: float) -> "Policy":
        return cls(kind="band", low=float(low), high=float(high))

    @classmethod
    def from_thresholds(cls, thresholds) -> "Policy":
        return cls.band(thresholds.low, thresholds.high)

    @classmethod
    def aggressive(cls) -> "Policy":
        """Recharge to full after every event."""
        return cls.band(1.0, 1.0)

    @classmethod
    def no_recharge(cls) -> "Policy":
        """Never trade energy between events."""
        return cls(kind="no_recharge")

    def target(self, soc):
        if self.kind == "no_recharge":
            return soc
        return _maybe_scalar(np.clip(np.asarray(soc, dtype=float), self.low, self.high))


@dataclass(frozen=True)
class SimulationReport:
    n_events: int
    duration_hours: float
    charging_cost: float
    penalty_cost: float
    total_cost: float
    discounted_cost: float
    n_failures: int
    failure_rate: float
    min_soc: float
    max_soc: float
    final_soc: float
    trajectory: pd.DataFrame | None = None

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in
               ("n_events", "duration_hours", "charging_cost", "penalty_cost",
                "total_cost", "discounted_cost", "n_failures", "failure_rate",
                "min_soc", "max_soc", "final_soc")}
        return out


@dataclass(frozen=True)
class MonteCarloValue:
    mean: float
    std_error: float
    n_paths: int
    n_stages: int


def generate_events(stochastic: StochasticModel, horizon_hours: float,
                    seed=0) -> EventSequence:
    """Draw the event sequence observed over one horizon.

    An event is included when its excursion begins within the horizon;
    a horizon shorter than the first idle draw yields no events.
    """
    if horizon_hours < 0:
        raise ValueError("horizon_hours must be non-negative")
    mean_stage = stochastic.dist_i.mean() + stochastic.dist_j.mean()
    if mean_stage <= 0:
        raise ValueError("idle and excursion lengths cannot both be zero")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    parts = {"i": [], "j": [], "q": [], "p": []}
    t = 0.0
    while True:
        m = max(64, int(1.3 * (horizon_hours - t) / mean_stage) + 1)
        i = np.atleast_1d(stochastic.dist_i.sample(rng, m))
        j = np.atleast_1d(stochastic.dist_j.sample(rng, m))
        q = stochastic.signs.sample(rng, m)
        p = np.atleast_1d(stochastic.dist_p_pfc.sample(rng, m))
        stage = i + j
        starts = t + np.cumsum(stage) - stage
        ok = starts + i <= horizon_hours
        if not ok.all():
            cut = int(np.argmin(ok))
            for key, arr in (("i", i), ("j", j), ("q", q), ("p", p)):
                parts[key].append(arr[:cut])
            break
        for key, arr in (("i", i), ("j", j), ("q", q), ("p", p)):
            parts[key].append(arr)
        t = float(starts[-1] + stage[-1])
    cat = {k: np.concatenate(v) if v else np.empty(0) for k, v in parts.items()}
    return EventSequence(i_hours=cat["i"], j_hours=cat["j"],
                         q=cat["q"].astype(np.int8), p_pfc_kw=cat["p"])


def simulate_policy(events: EventSequence, policy: Policy, model: CostModel,
                    soc0: float = 0.5, include_trajectory: bool = False) -> SimulationReport:
    """Replay a policy against one event sequence.

    Each stage runs an idle recharge toward the policy target followed
    by the excursion; an event whose energy exceeds the feasible room
    counts as a failure and pays the shortfall penalty.
    """
    if not 0.0 <= soc0 <= 1.0:
        raise ValueError("soc0 must lie in [0, 1]")
    bat, mkt = model.battery, model.market
    disc = mkt.discount
    n = events.n_events
    if events.p_pfc_kw is not None:
        power = np.asarray(events.p_pfc_kw, float)
    else:
        power = np.full(n, mkt.reserve_kw)

    s = float(soc0)
    charge_total = pen_total = disc_total = 0.0
    n_fail = 0
    lo = hi = s
    rows = [] if include_trajectory else None
    t_start = 0.0
    for k in range(n):
        i_len, j_len, sign = float(events.i_hours[k]), float(events.j_hours[k]), int(events.q[k])
        tgt = float(policy.target(s))
        ch = float(charging_cost(s, tgt, i_len, bat, mkt.energy_price))
        s_mid = float(end_of_interval_soc(s, tgt, i_len, bat))
        energy = power[k] * j_len
        pen = float(penalty_cost(s_mid, sign, energy, bat, mkt.penalty_rate))
        s_next = float(post_event_soc(s_mid, sign, energy, bat))
        charge_total += ch
        pen_total += pen
        disc_total += disc ** k * (ch + pen)
        if pen > 0.0:
            n_fail += 1
        lo = min(lo, s_mid, s_next)
        hi = max(hi, s_mid, s_next)
        if rows is not None:
            rows.append((k, t_start, i_len, j_len, sign, power[k], tgt, s, s_mid,
                         s_next, ch, pen, charge_total + pen_total))
        t_start += i_len + j_len
        s = s_next
    trajectory = None
    if rows is not None:
        trajectory = pd.DataFrame(rows, columns=[
            "event", "t_start_h", "i_len_h", "j_len_h", "q", "p_pfc_kw", "target",
            "soc_start", "soc_idle_end", "soc_next", "charge_cost", "penalty_cost",
            "cum_cost"])
    return SimulationReport(
        n_events=n, duration_hours=float(events.i_hours.sum() + events.j_hours.sum()),
        charging_cost=charge_total, penalty_cost=pen_total,
        total_cost=charge_total + pen_total, discounted_cost=disc_total,
        n_failures=n_fail, failure_rate=n_fail / n if n else 0.0,
        min_soc=lo, max_soc=hi, final_soc=s, trajectory=trajectory)


def compare_policies(policies: dict[str, Policy], events: EventSequence,
                     model: CostModel, soc0: float = 0.5) -> pd.DataFrame:
    """Replay several policies against the same events."""
    rows = {name: simulate_policy(events, pol, model, soc0=soc0).to_dict()
            for name, pol in policies.items()}
    frame = pd.DataFrame.from_dict(rows, orient="index")
    frame.index.name = "policy"
    return frame


def discounted_return(policy: Policy, model: CostModel, n_paths: int = 10_000,
                      n_stages: int | None = None, soc0: float = 0.5,
                      seed: int = 0) -> MonteCarloValue:
    """Monte Carlo estimate of the expected discounted cost.

    Event energies are drawn as exact reserve-power and duration
    products rather than from the tabulated energy law, so the estimate
    is an independent check of the dynamic-programming value. The stage
    count defaults to where the discount factor decays below 1e-6.
    """
    disc = model.market.discount
    if n_stages is None:
        n_stages = int(math.ceil(math.log(1e-6) / math.log(disc)))
    sto = model.stochastic
    bat, mkt = model.battery, model.market
    rng = np.random.default_rng(seed)
    s = np.full(n_paths, float(soc0))
    totals = np.zeros(n_paths)
    factor = 1.0
    for _ in range(n_stages):
        i = np.atleast_1d(sto.dist_i.sample(rng, n_paths))
        j = np.atleast_1d(sto.dist_j.sample(rng, n_paths))
        q = sto.signs.sample(rng, n_paths)
        p = np.atleast_1d(sto.dist_p_pfc.sample(rng, n_paths))
        tgt = policy.target(s)
        ch = charging_cost(s, tgt, i, bat, mkt.energy_price)
        s_mid = end_of_interval_soc(s, tgt, i, bat)
        energy = p * j
        pen = penalty_cost(s_mid, q, energy, bat, mkt.penalty_rate)
        totals += factor * (ch + pen)
        s = post_event_soc(s_mid, q, energy, bat)
        factor *= disc
    return MonteCarloValue(mean=float(totals.mean()),
                           std_error=float(totals.std(ddof=1) / np.sqrt(n_paths)),
                           n_paths=n_paths, n_stages=n_stages)
