"""Capacity planning: operating cost versus battery size.

For each candidate capacity the control problem is re-solved, the
stationary SoC law of the controlled chain is computed, and the
expected discounted operating cost is weighted by it. Sizing then
trades that curve off against an annualized capital cost.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .costs import CostModel
from .solver import (ConvergenceError, ThresholdPolicy, TransitionMatrix,
                     build_transition_matrix, solve_thresholds_by_roots,
                     value_iteration)


@dataclass(frozen=True)
class CapitalCostModel:
    """Capacity-to-capital-cost map, scaled onto the operating axis.

    lam converts a capital figure to the same units as the discounted
    operating cost before the two are added. The map is either affine
    in capacity or interpolated from a table.
    """

    lam: float
    fixed: float = 0.0
    per_kwh: float = 0.0
    xs: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if (self.xs is None) != (self.values is None):
            raise ValueError("tabulated form needs both xs and values")
        if self.xs is not None:
            xs = np.asarray(self.xs, dtype=float)
            vals = np.asarray(self.values, dtype=float)
            if xs.size != vals.size or xs.size < 2 or np.any(np.diff(xs) <= 0):
                raise ValueError("table needs >= 2 strictly increasing capacities")
            object.__setattr__(self, "xs", xs)
            object.__setattr__(self, "values", vals)

    @classmethod
    def affine(cls, lam: float, fixed: float = 0.0, per_kwh: float = 0.0):
        return cls(lam=lam, fixed=fixed, per_kwh=per_kwh)

    @classmethod
    def tabulated(cls, lam: float, capacities, costs):
        return cls(lam=lam, xs=np.asarray(capacities, float),
                   values=np.asarray(costs, float))

    def capital(self, capacity_kwh):
        c = np.asarray(capacity_kwh, dtype=float)
        if self.xs is not None:
            out = np.interp(c, self.xs, self.values)
        else:
            out = self.fixed + self.per_kwh * c
        return float(out) if out.ndim == 0 else out

    def scaled(self, capacity_kwh):
        return self.lam * self.capital(capacity_kwh)


@dataclass(frozen=True)
class PlanningRow:
    capacity_kwh: float
    low: float
    high: float
    op_cost_stationary: float
    op_cost_uniform: float
    iterations: int
    error: str | None = None


@dataclass(frozen=True)
class PlanningResult:
    rows: tuple
    n_grid: int

    def capacities(self) -> np.ndarray:
        return np.array([r.capacity_kwh for r in self.rows])

    def op_cost(self, weighting: str = "stationary") -> np.ndarray:
        if weighting not in ("stationary", "uniform"):
            raise ValueError("weighting must be 'stationary' or 'uniform'")
        field = "op_cost_stationary" if weighting == "stationary" else "op_cost_uniform"
        return np.array([getattr(r, field) for r in self.rows])

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows])


@dataclass(frozen=True)
class OptimalCapacity:
    capacity_kwh: float
    total_cost: float
    grid_capacity_kwh: float
    convex: bool
    marginal_residual: float


def stationary_distribution(transition, tol: float = 1e-10,
                            max_iter: int = 100_000) -> np.ndarray:
    """Stationary law of a finite chain by damped power iteration.

    The half-lazy update v <- (v + vP) / 2 shares fixed points with P
    and converges geometrically even when the chain is periodic. The
    residual is the l1 distance between v and vP.
    """
    p = transition.matrix if isinstance(transition, TransitionMatrix) \
        else np.asarray(transition, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError("transition matrix must be square")
    n = p.shape[0]
    v = np.full(n, 1.0 / n)
    residual = np.inf
    for it in range(1, max_iter + 1):
        w = v @ p
        residual = float(np.abs(w - v).sum())
        if residual <= tol:
            w = np.maximum(w, 0.0)
            return w / w.sum()
        v = 0.5 * (v + w)
    raise ConvergenceError("stationary distribution did not converge", residual, max_iter)


def expected_cost_vs_capacity(model: CostModel, capacities, n_grid: int = 201,
                              tol: float | None = None,
                              max_iter: int = 10_000) -> PlanningResult:
    """Re-solve the control problem at each capacity.

    Each row carries the optimal band and the expected discounted
    operating cost under the stationary SoC law and under uniform
    weights. A capacity whose solve fails keeps its row with the error
    message and NaN costs.
    """
    caps = np.asarray(capacities, dtype=float)
    if caps.ndim != 1 or caps.size == 0 or np.any(caps <= 0) or np.any(np.diff(caps) <= 0):
        raise ValueError("capacities must be positive and strictly increasing")
    rows = []
    for cap in caps:
        sized = model.with_capacity(float(cap))
        try:
            vi = value_iteration(sized, n_grid=n_grid, tol=tol, max_iter=max_iter)
            policy = solve_thresholds_by_roots(sized, vi.values)
            chain = build_transition_matrix(policy, sized, n_grid=n_grid)
            weights = stationary_distribution(chain)
            rows.append(PlanningRow(
                capacity_kwh=float(cap), low=policy.low, high=policy.high,
                op_cost_stationary=float(weights @ vi.values.values),
                op_cost_uniform=float(vi.values.values.mean()),
                iterations=vi.iterations))
        except ConvergenceError as err:
            rows.append(PlanningRow(capacity_kwh=float(cap), low=np.nan, high=np.nan,
                                    op_cost_stationary=np.nan, op_cost_uniform=np.nan,
                                    iterations=0, error=str(err)))
    return PlanningResult(rows=tuple(rows), n_grid=n_grid)


def optimal_capacity(result: PlanningResult, capital: CapitalCostModel,
                     weighting: str = "stationary") -> OptimalCapacity:
    """Minimize scaled capital plus operating cost over capacity.

    The grid argmin is refined once through the parabola fitted to the
    three bracketing points, exact when the objective is quadratic.
    The convexity flag checks all second divided differences against a
    small negative slack. marginal_residual is the fitted slope at the
    grid argmin, a balance check between marginal capital and marginal
    operating savings.
    """
    caps = result.capacities()
    ops = result.op_cost(weighting)
    good = np.isfinite(ops)
    if good.sum() < 1:
        raise ValueError("no capacity row solved successfully")
    caps, ops = caps[good], ops[good]
    totals = capital.scaled(caps) + ops
    scale = max(1.0, float(np.max(np.abs(totals))))

    convex = True
    for k in range(1, caps.size - 1):
        d1 = (totals[k] - totals[k - 1]) / (caps[k] - caps[k - 1])
        d2 = (totals[k + 1] - totals[k]) / (caps[k + 1] - caps[k])
        if (d2 - d1) / (0.5 * (caps[k + 1] - caps[k - 1])) < -1e-6 * scale:
            convex = False
            break

    k = int(np.argmin(totals))
    best_x, best_y = float(caps[k]), float(totals[k])
    if 0 < k < caps.size - 1:
        x0, x1, x2 = caps[k - 1], caps[k], caps[k + 1]
        y0, y1, y2 = totals[k - 1], totals[k], totals[k + 1]
        d1 = (y1 - y0) / (x1 - x0)
        a = ((y2 - y1) / (x2 - x1) - d1) / (x2 - x0)
        residual = abs(d1 + a * (x1 - x0))
        # refine only when the column looks convex; otherwise the grid
        # argmin is the honest answer and the flag carries the warning
        if convex and a > 0:
            vertex = 0.5 * (x0 + x1) - d1 / (2.0 * a)
            vertex = float(np.clip(vertex, x0, x2))
            fitted = y0 + d1 * (vertex - x0) + a * (vertex - x0) * (vertex - x1)
            if fitted <= best_y:
                best_x, best_y = vertex, float(fitted)
    elif caps.size >= 2:
        if k == 0:
            residual = abs((totals[1] - totals[0]) / (caps[1] - caps[0]))
        else:
            residual = abs((totals[-1] - totals[-2]) / (caps[-1] - caps[-2]))
    else:
        residual = 0.0
    return OptimalCapacity(capacity_kwh=best_x, total_cost=best_y,
                           grid_capacity_kwh=float(caps[k]), convex=convex,
                           marginal_residual=float(residual))
