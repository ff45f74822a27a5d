"""Discounted dynamic programming for the recharge-target control.

The SoC interval [0, 1] is discretized into N uniform points, and the
same points serve as candidate recharge targets. Expectations over the
idle-interval length and the event energy reduce to exact first and
zeroth partial moments against value functions interpolated linearly
between grid points, so a Bellman sweep is assembled from closed-form
cell weights and is an exact contraction with modulus equal to the
discount factor.

The optimal policy is an idle band: charge up to the lower threshold,
discharge down to the upper one, do nothing in between. Two routes
recover the thresholds and cross-check each other: root finding on the
one-sided marginal conditions of the converged value function, and a
two-scalar search that solves the policy-fixed linear system for every
candidate band.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .costs import CostModel, expected_penalty_at, stage_cost_marginals
from .distributions import _maybe_scalar

_ALIGN_EPS = 1e-12


class ConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap before its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class ValueFunction:
    """Expected discounted cost-to-go on the uniform SoC grid."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.size != v.size or g.size < 2:
            raise ValueError("grid and values must match and hold >= 2 points")
        if not (abs(g[0]) < 1e-12 and abs(g[-1] - 1.0) < 1e-12
                and np.allclose(np.diff(g), g[1] - g[0])):
            raise ValueError("grid must be uniform on [0, 1]")

    @property
    def delta(self) -> float:
        return 1.0 / (self.grid.size - 1)

    def __call__(self, soc):
        return _maybe_scalar(np.interp(np.asarray(soc, dtype=float), self.grid, self.values))

    def derivative(self) -> np.ndarray:
        """Central-difference slope, one-sided at the boundaries."""
        return np.gradient(self.values, self.delta)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Idle band [low, high]: recharge targets clamp the SoC into it."""

    low: float
    high: float

    def __post_init__(self):
        if not 0.0 <= self.low <= self.high <= 1.0:
            raise ValueError("need 0 <= low <= high <= 1")

    def clamp(self, soc):
        return _maybe_scalar(np.clip(np.asarray(soc, dtype=float), self.low, self.high))


@dataclass(frozen=True)
class TransitionMatrix:
    """Stage-to-stage SoC transition law under a fixed policy."""

    grid: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        p = self.matrix
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] != self.grid.size:
            raise ValueError("matrix must be square and match the grid")
        if np.any(p < -1e-12):
            raise ValueError("transition probabilities must be non-negative")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("transition rows must sum to one")


@dataclass(frozen=True)
class ValueIterationResult:
    values: ValueFunction
    policy_targets: np.ndarray
    policy_idx: np.ndarray
    iterations: int
    residual: float
    tol: float


@dataclass(frozen=True)
class DirectSearchResult:
    policy: ThresholdPolicy
    values: ValueFunction
    score: float
    degenerate: bool
    n_evaluated: int


class _GridTables:
    """Precomputed cell weights and matrices for one model and grid."""

    def __init__(self, model: CostModel, n_grid: int):
        if n_grid < 51:
            raise ValueError("n_grid must be at least 51")
        self.model = model
        self.n = n_grid
        self.grid = np.linspace(0.0, 1.0, n_grid)
        self.delta = 1.0 / (n_grid - 1)
        bat, mkt, sto = model.battery, model.market, model.stochastic
        self.cap = bat.capacity_kwh
        self.p_lim = bat.power_limit_kw
        self.eff = bat.efficiency
        self.discount = mkt.discount
        self.p_over = sto.signs.p_over
        self.p_under = sto.signs.p_under
        self.energy = sto.energy
        self.dist_i = sto.dist_i
        self._offsets = np.abs(np.arange(n_grid)[None, :] - np.arange(n_grid)[:, None])

        # idle-interval traversal weights per whole-cell distance
        t_knots = self.grid * self.cap / self.p_lim
        cdf_i = np.asarray(self.dist_i.cdf(t_knots))
        pm_i = np.asarray(self.dist_i.partial_mean(t_knots))
        self.ccdf_i = 1.0 - cdf_i
        dt = self.delta * self.cap / self.p_lim
        mass = np.diff(cdf_i)
        eu = np.clip((np.diff(pm_i) - t_knots[:-1] * mass) / dt, 0.0, mass)
        self.c_path = (mass - eu).copy()
        self.c_path[1:] += eu[:-1]
        self.c_path[0] += cdf_i[0]
        self.tail_path = np.empty(n_grid)
        self.tail_path[0] = 1.0
        self.tail_path[1:] = eu + self.ccdf_i[1:]

        # expected idle energy cost by signed cell distance
        base = self.p_lim * pm_i + self.grid * self.cap * self.ccdf_i
        self.ec_up = mkt.energy_price / self.eff * base
        self.ec_dn = -mkt.energy_price * self.eff * base

        self.cbar = np.asarray(expected_penalty_at(self.grid, model))
        self.mjump = np.stack([self.event_row(x) for x in self.grid])
        self.stage = self.path_expect_matrix(self.cbar)
        idx = np.arange(n_grid)
        for k in range(1, n_grid):
            self.stage[idx[:-k], idx[:-k] + k] += self.ec_up[k]
            self.stage[idx[k:], idx[k:] - k] += self.ec_dn[k]

    # ------------------------------------------------------------------

    def _directional_weights(self, x: float, up: bool):
        """Interior landing mass of one event branch started at SoC x.

        Returns (weights over the grid, boundary index, boundary mass);
        the mass clamped at the boundary is reported separately so the
        continuation-marginal integrals can exclude it.
        """
        grid, n, delta = self.grid, self.n, self.delta
        w = np.zeros(n)
        if up:
            k0 = min(int(np.ceil(x / delta - 1e-9)), n - 1)
            aligned = abs(grid[k0] - x) <= _ALIGN_EPS
            ys = grid[k0:] if aligned else np.concatenate([[x], grid[k0:]])
            es = (ys - x) * self.cap / self.eff
            lam = x / delta - (k0 - 1)
            base = [(k0, 1.0)] if aligned else [(k0 - 1, 1.0 - lam), (k0, lam)]
            bound_idx = n - 1
        else:
            k0 = max(int(np.floor(x / delta + 1e-9)), 0)
            aligned = abs(grid[k0] - x) <= _ALIGN_EPS
            ys = grid[k0::-1] if aligned else np.concatenate([[x], grid[k0::-1]])
            es = (x - ys) * self.eff * self.cap
            lam = x / delta - k0
            base = [(k0, 1.0)] if aligned else [(k0, 1.0 - lam), (k0 + 1, lam)]
            bound_idx = 0
        cdf = np.asarray(self.energy.cdf(es))
        knot_w = np.zeros(ys.size)
        knot_w[0] = cdf[0]
        if ys.size > 1:
            pm = np.asarray(self.energy.partial_mean(es))
            segmass = np.diff(cdf)
            de = np.diff(es)
            eu = np.clip((np.diff(pm) - es[:-1] * segmass) / de, 0.0, segmass)
            knot_w[:-1] += segmass - eu
            knot_w[1:] += eu
        for gi, frac in base:
            w[gi] += frac * knot_w[0]
        rest = knot_w if aligned else knot_w[1:]
        if rest.size:
            if up:
                w[k0:k0 + rest.size] += rest
            else:
                w[k0 - rest.size + 1:k0 + 1] += rest[::-1]
        if aligned:
            # undo the double count of the start knot
            w[k0] -= knot_w[0]
        return w, bound_idx, float(1.0 - cdf[-1])

    def event_row(self, x: float) -> np.ndarray:
        """Next-SoC allocation over the grid for one event at SoC x."""
        w_up, i_up, m_up = self._directional_weights(x, True)
        w_dn, i_dn, m_dn = self._directional_weights(x, False)
        row = self.p_over * w_up + self.p_under * w_dn
        row[i_up] += self.p_over * m_up
        row[i_dn] += self.p_under * m_dn
        return row

    def path_expect_matrix(self, vec: np.ndarray) -> np.ndarray:
        """M[i, j] = idle-path expectation of the grid function vec.

        The path runs from grid point i toward target j, truncated at
        the random idle length, with an atom at j for intervals long
        enough to finish the move.
        """
        n = self.n
        c, tail = self.c_path, self.tail_path
        idx = np.arange(n)
        m = np.empty((n, n))
        m[idx, idx] = vec
        s_up = np.zeros(n)
        s_dn = np.zeros(n)
        for k in range(1, n):
            r = n - k
            s_up[:r] += c[k - 1] * vec[k - 1:n - 1]
            m[idx[:r], idx[:r] + k] = s_up[:r] + tail[k] * vec[k:]
            s_dn[k:] += c[k - 1] * vec[1:r + 1]
            m[idx[k:], idx[k:] - k] = s_dn[k:] + tail[k] * vec[:r]
        return m

    def sweep(self, values: np.ndarray, col_mask: np.ndarray | None = None):
        """One Bellman update; ties go to the target nearest the state."""
        w_event = self.mjump @ values
        total = self.stage + self.discount * self.path_expect_matrix(w_event)
        if col_mask is not None:
            total = np.where(col_mask[None, :], total, np.inf)
        row_min = total.min(axis=1)
        tie = total <= (row_min + 1e-9 * (1.0 + np.abs(row_min)))[:, None]
        pick = np.where(tie, self._offsets, self.n + 1)
        choice = np.argmin(pick, axis=1)
        return row_min, choice

    def aligned_row(self, i: int, j: int) -> np.ndarray:
        """Transition row from grid state i under grid target j."""
        k = abs(j - i)
        if k == 0:
            return self.mjump[i].copy()
        rows = self.mjump[i:i + k] if j > i else self.mjump[i:i - k:-1]
        return self.c_path[:k] @ rows + self.tail_path[k] * self.mjump[j]

    def transition_row(self, i: int, target: float) -> np.ndarray:
        """Transition row from grid state i under an arbitrary target."""
        grid, delta = self.grid, self.delta
        x = grid[i]
        if abs(target - x) <= _ALIGN_EPS:
            return self.mjump[i].copy()
        up = target > x
        if up:
            klast = int(np.floor(target / delta + 1e-9))
            aligned_t = abs(grid[klast] - target) <= _ALIGN_EPS
            ys = grid[i:klast + 1]
        else:
            klast = int(np.ceil(target / delta - 1e-9))
            aligned_t = abs(grid[klast] - target) <= _ALIGN_EPS
            ys = grid[i:klast - 1:-1] if klast > 0 else grid[i::-1]
        if not aligned_t:
            ys = np.concatenate([ys, [target]])
        ts = np.abs(ys - x) * self.cap / self.p_lim
        cdf = np.asarray(self.dist_i.cdf(ts))
        pm = np.asarray(self.dist_i.partial_mean(ts))
        knot_w = np.zeros(ys.size)
        knot_w[0] = cdf[0]
        segmass = np.diff(cdf)
        dts = np.diff(ts)
        eu = np.clip((np.diff(pm) - ts[:-1] * segmass) / dts, 0.0, segmass)
        knot_w[:-1] += segmass - eu
        knot_w[1:] += eu
        knot_w[-1] += 1.0 - cdf[-1]
        n_aligned = ys.size - (0 if aligned_t else 1)
        rows = self.mjump[i:i + n_aligned] if up else self.mjump[i:i - n_aligned:-1] \
            if i - n_aligned >= 0 else self.mjump[i::-1]
        row = knot_w[:n_aligned] @ rows
        if not aligned_t:
            row = row + knot_w[-1] * self.event_row(target)
        return row

    def stage_cost_under(self, targets_idx: np.ndarray) -> np.ndarray:
        return self.stage[np.arange(self.n), targets_idx]


# ----------------------------------------------------------------------
# public operations

def bellman_operator(values: ValueFunction, model: CostModel,
                     pi_grid: int | None = None):
    """Apply one Bellman update and return (new values, greedy targets)."""
    tables = _GridTables(model, values.grid.size)
    mask = _target_mask(values.grid.size, pi_grid)
    new_vals, choice = tables.sweep(np.asarray(values.values, dtype=float), mask)
    return ValueFunction(tables.grid, new_vals), tables.grid[choice]


def _target_mask(n: int, pi_grid: int | None) -> np.ndarray | None:
    if pi_grid is None or pi_grid >= n:
        return None
    if pi_grid < 2:
        raise ValueError("pi_grid must offer at least 2 targets")
    mask = np.zeros(n, dtype=bool)
    mask[np.unique(np.round(np.linspace(0, n - 1, pi_grid)).astype(int))] = True
    return mask


def value_iteration(model: CostModel, n_grid: int = 201, tol: float | None = None,
                    max_iter: int = 10_000, pi_grid: int | None = None) -> ValueIterationResult:
    """Iterate Bellman updates to the fixed point.

    Stops once successive iterates differ by at most
    tol * (1 - discount) / (2 * discount) in the sup norm, which bounds
    the distance to the fixed point by tol. The default tol is 1e-4
    times the myopic cost scale.
    """
    tables = _GridTables(model, n_grid)
    if tol is None:
        tol = 1e-4 * max(1.0, float(np.abs(tables.stage.min(axis=1)).max()))
    alpha = tables.discount
    threshold = tol * (1.0 - alpha) / (2.0 * alpha)
    mask = _target_mask(n_grid, pi_grid)
    values = np.zeros(n_grid)
    for it in range(1, max_iter + 1):
        new_values, choice = tables.sweep(values, mask)
        residual = float(np.max(np.abs(new_values - values)))
        values = new_values
        if residual <= threshold:
            return ValueIterationResult(values=ValueFunction(tables.grid, values),
                                        policy_targets=tables.grid[choice],
                                        policy_idx=choice, iterations=it,
                                        residual=residual, tol=tol)
    raise ConvergenceError("value iteration did not converge", residual, max_iter)


def band_from_greedy(result: ValueIterationResult):
    """Read the idle band off a greedy policy.

    Returns the band spanned by the extreme-state targets and the worst
    deviation, in cells, of the greedy policy from clamping into it.
    """
    choice = result.policy_idx
    low_idx, high_idx = int(choice[0]), int(choice[-1])
    clamped = np.clip(np.arange(choice.size), low_idx, high_idx)
    deviation = int(np.max(np.abs(choice - clamped)))
    grid = result.values.grid
    return ThresholdPolicy(grid[low_idx], grid[high_idx]), deviation


def continuation_marginal(target: float, values: ValueFunction, model: CostModel) -> float:
    """Discounted marginal continuation value of raising the target.

    Averages the value-function slope over where the next stage starts,
    excluding events large enough to pin the SoC at a boundary, where
    the marginal vanishes.
    """
    tables = _GridTables(model, values.grid.size)
    return _continuation_marginal(tables, values.derivative(), target)


def _continuation_marginal(tables: _GridTables, slope: np.ndarray, target: float) -> float:
    w_up, _, _ = tables._directional_weights(float(target), True)
    w_dn, _, _ = tables._directional_weights(float(target), False)
    return tables.discount * (tables.p_over * float(w_up @ slope)
                              + tables.p_under * float(w_dn @ slope))


def solve_thresholds_by_roots(model: CostModel, values: ValueFunction) -> ThresholdPolicy:
    """Thresholds as roots of the one-sided optimality conditions.

    Each condition is the stage-cost marginal scaled to the full SoC
    swing plus the continuation marginal; both are non-decreasing in
    the target. A condition positive at 0 pins its threshold to 0, one
    negative at 1 pins it to 1.
    """
    tables = _GridTables(model, values.grid.size)
    slope = values.derivative()
    cap = model.battery.capacity_kwh

    def condition(side: int):
        def phi(pi: float) -> float:
            up, down = stage_cost_marginals(pi, model)
            rate = up if side == 0 else down
            return rate * cap + _continuation_marginal(tables, slope, pi)
        return phi

    thresholds = []
    for side in (0, 1):
        phi = condition(side)
        if phi(0.0) >= 0.0:
            thresholds.append(0.0)
        elif phi(1.0) <= 0.0:
            thresholds.append(1.0)
        else:
            thresholds.append(float(brentq(phi, 0.0, 1.0, xtol=1e-10)))
    low, high = thresholds
    high = max(high, low)
    return ThresholdPolicy(low, high)


def build_transition_matrix(policy: ThresholdPolicy, model: CostModel,
                            n_grid: int = 201) -> TransitionMatrix:
    """Stage transition matrix of the SoC chain under a band policy."""
    tables = _GridTables(model, n_grid)
    targets = np.clip(tables.grid, policy.low, policy.high)
    rows = [tables.transition_row(i, float(targets[i])) for i in range(n_grid)]
    return TransitionMatrix(tables.grid, np.stack(rows))


def policy_value(policy: ThresholdPolicy, model: CostModel,
                 n_grid: int = 201) -> ValueFunction:
    """Exact discounted value of a fixed band policy.

    Solves the policy-fixed linear system with stage costs evaluated by
    quadrature, so it is an independent check on both threshold
    methods. The policy thresholds need not lie on the grid.
    """
    from .costs import one_stage_cost
    chain = build_transition_matrix(policy, model, n_grid=n_grid)
    grid = chain.grid
    targets = np.clip(grid, policy.low, policy.high)
    h = np.array([one_stage_cost(float(s), float(t), model)
                  for s, t in zip(grid, targets)])
    a = np.eye(n_grid) - model.market.discount * chain.matrix
    return ValueFunction(grid, np.linalg.solve(a, h))


def solve_thresholds_direct(model: CostModel, n_grid: int = 201,
                            coarse_step: int | None = None) -> DirectSearchResult:
    """Pick the band minimizing the average policy-fixed value.

    Scores every coarse pair (low <= high) of grid targets by solving
    the linear fixed-point system of the clamp policy and averaging the
    resulting value vector under uniform state weights, then refines
    once at single-cell resolution around the best coarse cell. Ties
    within scoring noise resolve to the widest band.
    """
    tables = _GridTables(model, n_grid)
    if coarse_step is None:
        coarse_step = max(1, (n_grid - 1) // 20)
    coarse = sorted(set(range(0, n_grid, coarse_step)) | {n_grid - 1})
    best, n_eval, scores = None, 0, []

    def evaluate(lo: int, hi: int):
        targets_idx = np.clip(np.arange(n_grid), lo, hi)
        p = np.empty((n_grid, n_grid))
        for i in range(n_grid):
            p[i] = tables.aligned_row(i, int(targets_idx[i]))
        h = tables.stage_cost_under(targets_idx)
        a = np.eye(n_grid) - tables.discount * p
        values = np.linalg.solve(a, h)
        return float(values.mean()), values

    def consider(lo: int, hi: int, score: float, values: np.ndarray):
        nonlocal best
        if best is None:
            best = (score, lo, hi, values)
            return
        tol = 1e-9 * (1.0 + abs(best[0]))
        if score < best[0] - tol:
            best = (score, lo, hi, values)
        elif abs(score - best[0]) <= tol:
            # degenerate objective: prefer the widest band, then the lowest
            if (hi - lo, -lo) > (best[2] - best[1], -best[1]):
                best = (score, lo, hi, values)

    for a_idx, lo in enumerate(coarse):
        for hi in coarse[a_idx:]:
            score, values = evaluate(lo, hi)
            scores.append(score)
            consider(lo, hi, score, values)
            n_eval += 1
    _, lo0, hi0, _ = best
    for lo in range(max(0, lo0 - coarse_step), min(n_grid - 1, lo0 + coarse_step) + 1):
        for hi in range(max(lo, hi0 - coarse_step), min(n_grid - 1, hi0 + coarse_step) + 1):
            score, values = evaluate(lo, hi)
            consider(lo, hi, score, values)
            n_eval += 1
    score, lo, hi, values = best
    spread = max(scores) - min(scores)
    degenerate = spread <= 1e-9 * (1.0 + abs(score))
    policy = ThresholdPolicy(tables.grid[lo], tables.grid[hi])
    return DirectSearchResult(policy=policy, values=ValueFunction(tables.grid, values),
                              score=score, degenerate=degenerate, n_evaluated=n_eval)
