"""Probability models for the frequency-regulation event process.

A reserve-selling battery alternates between idle intervals (grid
frequency inside the dead band, recharging allowed) and excursion
events during which it must inject or absorb energy. This module
represents the scalar laws of those quantities: idle length, excursion
length, deployed power, deployed energy, and the excursion sign.

Five kinds cover both trace-fitted and synthetic setups: ``point``,
``uniform`` and ``exponential`` are parametric; ``empirical`` and
``tabulated`` are table backed. Table-backed kinds share one canonical
representation, a piecewise-linear CDF on sorted knots, so the pdf is
piecewise constant and pdf, cdf and partial moments stay mutually
consistent. All numeric methods accept scalars or numpy arrays.

Canonical units: hours for times, kW for power, kWh for energy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np


def _ro(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    out.setflags(write=False)
    return out


def _maybe_scalar(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class ScalarDistribution:
    """One non-negative scalar law with exact low-order partial moments.

    Fields are populated per kind: ``rate`` for exponential, knot arrays
    ``xs``/``cdf_values`` for empirical and tabulated, and ``lower``/
    ``upper`` always hold the support edges (``upper`` is ``inf`` for
    the exponential kind). Build instances through the classmethods.
    """

    kind: str
    lower: float
    upper: float
    rate: float | None = None
    xs: np.ndarray | None = None
    cdf_values: np.ndarray | None = None
    units: str = ""

    _KINDS = ("point", "uniform", "exponential", "empirical", "tabulated")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if not np.isfinite(self.lower) or self.lower < 0:
            raise ValueError("support must start at a finite value >= 0")

    # ------------------------------------------------------------------
    # constructors

    @classmethod
    def point(cls, value: float, units: str = "") -> "ScalarDistribution":
        """Degenerate law concentrated at a single value."""
        value = float(value)
        if value < 0 or not np.isfinite(value):
            raise ValueError("point mass must sit at a finite value >= 0")
        return cls(kind="point", lower=value, upper=value, units=units)

    @classmethod
    def uniform(cls, lower: float, upper: float, units: str = "") -> "ScalarDistribution":
        lower, upper = float(lower), float(upper)
        if upper == lower:
            return cls.point(lower, units)
        if not lower < upper:
            raise ValueError("uniform requires lower < upper")
        return cls(kind="uniform", lower=lower, upper=upper, units=units)

    @classmethod
    def exponential(cls, rate: float | None = None, mean: float | None = None,
                    units: str = "") -> "ScalarDistribution":
        """Exponential law given either its rate or its mean."""
        if (rate is None) == (mean is None):
            raise ValueError("give exactly one of rate or mean")
        if rate is None:
            rate = 1.0 / float(mean)
        rate = float(rate)
        if rate <= 0:
            raise ValueError("rate must be positive")
        return cls(kind="exponential", lower=0.0, upper=np.inf, rate=rate)._with_units(units)

    @classmethod
    def empirical(cls, samples, units: str = "") -> "ScalarDistribution":
        """Empirical law of observed samples, all finite and >= 0.

        The counting CDF at the distinct sample values is interpolated
        linearly, anchored at zero, so the CCDF at any sample value
        matches plain counting exactly.
        """
        s = np.asarray(samples, dtype=float).ravel()
        if s.size == 0:
            raise ValueError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValueError("samples must be finite and >= 0")
        vals, counts = np.unique(s, return_counts=True)
        if vals[0] == vals[-1]:
            return cls.point(vals[0], units)
        cdf = np.cumsum(counts) / s.size
        cdf[-1] = 1.0
        if vals[0] > 0.0:
            vals = np.concatenate([[0.0], vals])
            cdf = np.concatenate([[0.0], cdf])
        return cls(kind="empirical", lower=float(vals[0]), upper=float(vals[-1]),
                   xs=_ro(vals), cdf_values=_ro(cdf), units=units)

    @classmethod
    def tabulated(cls, xs, cdf, units: str = "") -> "ScalarDistribution":
        """Law defined by CDF values on strictly increasing knots."""
        xs = np.asarray(xs, dtype=float).ravel()
        cdf = np.asarray(cdf, dtype=float).ravel()
        if xs.size != cdf.size or xs.size < 2:
            raise ValueError("need matching knot and cdf arrays with >= 2 entries")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(np.diff(cdf) < 0):
            raise ValueError("cdf values must be non-decreasing")
        if abs(cdf[0]) > 1e-9 or abs(cdf[-1] - 1.0) > 1e-9:
            raise ValueError("cdf must run from 0 to 1")
        cdf = cdf.copy()
        cdf[0], cdf[-1] = 0.0, 1.0
        return cls(kind="tabulated", lower=float(xs[0]), upper=float(xs[-1]),
                   xs=_ro(xs), cdf_values=_ro(cdf), units=units)

    def _with_units(self, units: str) -> "ScalarDistribution":
        if units == self.units:
            return self
        return ScalarDistribution(kind=self.kind, lower=self.lower, upper=self.upper,
                                  rate=self.rate, xs=self.xs, cdf_values=self.cdf_values,
                                  units=units)

    # ------------------------------------------------------------------
    # table helpers

    @cached_property
    def _cell_density(self) -> np.ndarray:
        return np.diff(self.cdf_values) / np.diff(self.xs)

    @cached_property
    def _knot_moments(self) -> np.ndarray:
        # prefix values of E[X 1{X <= knot}] at every knot
        x = self.xs
        cells = self._cell_density * (x[1:] ** 2 - x[:-1] ** 2) / 2.0
        return np.concatenate([[0.0], np.cumsum(cells)])

    def _cell_index(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.xs, x, side="right") - 1
        return np.clip(idx, 0, self.xs.size - 2)

    # ------------------------------------------------------------------
    # densities and moments

    def cdf(self, x):
        """P{X <= x}."""
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            out = np.where(x >= self.lower, 1.0, 0.0)
        elif self.kind == "uniform":
            out = np.clip((x - self.lower) / (self.upper - self.lower), 0.0, 1.0)
        elif self.kind == "exponential":
            out = -np.expm1(-self.rate * np.clip(x, 0.0, None))
        else:
            out = np.interp(x, self.xs, self.cdf_values)
        return _maybe_scalar(out)

    def ccdf(self, x):
        """P{X > x}, the complementary CDF."""
        x = np.asarray(x, dtype=float)
        if self.kind == "exponential":
            return _maybe_scalar(np.exp(-self.rate * np.clip(x, 0.0, None)))
        return _maybe_scalar(1.0 - np.asarray(self.cdf(x)))

    def pdf(self, x):
        """Density. Zero outside the support; zero for the point kind."""
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            out = np.zeros_like(x)
        elif self.kind == "uniform":
            inside = (x >= self.lower) & (x <= self.upper)
            out = np.where(inside, 1.0 / (self.upper - self.lower), 0.0)
        elif self.kind == "exponential":
            out = np.where(x >= 0, self.rate * np.exp(-self.rate * np.clip(x, 0.0, None)), 0.0)
        else:
            inside = (x >= self.lower) & (x < self.upper)
            out = np.where(inside, self._cell_density[self._cell_index(x)], 0.0)
        return _maybe_scalar(out)

    def mean(self) -> float:
        if self.kind == "point":
            return self.lower
        if self.kind == "uniform":
            return 0.5 * (self.lower + self.upper)
        if self.kind == "exponential":
            return 1.0 / self.rate
        return float(self._knot_moments[-1])

    def partial_mean(self, t):
        """E[X 1{X <= t}], exact for every kind."""
        t = np.asarray(t, dtype=float)
        if self.kind == "point":
            out = np.where(t >= self.lower, self.lower, 0.0)
        elif self.kind == "uniform":
            tc = np.clip(t, self.lower, self.upper)
            out = (tc ** 2 - self.lower ** 2) / (2.0 * (self.upper - self.lower))
        elif self.kind == "exponential":
            finite = np.isfinite(t)
            tt = np.where(finite, np.clip(t, 0.0, None), 1.0)
            val = -np.expm1(-self.rate * tt) / self.rate - tt * np.exp(-self.rate * tt)
            out = np.where(finite, val, 1.0 / self.rate)
        else:
            idx = self._cell_index(t)
            tc = np.clip(t, self.xs[0], self.xs[-1])
            out = self._knot_moments[idx] + self._cell_density[idx] * (tc ** 2 - self.xs[idx] ** 2) / 2.0
        return _maybe_scalar(out)

    def tail_expectation(self, a):
        """E[(X - a)+], the expected exceedance above level a."""
        a = np.asarray(a, dtype=float)
        out = (self.mean() - np.asarray(self.partial_mean(a))) - a * np.asarray(self.ccdf(a))
        return _maybe_scalar(np.maximum(out, 0.0))

    def quantile(self, q):
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise ValueError("quantile level must lie in [0, 1]")
        if self.kind == "point":
            out = np.full_like(q, self.lower)
        elif self.kind == "uniform":
            out = self.lower + q * (self.upper - self.lower)
        elif self.kind == "exponential":
            out = -np.log1p(-np.clip(q, 0.0, 1.0 - 1e-300)) / self.rate
        else:
            out = self._inverse_cdf(q)
        return _maybe_scalar(out)

    def _inverse_cdf(self, u: np.ndarray) -> np.ndarray:
        cs, xs = self.cdf_values, self.xs
        j = np.clip(np.searchsorted(cs, u, side="right") - 1, 0, xs.size - 2)
        rho = self._cell_density[j]
        step = np.where(rho > 0, (u - cs[j]) / np.where(rho > 0, rho, 1.0), 0.0)
        return np.minimum(xs[j] + step, xs[-1])

    def sample(self, rng: np.random.Generator, size=None):
        """Draw by inversion (table kinds) or the native generator."""
        if self.kind == "point":
            out = np.full(size, self.lower) if size is not None else self.lower
            return out
        if self.kind == "uniform":
            return rng.uniform(self.lower, self.upper, size)
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size)
        u = rng.random(size)
        out = self._inverse_cdf(np.asarray(u, dtype=float))
        return _maybe_scalar(out) if size is None else out

    def truncated_upper(self, quantile: float = 1.0 - 1e-6) -> float:
        """Finite upper edge: the support edge, or a quantile if unbounded."""
        if np.isfinite(self.upper):
            return self.upper
        return float(self.quantile(quantile))

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind, "units": self.units}
        if self.kind == "point":
            d["value"] = self.lower
        elif self.kind == "uniform":
            d["lower"], d["upper"] = self.lower, self.upper
        elif self.kind == "exponential":
            d["rate"] = self.rate
        else:
            d["table"] = [{"x": float(x), "cdf": float(c)}
                          for x, c in zip(self.xs, self.cdf_values)]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScalarDistribution":
        kind = d.get("kind")
        units = d.get("units", "")
        if kind == "point":
            return cls.point(d["value"], units)
        if kind == "uniform":
            return cls.uniform(d["lower"], d["upper"], units)
        if kind == "exponential":
            return cls.exponential(rate=d.get("rate"), mean=d.get("mean"), units=units)
        if kind in ("empirical", "tabulated"):
            xs = [row["x"] for row in d["table"]]
            cs = [row["cdf"] for row in d["table"]]
            out = cls.tabulated(xs, cs, units)
            if kind == "empirical" and out.kind == "tabulated":
                object.__setattr__(out, "kind", "empirical")
            return out
        raise ValueError(f"unknown distribution kind {kind!r}")

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ScalarDistribution":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class PfcEnergyDistribution:
    """Law of the energy deployed over one excursion event, in kWh."""

    dist: ScalarDistribution

    def __post_init__(self):
        if self.dist.lower < 0:
            raise ValueError("event energy cannot be negative")

    def cdf(self, x):
        return self.dist.cdf(x)

    def ccdf(self, x):
        return self.dist.ccdf(x)

    def pdf(self, x):
        return self.dist.pdf(x)

    def mean(self) -> float:
        return self.dist.mean()

    def tail_expectation(self, a):
        return self.dist.tail_expectation(a)

    def partial_mean(self, t):
        return self.dist.partial_mean(t)

    def sample(self, rng: np.random.Generator, size=None):
        return self.dist.sample(rng, size)

    @property
    def upper(self) -> float:
        return self.dist.upper


def build_energy_distribution(p_pfc: ScalarDistribution, j: ScalarDistribution,
                              n_samples: int = 100_000, grid_size: int = 512,
                              truncation_quantile: float | None = 1.0 - 1e-6,
                              seed: int = 0) -> PfcEnergyDistribution:
    """Tabulate the law of deployed energy, the product power * duration.

    Draws ``n_samples`` independent (power, duration) pairs and returns
    the empirical CDF of their product on ``grid_size`` evenly spaced
    knots. Unbounded factors are cut at ``truncation_quantile``; pass
    ``None`` to reject unbounded inputs instead. A fixed ``seed`` makes
    the table reproducible.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 10000")
    if grid_size < 16:
        raise ValueError("grid_size must be at least 16")
    uppers = []
    for d in (p_pfc, j):
        if np.isfinite(d.upper):
            uppers.append(d.upper)
        elif truncation_quantile is None:
            raise ValueError("unbounded support requires a truncation quantile")
        else:
            uppers.append(d.truncated_upper(truncation_quantile))
    if p_pfc.kind == "point" and j.kind == "point":
        return PfcEnergyDistribution(ScalarDistribution.point(p_pfc.lower * j.lower, "kwh"))
    bound = uppers[0] * uppers[1]
    if bound <= 0:
        return PfcEnergyDistribution(ScalarDistribution.point(0.0, "kwh"))
    rng = np.random.default_rng(seed)
    draws = np.asarray(p_pfc.sample(rng, n_samples)) * np.asarray(j.sample(rng, n_samples))
    if draws.max() == draws.min():
        return PfcEnergyDistribution(ScalarDistribution.point(draws[0], "kwh"))
    draws.sort()
    knots = np.linspace(0.0, bound, grid_size)
    cdf = np.searchsorted(draws, knots, side="right") / n_samples
    cdf[0] = 0.0
    cdf[-1] = 1.0
    return PfcEnergyDistribution(ScalarDistribution.tabulated(knots, cdf, "kwh"))


@dataclass(frozen=True)
class ExcursionSignModel:
    """Bernoulli excursion sign: +1 over-frequency, battery absorbs."""

    p_over: float

    def __post_init__(self):
        if not 0.0 <= self.p_over <= 1.0:
            raise ValueError("p_over must lie in [0, 1]")

    @property
    def p_under(self) -> float:
        return 1.0 - self.p_over

    def sample(self, rng: np.random.Generator, size=None):
        draw = rng.random(size)
        out = np.where(np.asarray(draw) < self.p_over, 1, -1)
        return int(out) if size is None else out.astype(np.int8)

    def to_dict(self) -> dict[str, Any]:
        return {"p_over": self.p_over}


@dataclass(frozen=True)
class StochasticModel:
    """All stochastic primitives of the idle/excursion renewal process."""

    dist_i: ScalarDistribution
    dist_j: ScalarDistribution
    dist_p_pfc: ScalarDistribution
    signs: ExcursionSignModel
    energy: PfcEnergyDistribution

    @classmethod
    def build(cls, dist_i: ScalarDistribution, dist_j: ScalarDistribution,
              dist_p_pfc: ScalarDistribution, p_over: float,
              n_samples: int = 100_000, grid_size: int = 512,
              seed: int = 0) -> "StochasticModel":
        """Assemble the model, tabulating the event-energy law."""
        energy = build_energy_distribution(dist_p_pfc, dist_j,
                                           n_samples=n_samples, grid_size=grid_size,
                                           seed=seed)
        return cls(dist_i=dist_i, dist_j=dist_j, dist_p_pfc=dist_p_pfc,
                   signs=ExcursionSignModel(p_over), energy=energy)

    def to_dict(self) -> dict[str, Any]:
        return {
            "i_hours": self.dist_i.to_dict(),
            "j_hours": self.dist_j.to_dict(),
            "p_pfc_kw": self.dist_p_pfc.to_dict(),
            "p_over": self.signs.p_over,
            "energy_kwh": self.energy.dist.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StochasticModel":
        return cls(dist_i=ScalarDistribution.from_dict(d["i_hours"]),
                   dist_j=ScalarDistribution.from_dict(d["j_hours"]),
                   dist_p_pfc=ScalarDistribution.from_dict(d["p_pfc_kw"]),
                   signs=ExcursionSignModel(d["p_over"]),
                   energy=PfcEnergyDistribution(ScalarDistribution.from_dict(d["energy_kwh"])))
