"""Frequency-trace ingestion and event extraction.

A trace file carries one metadata line (comma-separated key=value
pairs, at least sample_rate_hz and nominal_hz) followed by one grid
frequency reading per line. The deviation from nominal is segmented
into idle intervals, where the frequency stays inside the deadband,
and excursion events, where it leaves the band in one direction until
it returns. Alternating idle/excursion pairs feed the empirical
distribution fit.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .distributions import ScalarDistribution, StochasticModel, _ro

_SANITY_BAND_HZ = 5.0


class TraceParseError(ValueError):
    """Malformed trace file; line is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InsufficientEventsError(RuntimeError):
    """Too few extracted events to fit distributions."""

    def __init__(self, n_events: int, required: int):
        self.n_events = n_events
        self.required = required
        super().__init__(f"need at least {required} events, extracted {n_events}")


@dataclass(frozen=True)
class FrequencyTrace:
    """Uniformly sampled grid frequency, in Hz."""

    values_hz: np.ndarray
    sample_rate_hz: float
    nominal_hz: float

    def __post_init__(self):
        object.__setattr__(self, "values_hz", _ro(self.values_hz))
        if self.values_hz.ndim != 1 or self.values_hz.size == 0:
            raise ValueError("values_hz must be a non-empty 1-d array")
        if self.sample_rate_hz <= 0 or self.nominal_hz <= 0:
            raise ValueError("sample_rate_hz and nominal_hz must be positive")

    @property
    def n_samples(self) -> int:
        return self.values_hz.size

    @property
    def duration_hours(self) -> float:
        return self.n_samples / self.sample_rate_hz / 3600.0

    def deviation_hz(self) -> np.ndarray:
        return self.values_hz - self.nominal_hz

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"sample_rate_hz={self.sample_rate_hz:.12g},"
                     f"nominal_hz={self.nominal_hz:.12g}\n")
            np.savetxt(fh, self.values_hz, fmt="%.12g")


def _parse_header(line: str) -> dict:
    fields = {}
    for part in line.strip().split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise TraceParseError(f"expected key=value, got {part!r}", line=1)
        key, _, val = part.partition("=")
        try:
            fields[key.strip()] = float(val)
        except ValueError:
            raise TraceParseError(f"non-numeric value for {key.strip()!r}", line=1) from None
    for need in ("sample_rate_hz", "nominal_hz"):
        if need not in fields:
            raise TraceParseError(f"missing required header field {need!r}", line=1)
    return fields


def _scan_body(lines) -> np.ndarray:
    vals = []
    for lineno, raw in lines:
        text = raw.strip()
        if not text:
            continue
        try:
            v = float(text)
        except ValueError:
            raise TraceParseError(f"expected one frequency reading, got {text!r}",
                                  line=lineno) from None
        if np.isnan(v) or np.isinf(v):
            raise TraceParseError("reading is not finite", line=lineno)
        vals.append(v)
    return np.asarray(vals, dtype=float)


def load_trace(path) -> FrequencyTrace:
    """Parse a trace file, reporting the offending line on failure."""
    with open(path, "r") as fh:
        first = fh.readline()
        if not first.strip():
            raise TraceParseError("empty file", line=1)
        header = _parse_header(first)
        body = fh.read()
    try:
        frame = pd.read_csv(io.StringIO(body), header=None, dtype=float)
        if frame.shape[1] != 1:
            raise ValueError("more than one column")
        values = frame.to_numpy().ravel()
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite reading")
    except (ValueError, pd.errors.ParserError):
        # slow path pins the failure to a line number
        values = _scan_body(enumerate(body.splitlines(), start=2))
    if values.size == 0:
        raise TraceParseError("no frequency readings after the header", line=2)
    nominal = header["nominal_hz"]
    off = np.abs(values - nominal) > _SANITY_BAND_HZ
    if np.any(off):
        idx = int(np.argmax(off))
        raise TraceParseError(
            f"reading {values[idx]:.6g} Hz departs more than {_SANITY_BAND_HZ:g} Hz "
            f"from nominal {nominal:g} Hz", line=idx + 2)
    return FrequencyTrace(values_hz=values, sample_rate_hz=header["sample_rate_hz"],
                          nominal_hz=nominal)


@dataclass(frozen=True)
class EventSequence:
    """Alternating idle/excursion pairs extracted from one trace.

    q holds the excursion direction: +1 over-frequency (battery
    absorbs), -1 under-frequency (battery delivers). The accounting
    fields hold trace time that did not form a complete pair, so the
    pair durations plus the accounting fields partition the trace.
    """

    i_hours: np.ndarray
    j_hours: np.ndarray
    q: np.ndarray
    p_pfc_kw: np.ndarray | None = None
    dropped_lead_hours: float = 0.0
    tail_i_hours: float = 0.0
    dropped_tail_hours: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "i_hours", _ro(self.i_hours))
        object.__setattr__(self, "j_hours", _ro(self.j_hours))
        q = np.array(self.q, dtype=np.int8)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        if not (self.i_hours.size == self.j_hours.size == self.q.size):
            raise ValueError("i_hours, j_hours, q must have equal length")
        if self.q.size and not np.all(np.abs(self.q) == 1):
            raise ValueError("q entries must be +1 or -1")
        if self.p_pfc_kw is not None:
            object.__setattr__(self, "p_pfc_kw", _ro(self.p_pfc_kw))
            if self.p_pfc_kw.size != self.q.size:
                raise ValueError("p_pfc_kw must match the event count")

    @property
    def n_events(self) -> int:
        return self.q.size

    @property
    def total_hours(self) -> float:
        return (float(self.i_hours.sum()) + float(self.j_hours.sum())
                + self.dropped_lead_hours + self.tail_i_hours + self.dropped_tail_hours)

    def with_pfc_power(self, power_kw: float) -> "EventSequence":
        return replace(self, p_pfc_kw=np.full(self.n_events, float(power_kw)))

    def to_csv(self, path) -> None:
        cols = {"i_len_h": self.i_hours, "j_len_h": self.j_hours, "q": self.q}
        if self.p_pfc_kw is not None:
            cols["p_pfc_kw"] = self.p_pfc_kw
        pd.DataFrame(cols).to_csv(path, index=False, float_format="%.12g")

    @classmethod
    def from_csv(cls, path) -> "EventSequence":
        frame = pd.read_csv(path)
        for need in ("i_len_h", "j_len_h", "q"):
            if need not in frame.columns:
                raise TraceParseError(f"event csv lacks column {need!r}")
        power = frame["p_pfc_kw"].to_numpy(float) if "p_pfc_kw" in frame.columns else None
        return cls(i_hours=frame["i_len_h"].to_numpy(float),
                   j_hours=frame["j_len_h"].to_numpy(float),
                   q=frame["q"].to_numpy(int), p_pfc_kw=power)


def _run_lengths(labels: np.ndarray):
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [labels.size]])
    return starts, ends, labels[starts]


def extract_intervals(trace: FrequencyTrace, deadband_hz: float,
                      debounce_samples: int = 5) -> EventSequence:
    """Segment a trace into idle/excursion pairs.

    Excursion runs shorter than debounce_samples are treated as idle.
    Runs that cannot form a complete pair are reported in the
    accounting fields: excursion time before the first idle run, idle
    time after the last complete pair, and a final excursion cut off by
    the end of the trace together with the idle run that preceded it.
    """
    if deadband_hz <= 0:
        raise ValueError("deadband_hz must be positive")
    if debounce_samples < 0:
        raise ValueError("debounce_samples must be non-negative")
    dev = trace.deviation_hz()
    labels = np.zeros(dev.size, dtype=np.int8)
    labels[dev > deadband_hz] = 1
    labels[dev < -deadband_hz] = -1
    starts, ends, vals = _run_lengths(labels)
    if debounce_samples > 0:
        short = (vals != 0) & ((ends - starts) < debounce_samples)
        vals = np.where(short, 0, vals)
        keep = np.concatenate([[True], np.diff(vals) != 0])
        starts, vals = starts[keep], vals[keep]
        ends = np.concatenate([starts[1:], [dev.size]])

    to_hours = 1.0 / (trace.sample_rate_hz * 3600.0)
    i_list, j_list, q_list = [], [], []
    dropped_lead = tail_i = dropped_tail = 0
    k, n_runs = 0, vals.size
    while k < n_runs and vals[k] != 0:
        dropped_lead += ends[k] - starts[k]
        k += 1
    while k < n_runs:
        i_len = ends[k] - starts[k]
        k += 1
        if k == n_runs:
            tail_i += i_len
            break
        sign = int(vals[k])
        j_len = 0
        while k < n_runs and vals[k] != 0:
            j_len += ends[k] - starts[k]
            k += 1
        if k == n_runs:
            # the excursion runs into the end of the trace: censored
            tail_i += i_len
            dropped_tail += j_len
        else:
            i_list.append(i_len)
            j_list.append(j_len)
            q_list.append(sign)
    return EventSequence(
        i_hours=np.asarray(i_list, dtype=float) * to_hours,
        j_hours=np.asarray(j_list, dtype=float) * to_hours,
        q=np.asarray(q_list, dtype=np.int8),
        dropped_lead_hours=dropped_lead * to_hours,
        tail_i_hours=tail_i * to_hours,
        dropped_tail_hours=dropped_tail * to_hours)


def fit_empirical(events: EventSequence, p_pfc_kw=None, min_events: int = 30,
                  n_samples: int = 100_000, grid_size: int = 512,
                  seed: int = 0) -> StochasticModel:
    """Fit the event model from extracted pairs.

    p_pfc_kw may be a constant reserve in kW, a ScalarDistribution, or
    None to fit the per-event powers recorded on the sequence.
    """
    if events.n_events < min_events:
        raise InsufficientEventsError(events.n_events, min_events)
    dist_i = ScalarDistribution.empirical(events.i_hours, units="h")
    dist_j = ScalarDistribution.empirical(events.j_hours, units="h")
    p_over = float(np.mean(events.q > 0))
    if p_pfc_kw is None:
        if events.p_pfc_kw is None:
            raise ValueError("no reserve power on the events; pass p_pfc_kw")
        dist_p = ScalarDistribution.empirical(events.p_pfc_kw, units="kW")
    elif isinstance(p_pfc_kw, ScalarDistribution):
        dist_p = p_pfc_kw
    else:
        dist_p = ScalarDistribution.point(float(p_pfc_kw), units="kW")
    return StochasticModel.build(dist_i, dist_j, dist_p, p_over=p_over,
                                 n_samples=n_samples, grid_size=grid_size, seed=seed)


def correlation_report(events: EventSequence, max_lag: int = 5) -> dict:
    """Lagged correlations between and within the event series.

    Entry pair[a_b][k] is the correlation of series a at event t with
    series b at event t+k, with biased normalization. Series with zero
    variance report zero correlation. The band field is the two-sided
    95 percent interval half-width for independent data.
    """
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    series = {"i": np.asarray(events.i_hours, float),
              "j": np.asarray(events.j_hours, float),
              "q": np.asarray(events.q, float)}
    n = events.n_events
    lags = min(max_lag, max(n - 1, 0))
    pairs = {}
    for a in ("i", "j", "q"):
        for b in ("i", "j", "q"):
            if a > b:
                continue
            xa, xb = series[a], series[b]
            ca, cb = xa - xa.mean(), xb - xb.mean()
            denom = np.sqrt((ca @ ca) * (cb @ cb))
            vals = np.zeros(lags + 1)
            if denom > 0:
                for k in range(lags + 1):
                    vals[k] = float(ca[:n - k] @ cb[k:]) / denom
            pairs[f"{a}_{b}"] = vals
    return {"n_events": n, "max_lag": lags,
            "band": 1.96 / np.sqrt(n) if n else np.inf, "pairs": pairs}
