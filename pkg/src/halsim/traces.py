"""Throughput traces: loading, synthesis, sliding windows and summary statistics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (DegenerateSeries, GapError, InvalidSpec, ParseError,
                     WindowTooLarge)


@dataclass(frozen=True)
class ThroughputTrace:
    """Bytes received in each one-second slot ``[t, t+1)``, starting at t=0."""

    id: str
    bytes: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.bytes, dtype=np.int64)
        if arr.ndim != 1:
            raise ValueError("trace bytes must be one-dimensional")
        if np.any(arr < 0):
            raise ValueError("negative byte count in trace")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "bytes", arr)

    @property
    def duration(self) -> int:
        return int(self.bytes.shape[0])

    @property
    def samples(self):
        return [(t, int(b)) for t, b in enumerate(self.bytes)]

    @property
    def bits_per_second(self) -> np.ndarray:
        return self.bytes.astype(float) * 8.0

    def to_csv(self, path, header=True):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write("t,bytes\n")
            for t, b in enumerate(self.bytes):
                fh.write(f"{t},{int(b)}\n")


@dataclass(frozen=True)
class WindowedSeries:
    """Mean throughput (bit/s) over sliding windows shifted by one second."""

    window_s: int
    values: np.ndarray = field(repr=False)
    step_s: int = 1

    def __len__(self):
        return int(self.values.shape[0])


@dataclass(frozen=True)
class TraceStatistics:
    median_bps: float
    cv: Optional[float]
    acf1: Optional[float]
    acf1_diff: Optional[float]


@dataclass(frozen=True)
class SyntheticTraceSpec:
    seed: int
    duration_s: int = 1800
    mean_bps: float = 1.0e6
    cv_target: float = 0.6
    regime_switch_rate: float = 0.02
    diff_anticorrelation: float = -0.5
    id: Optional[str] = None

    def validate(self):
        if self.duration_s <= 0:
            raise InvalidSpec("duration_s must be positive")
        if not self.mean_bps > 0:
            raise InvalidSpec("mean_bps must be positive")
        if not self.cv_target >= 0:
            raise InvalidSpec("cv_target must be non-negative")
        if not 0.0 <= self.regime_switch_rate <= 1.0:
            raise InvalidSpec("regime_switch_rate must lie in [0, 1]")
        if not -1.0 <= self.diff_anticorrelation <= 0.0:
            raise InvalidSpec("diff_anticorrelation must lie in [-1, 0]")

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------

def parse_trace(text: str, trace_id: str = "trace") -> ThroughputTrace:
    rows = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ParseError(f"expected 't,bytes', got {line!r}", lineno)
        try:
            t, b = int(parts[0]), int(parts[1])
        except ValueError:
            if not rows and lineno == 1:
                continue  # header
            raise ParseError(f"non-integer field in {line!r}", lineno) from None
        if b < 0:
            raise ValueError(f"line {lineno}: negative byte count {b}")
        expected = len(rows)
        if t != expected:
            raise GapError(f"line {lineno}: expected t={expected}, got t={t}")
        rows.append(b)
    if not rows:
        raise ParseError("trace contains no samples")
    return ThroughputTrace(trace_id, np.array(rows, dtype=np.int64))


def load_trace(path, format: str = "per-second-bytes-csv") -> ThroughputTrace:
    if format != "per-second-bytes-csv":
        raise ValueError(f"unsupported trace format {format!r}")
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_trace(text, trace_id=path.stem)


# --------------------------------------------------------------------------
# windowing and statistics
# --------------------------------------------------------------------------

def window(trace: ThroughputTrace, window_s: int) -> WindowedSeries:
    window_s = int(window_s)
    if window_s < 1 or window_s > trace.duration:
        raise WindowTooLarge(
            f"window of {window_s} s does not fit a {trace.duration} s trace")
    csum = np.concatenate(([0], np.cumsum(trace.bytes, dtype=np.int64)))
    sums = csum[window_s:] - csum[:-window_s]
    return WindowedSeries(window_s, sums.astype(float) * 8.0 / window_s)


def _lag1_pearson(x: np.ndarray) -> Optional[float]:
    if x.shape[0] < 3:
        return None
    a, b = x[:-1], x[1:]
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0:
        return None
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def statistics(series: WindowedSeries) -> TraceStatistics:
    """Median, CV and lag-1 autocorrelations of a windowed series.

    Autocorrelations of a constant sequence are reported as ``None``
    (undefined), never as 0.
    """
    x = np.asarray(series.values, dtype=float)
    if x.shape[0] < 3:
        raise DegenerateSeries("need at least 3 values")
    mean = float(x.mean())
    cv = float(x.std() / mean) if mean > 0 else None
    return TraceStatistics(
        median_bps=float(np.median(x)),
        cv=cv,
        acf1=_lag1_pearson(x),
        acf1_diff=_lag1_pearson(np.diff(x)),
    )


# --------------------------------------------------------------------------
# synthesis
# --------------------------------------------------------------------------

# log-level of the low regime relative to the high one
_LOW_REGIME_LOG_OFFSET = math.log(0.3)
_NOISE_SCALE = 0.45


def _cv(x):
    m = x.mean()
    return float(x.std() / m) if m > 0 else 0.0


def generate_trace(spec: SyntheticTraceSpec) -> ThroughputTrace:
    """Two-state regime-switching lognormal rate, calibrated to the target.

    A log-space process (regime level + white noise + optional
    sign-alternating kick) is raised to the power that realizes
    ``cv_target`` and rescaled to ``mean_bps``.
    """
    spec.validate()
    trace_id = spec.id or f"synthetic-{spec.seed}"
    n = int(spec.duration_s)
    per_second = spec.mean_bps / 8.0
    if spec.cv_target == 0:
        return ThroughputTrace(trace_id, np.full(n, int(round(per_second)), dtype=np.int64))

    rng = np.random.default_rng(spec.seed)
    switches = rng.random(n) < spec.regime_switch_rate
    regime = np.cumsum(switches) % 2
    noise = rng.standard_normal(n)
    kick = np.abs(rng.standard_normal(n)) * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    log_rate = (_LOW_REGIME_LOG_OFFSET * regime + _NOISE_SCALE * noise
                + _NOISE_SCALE * abs(spec.diff_anticorrelation) * kick)
    log_rate -= log_rate.mean()

    def cv_at(k):
        return _cv(np.exp(k * log_rate))

    lo, hi = 0.0, 1.0
    while cv_at(hi) < spec.cv_target and hi < 64.0:
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if cv_at(mid) < spec.cv_target:
            lo = mid
        else:
            hi = mid
    rate = np.exp(0.5 * (lo + hi) * log_rate)
    rate *= per_second / rate.mean()
    return ThroughputTrace(trace_id, np.maximum(np.rint(rate), 0).astype(np.int64))


def bundled_specs(count: int = 10, duration_s: int = 1800, seed: int = 2015):
    """Synthetic high-variance suite standing in for recorded WLAN traces."""
    rng = np.random.default_rng(seed)
    specs = []
    for k in range(count):
        specs.append(SyntheticTraceSpec(
            seed=int(seed * 1000 + k),
            duration_s=duration_s,
            mean_bps=float(rng.uniform(0.6e6, 3.0e6)),
            cv_target=float(rng.uniform(0.5, 0.9)),
            regime_switch_rate=float(rng.uniform(0.005, 0.05)),
            diff_anticorrelation=float(-rng.uniform(0.2, 0.8)),
            id=f"synthetic-{k:02d}",
        ))
    return specs


def load_specs_json(path) -> list:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("traces", [data])
    return [SyntheticTraceSpec.from_dict(d) for d in data]


def statistics_table(traces: Sequence[ThroughputTrace], windows=(1,)):
    rows = []
    for tr in traces:
        for w in windows:
            st = statistics(window(tr, w))
            rows.append({"trace_id": tr.id, "window_s": w, **asdict(st)})
    return rows


def write_rows_csv(path, rows, fieldnames=None):
    fieldnames = fieldnames or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
