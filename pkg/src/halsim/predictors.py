"""Short-term throughput predictors and the relative prediction error."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import kernels
from .errors import EmptyInput, SeriesTooShort, TooFewSamples
from .traces import WindowedSeries

RHO_MIN_BPS = 1.0e4

# parameter search for SES / Holt-Winters
SES_GRID_STEP = 0.01
HW_GRID_STEP = 0.02
N_REFINE = 6
MIN_STEP = 1e-7
_TIE_RTOL = 1e-12

MIN_PAST = {"SMA": 1, "SES": 2, "LinExt": 2, "HW": 3}
MEAN_TYPES = ("ar", "gm", "hm")


@dataclass(frozen=True)
class PredictorSpec:
    kind: str
    n_past: int
    mean_type: str = "ar"

    def __post_init__(self):
        if self.kind not in MIN_PAST:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.n_past < MIN_PAST[self.kind]:
            raise ValueError(f"{self.kind} needs n_past >= {MIN_PAST[self.kind]}")
        if self.kind == "SMA" and self.mean_type not in MEAN_TYPES:
            raise ValueError(f"unknown mean type {self.mean_type!r}")

    @classmethod
    def parse(cls, text: str) -> "PredictorSpec":
        """Parse the ``type:n:parameters`` shorthand, e.g. ``SMA:10:hm``."""
        parts = text.strip().split(":")
        if len(parts) < 2:
            raise ValueError(f"malformed predictor spec {text!r}")
        kind = {"sma": "SMA", "ses": "SES", "linext": "LinExt", "hw": "HW"}.get(parts[0].lower())
        if kind is None:
            raise ValueError(f"unknown predictor kind in {text!r}")
        mean_type = parts[2] if kind == "SMA" and len(parts) > 2 else "ar"
        return cls(kind, int(parts[1]), mean_type)

    @property
    def label(self) -> str:
        if self.kind == "SMA":
            return f"SMA:{self.n_past}:{self.mean_type}"
        if self.kind in ("SES", "HW"):
            return f"{self.kind}:{self.n_past}:mse"
        return f"{self.kind}:{self.n_past}"


@dataclass(frozen=True)
class PredictionRecord:
    t_issued: float
    horizon_s: int
    rho_hat: float
    rho_actual: float
    signed_error: float
    fallback: bool = False


# --------------------------------------------------------------------------
# predictors
# --------------------------------------------------------------------------

def _sma(past, mean_type):
    x = np.asarray(past, dtype=float)
    if x.size == 0:
        raise EmptyInput("SMA needs at least one past value")
    if mean_type == "ar":
        return float(x.mean()), False
    if np.any(x <= 0):
        return float(x.mean()), True
    if mean_type == "gm":
        return float(np.exp(np.log(x).mean())), False
    return float(x.size / np.sum(1.0 / x)), False


def predict_sma(past: Sequence[float], mean_type: str = "ar") -> float:
    """Arithmetic, geometric or harmonic mean of the past values.

    gm/hm fall back to the arithmetic mean when a value is not positive.
    """
    return _sma(past, mean_type)[0]


def _tie_tol(x):
    return _TIE_RTOL * (float(np.dot(x, x)) + 1e-300)


def _as_series(past, minimum, name):
    x = np.ascontiguousarray(past, dtype=float)
    if x.size < minimum:
        raise TooFewSamples(f"{name} needs at least {minimum} past values")
    return x


def fit_ses(past) -> tuple:
    """Return ``(alpha, mse)`` minimizing the one-step in-sample error."""
    x = _as_series(past, 2, "SES")
    alpha, sse = kernels.ses_fit(x, SES_GRID_STEP, _tie_tol(x), N_REFINE)
    return float(alpha), float(sse) / (x.size - 1)


def predict_ses(past: Sequence[float], alpha: float = None) -> float:
    x = _as_series(past, 2, "SES")
    if alpha is None:
        alpha = fit_ses(x)[0]
    return float(kernels.ses_forecast(x, float(alpha)))


def fit_hw(past) -> tuple:
    """Return ``(alpha, beta, mse)`` for Holt-Winters double smoothing."""
    x = _as_series(past, 3, "HW")
    a, b, sse = kernels.hw_fit(x, HW_GRID_STEP, _tie_tol(x), N_REFINE, MIN_STEP)
    return float(a), float(b), float(sse) / (x.size - 2)


def predict_hw(past: Sequence[float], alpha: float = None, beta: float = None) -> float:
    x = _as_series(past, 3, "HW")
    if alpha is None or beta is None:
        alpha, beta, _ = fit_hw(x)
    return float(kernels.hw_forecast(x, float(alpha), float(beta)))


def predict_linext(past: Sequence[float]) -> float:
    """Least-squares line through (1, x1)..(n, xn), evaluated at n+1."""
    x = _as_series(past, 2, "LinExt")
    n = x.size
    t = np.arange(1, n + 1, dtype=float)
    tc = t - t.mean()
    slope = float(np.dot(tc, x - x.mean()) / np.dot(tc, tc))
    return float(x.mean() + slope * (n + 1 - t.mean()))


def _predict_flagged(spec: PredictorSpec, past) -> tuple:
    if spec.kind == "SMA":
        return _sma(past, spec.mean_type)
    return PREDICTORS[spec.kind](past), False


PREDICTORS: Dict[str, Callable] = {
    "SMA": predict_sma,
    "SES": predict_ses,
    "LinExt": predict_linext,
    "HW": predict_hw,
}


def predict(spec: PredictorSpec, past: Sequence[float]) -> float:
    return _predict_flagged(spec, past)[0]


# --------------------------------------------------------------------------
# error metric
# --------------------------------------------------------------------------

def signed_relative_error(rho_hat, rho, rho_min: float = RHO_MIN_BPS):
    """Relative error without the absolute value; positive means overestimation.

    Both throughputs are floored at ``rho_min`` first, so the result lies in
    (-1, inf). Works elementwise on arrays.
    """
    if not rho_min > 0:
        raise ValueError("rho_min must be positive")
    floor_actual = np.maximum(rho, rho_min)
    return (np.maximum(rho_hat, rho_min) - floor_actual) / floor_actual


def relative_error(rho_hat, rho, rho_min: float = RHO_MIN_BPS):
    return np.abs(signed_relative_error(rho_hat, rho, rho_min))


# --------------------------------------------------------------------------
# evaluation protocol
# --------------------------------------------------------------------------

def horizon_means(series: WindowedSeries, horizon_s: int) -> np.ndarray:
    """Mean throughput over ``[t, t+horizon_s)`` for every integer t."""
    if series.window_s == horizon_s:
        return np.asarray(series.values, dtype=float)
    if series.window_s != 1:
        raise ValueError("series must use 1 s windows or the horizon length")
    v = np.asarray(series.values, dtype=float)
    if horizon_s > v.size:
        raise SeriesTooShort(f"horizon {horizon_s} s exceeds the series")
    csum = np.concatenate(([0.0], np.cumsum(v)))
    return (csum[horizon_s:] - csum[:-horizon_s]) / horizon_s


def evaluate_predictor(series: WindowedSeries, spec: PredictorSpec, horizon_s: int,
                       rho_min: float = RHO_MIN_BPS) -> List[PredictionRecord]:
    """Issue a prediction every second and score it against the realized mean.

    The inputs are the ``n_past`` most recent non-overlapping horizon-length
    means ending at the issue time.
    """
    means = horizon_means(series, horizon_s)
    first = spec.n_past * horizon_s
    last = means.size - 1
    if last < first:
        raise SeriesTooShort(
            f"{spec.label} at horizon {horizon_s} s needs {first + horizon_s} s of data")
    records = []
    offsets = horizon_s * np.arange(spec.n_past, 0, -1)
    for t in range(first, last + 1):
        past = means[t - offsets]
        rho_hat, flagged = _predict_flagged(spec, past)
        actual = float(means[t])
        err = float(signed_relative_error(rho_hat, actual, rho_min))
        records.append(PredictionRecord(float(t), horizon_s, rho_hat, actual, err, flagged))
    return records


THRESHOLDS = (0.2, 0.5, 1.0)


def threshold_summary(records: Sequence[PredictionRecord], thresholds=THRESHOLDS):
    """Fraction of under/overestimations with relative error below each threshold."""
    err = np.array([r.signed_error for r in records], dtype=float)
    out = []
    for side, mask in (("under", err <= 0), ("over", err > 0)):
        vals = np.abs(err[mask])
        if vals.size == 0:
            continue
        row = {"side": side, "n": int(vals.size)}
        for th in thresholds:
            row[f"frac_lt_{th}"] = float(np.mean(vals < th))
        out.append(row)
    return out


ERROR_CSV_FIELDS = ["trace_id", "predictor", "horizon_s", "t_issued",
                    "rho_hat", "rho_actual", "signed_error"]


def write_error_csv(path, rows):
    """rows: iterable of (trace_id, predictor_label, PredictionRecord)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERROR_CSV_FIELDS)
        for trace_id, label, r in rows:
            w.writerow([trace_id, label, r.horizon_s, repr(r.t_issued),
                        repr(r.rho_hat), repr(r.rho_actual), repr(r.signed_error)])


def read_error_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append((row["trace_id"], row["predictor"], PredictionRecord(
                float(row["t_issued"]), int(row["horizon_s"]), float(row["rho_hat"]),
                float(row["rho_actual"]), float(row["signed_error"]))))
    return out
