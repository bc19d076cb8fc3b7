"""Models of the signed relative prediction error.

Underestimation magnitudes live on [0, 1] and overestimation magnitudes on
[0, inf). Each side is described by a truncated parametric distribution,
and the two are glued together with the probability of underestimating.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from . import _vectorized as vec
from . import kernels
from .errors import (DegenerateTruncation, EmptyInput, FitDiverged,
                     HorizonMismatch, TooFewSamples)

FAMILIES = ("exponential", "normal", "logistic", "lomax")
FAMILY_CODE = {"exponential": kernels.EXPONENTIAL, "normal": kernels.NORMAL,
               "logistic": kernels.LOGISTIC, "lomax": kernels.LOMAX}
PARAM_NAMES = {
    "exponential": ("rate",),
    "normal": ("mu", "sigma"),
    "logistic": ("loc", "scale"),
    "lomax": ("scale", "shape"),
}

UNDER_TRUNCATION = (0.0, 1.0)
OVER_TRUNCATION = (0.0, math.inf)
UNDER_FIT_RANGE = (0.1, 1.0)
OVER_FIT_RANGE = (0.1, 2.0)

MIN_FIT_SAMPLES = 8
SCALE_CLAMP = 1e-6
FIT_GRID_POINTS = 128
_LOG_LO, _LOG_HI = math.log(SCALE_CLAMP), math.log(1e6)
_LOC_BOUND = 100.0


@dataclass(frozen=True)
class ErrorDistribution:
    """A parametric family restricted to ``[a, b]``.

    Parameters follow the usual conventions: ``rate`` for the exponential,
    ``(mu, sigma)`` for the normal, ``(loc, scale)`` for the logistic and
    ``(scale, shape)`` for the Lomax, whose CDF is ``1 - (1 + x/scale)**-shape``.
    """

    family: str
    params: Tuple[float, ...]
    a: float = -math.inf
    b: float = math.inf

    def __post_init__(self):
        if self.family not in FAMILY_CODE:
            raise ValueError(f"unknown family {self.family!r}")
        params = tuple(float(p) for p in self.params)
        if len(params) != len(PARAM_NAMES[self.family]):
            raise ValueError(f"{self.family} takes {len(PARAM_NAMES[self.family])} parameters")
        positive = params if self.family in ("exponential", "lomax") else params[1:]
        if not all(p > 0 for p in positive):
            raise ValueError(f"non-positive scale/shape in {params}")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        if not self.b > self.a:
            raise DegenerateTruncation(f"empty range [{self.a}, {self.b}]")
        if not self._mass() > 0.0:
            raise DegenerateTruncation(f"{self.family} has no mass on [{self.a}, {self.b}]")

    @property
    def code(self) -> int:
        return FAMILY_CODE[self.family]

    @property
    def _p(self):
        return (self.params + (0.0,))[:2]

    def _mass(self):
        return float(vec.mass_between(self.code, *self._p, self.a, self.b))

    def packed(self):
        """(family code, p0, p1, a, b) as consumed by the kernels."""
        p0, p1 = self._p
        return (float(self.code), p0, p1, float(self.a), float(self.b))

    def as_dict(self):
        return {"family": self.family,
                "params": dict(zip(PARAM_NAMES[self.family], self.params)),
                "truncation": [self.a, self.b]}

    def cdf(self, x):
        out = vec.trunc_cdf(self.code, *self._p, self.a, self.b, x)
        return float(out) if np.ndim(out) == 0 else out

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        p0, p1 = self._p
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.family == "exponential":
                dens = np.where(x >= 0, p0 * np.exp(-p0 * np.maximum(x, 0)), 0.0)
            elif self.family == "normal":
                dens = stats.norm.pdf(x, loc=p0, scale=p1)
            elif self.family == "logistic":
                dens = stats.logistic.pdf(x, loc=p0, scale=p1)
            else:
                dens = np.where(x >= 0, (p1 / p0) * (1 + np.maximum(x, 0) / p0) ** (-p1 - 1), 0.0)
        out = np.where((x < self.a) | (x > self.b), 0.0, dens / self._mass())
        return float(out) if out.ndim == 0 else out

    def ppf(self, u):
        """Quantile function of the truncated distribution."""
        u = np.asarray(u, dtype=float)
        p0, p1 = self._p
        fa = vec.base_cdf(self.code, p0, p1, self.a)
        q = np.clip(fa + u * self._mass(), 0.0, 1.0)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.family == "exponential":
                x = -np.log1p(-q) / p0
            elif self.family == "normal":
                x = p0 + p1 * special.ndtri(q)
            elif self.family == "logistic":
                x = p0 + p1 * special.logit(q)
            else:
                x = p0 * np.expm1(-np.log1p(-q) / p1)
        x = np.clip(x, self.a, self.b)
        return float(x) if x.ndim == 0 else x


def truncate(dist: ErrorDistribution, a: float, b: float) -> ErrorDistribution:
    """Restrict ``dist`` to ``[a, b]`` (intersected with its current range)."""
    lo, hi = max(a, dist.a), min(b, dist.b)
    if not hi > lo:
        raise DegenerateTruncation(f"[{a}, {b}] does not overlap [{dist.a}, {dist.b}]")
    return ErrorDistribution(dist.family, dist.params, lo, hi)


class ECDF:
    """Right-continuous empirical CDF."""

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise EmptyInput("ECDF needs at least one sample")
        self.x = x

    @property
    def n(self):
        return self.x.size

    def __call__(self, t):
        out = np.searchsorted(self.x, t, side="right") / self.x.size
        return float(out) if np.ndim(out) == 0 else out


def ecdf(samples) -> ECDF:
    return ECDF(samples)


def ks_distance(samples, dist: ErrorDistribution) -> float:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("KS distance needs samples")
    return float(stats.kstest(x, dist.cdf).statistic)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------

def _bounds(family):
    if family == "exponential":
        return np.array([_LOG_LO, 0.0]), np.array([_LOG_HI, 0.0])
    if family in ("normal", "logistic"):
        return np.array([-_LOC_BOUND, _LOG_LO]), np.array([_LOC_BOUND, _LOG_HI])
    return np.array([_LOG_LO, _LOG_LO]), np.array([_LOG_HI, _LOG_HI])


def _starts(family, inside, lo, hi):
    mean = float(inside.mean())
    sd = max(float(inside.std()), 1e-3)
    width = hi - lo
    if family == "exponential":
        r = math.log(1.0 / max(mean, 1e-6))
        return [(r, 0.0), (r + 1.5, 0.0), (r - 1.5, 0.0)]
    if family == "normal":
        s = math.log(sd)
    elif family == "logistic":
        s = math.log(sd * math.sqrt(3.0) / math.pi)
    else:
        return [(0.0, 0.0), (math.log(0.3), math.log(2.0)), (math.log(3.0), math.log(5.0))]
    med = float(np.median(inside))
    return [(med, s), (med, s + 1.5), (lo + 0.25 * width, math.log(0.25 * width))]


def _to_params(family, th):
    p0, p1 = vec.theta_to_params(FAMILY_CODE[family], float(th[0]), float(th[1]))
    return (p0,) if family == "exponential" else (p0, p1)


def _to_theta(family, params):
    if family == "exponential":
        return (math.log(params[0]), 0.0)
    if family in ("normal", "logistic"):
        return (params[0], math.log(params[1]))
    return (math.log(params[0]), math.log(params[1]))


@dataclass(frozen=True)
class _Objective:
    family: str
    a: float
    b: float
    grid: np.ndarray
    target: np.ndarray
    h: float

    def __call__(self, th):
        return kernels.l2_loss(FAMILY_CODE[self.family], float(th[0]), float(th[1]),
                               self.a, self.b, self.grid, self.target, self.h)

    def search(self, theta0, step0, xtol=1e-7, max_iter=5000):
        lo, hi = _bounds(self.family)
        th, best = kernels.fit_search(FAMILY_CODE[self.family], np.array(theta0, dtype=float),
                                      step0, self.a, self.b, self.grid, self.target, self.h,
                                      lo, hi, xtol, max_iter)
        return np.array(th, dtype=float), float(best)


def _objective(samples, family, truncation, fit_range, n_grid):
    lo, hi = fit_range
    h = (hi - lo) / n_grid
    grid = lo + (np.arange(n_grid) + 0.5) * h
    target = ECDF(samples)(grid).astype(float)
    return _Objective(family, float(truncation[0]), float(truncation[1]), grid, target, h)


def _sharpen(obj, th, best):
    # With a point mass the loss is flat once the scale drops below the grid
    # spacing; keep shrinking while that costs nothing.
    if obj.family not in ("normal", "logistic"):
        return th, best
    lo = _bounds(obj.family)[0][1]
    while th[1] > lo:
        trial = th.copy()
        trial[1] = max(th[1] - 1.0, lo)
        f = obj(trial)
        if not f <= best:
            break
        th, best = trial, f
    return th, best


def _check_samples(samples, fit_range):
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("no samples to fit")
    lo, hi = fit_range
    if not hi > lo:
        raise ValueError("empty fit range")
    inside = x[(x >= lo) & (x <= hi)]
    if inside.size < MIN_FIT_SAMPLES:
        raise TooFewSamples(f"{inside.size} samples inside [{lo}, {hi}], need {MIN_FIT_SAMPLES}")
    return x, inside


def fit_distribution(samples, family: str, truncation=OVER_TRUNCATION,
                     fit_range=OVER_FIT_RANGE, n_grid: int = FIT_GRID_POINTS,
                     warm_start: Optional[ErrorDistribution] = None,
                     xtol: float = 1e-7) -> ErrorDistribution:
    """Least-squares fit of a truncated CDF to the ECDF of ``samples``.

    The squared distance between the two CDFs is integrated over
    ``fit_range`` with the midpoint rule on ``n_grid`` points. The search is
    a compass search in transformed coordinates (log for scale and shape)
    from three fixed starts, or from ``warm_start`` alone when given.
    """
    if family not in FAMILY_CODE:
        raise ValueError(f"unknown family {family!r}")
    x, inside = _check_samples(samples, fit_range)
    obj = _objective(x, family, truncation, fit_range, n_grid)
    if warm_start is not None and warm_start.family == family:
        candidates = [obj.search(_to_theta(family, warm_start.params), 0.05, xtol)]
    else:
        candidates = [obj.search(s, 0.5, xtol) for s in _starts(family, inside, *fit_range)]
    th, best = min(candidates, key=lambda c: c[1])
    th, best = _sharpen(obj, th, best)
    if not np.isfinite(best) or best >= 1e299 or not np.all(np.isfinite(th)):
        raise FitDiverged(f"{family} fit did not converge")
    return ErrorDistribution(family, _to_params(family, th), *truncation)


@dataclass(frozen=True)
class FitReport:
    side: str
    family: str
    distribution: Optional[ErrorDistribution]
    ks: Optional[float]
    n_samples: int
    n_in_range: int
    fit_range: Tuple[float, float]
    fallback: bool = False
    best: bool = False

    def as_dict(self):
        d = {"side": self.side, "family": self.family, "n_samples": self.n_samples,
             "n_in_range": self.n_in_range, "fit_range": list(self.fit_range),
             "fallback": self.fallback, "best": self.best,
             "ks_distance": self.ks, "params": None, "truncation": None}
        if self.distribution is not None:
            dd = self.distribution.as_dict()
            d["params"] = dd["params"]
            d["truncation"] = [dd["truncation"][0],
                               None if math.isinf(dd["truncation"][1]) else dd["truncation"][1]]
        return d


def side_samples(signed_errors, side: str) -> np.ndarray:
    """Magnitudes of the under- (``e <= 0``) or over- (``e > 0``) estimations."""
    e = np.asarray(signed_errors, dtype=float)
    return -e[e <= 0] if side == "under" else e[e > 0]


def fit_side(signed_errors, side: str, families=FAMILIES, n_grid=FIT_GRID_POINTS):
    """Fit every family to one side of the error sample and flag the best KS."""
    trunc, rng = ((UNDER_TRUNCATION, UNDER_FIT_RANGE) if side == "under"
                  else (OVER_TRUNCATION, OVER_FIT_RANGE))
    x = side_samples(signed_errors, side)
    n_in = int(np.count_nonzero((x >= rng[0]) & (x <= rng[1])))
    reports = []
    for fam in families:
        try:
            dist = fit_distribution(x, fam, trunc, rng, n_grid)
        except (TooFewSamples, EmptyInput):
            reports.append(FitReport(side, fam, None, None, int(x.size), n_in, rng, True))
            continue
        except (FitDiverged, DegenerateTruncation):
            reports.append(FitReport(side, fam, None, None, int(x.size), n_in, rng, False))
            continue
        reports.append(FitReport(side, fam, dist, ks_distance(x, dist), int(x.size), n_in, rng))
    scored = [r for r in reports if r.ks is not None]
    if scored:
        winner = min(scored, key=lambda r: r.ks)
        reports = [FitReport(**{**r.__dict__, "best": r is winner}) for r in reports]
    return reports


# --------------------------------------------------------------------------
# sign dynamics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SignProbabilities:
    p_u: float
    p_u_given_u: float
    p_o_given_o: float
    u_given_u_observed: bool = True
    o_given_o_observed: bool = True

    @property
    def p_u_given_o(self):
        return 1.0 - self.p_o_given_o


def _sign_probabilities(n_u, n, uu, uo, oo, ou):
    p_u = n_u / n
    if uu + uo:
        puu, u_obs = uu / (uu + uo), True
    else:
        puu, u_obs = p_u, False
    if oo + ou:
        poo, o_obs = oo / (oo + ou), True
    else:
        poo, o_obs = 1.0 - p_u, False
    return SignProbabilities(p_u, puu, poo, u_obs, o_obs)


def conditional_sign_probabilities(errors: Sequence[float]) -> SignProbabilities:
    """Marginal and one-step conditional under/overestimation probabilities.

    A zero error counts as underestimation. When a sign never occurs as the
    origin of a transition the conditional probability falls back to the
    marginal probability of that sign.
    """
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        raise TooFewSamples("need at least two errors")
    u = e <= 0
    prev, cur = u[:-1], u[1:]
    uu = int(np.count_nonzero(prev & cur))
    uo = int(np.count_nonzero(prev & ~cur))
    ou = int(np.count_nonzero(~prev & cur))
    oo = int(np.count_nonzero(~prev & ~cur))
    return _sign_probabilities(int(np.count_nonzero(u)), e.size, uu, uo, oo, ou)


# --------------------------------------------------------------------------
# online per-horizon state
# --------------------------------------------------------------------------

FALLBACK_OVER = ErrorDistribution("lomax", (0.5, 1.5), *OVER_TRUNCATION)
# all underestimation mass at (almost) zero: no credit for pessimistic forecasts
FALLBACK_UNDER = ErrorDistribution("exponential", (1e6,), *UNDER_TRUNCATION)
DEFAULT_P_U = 0.5


def default_under_family(horizon_s: int) -> str:
    return "logistic" if horizon_s == 1 else "normal"


def _key(t):
    return round(float(t), 6)


@dataclass
class ErrorModelState:
    """Sliding-window error history for one prediction horizon.

    Records are time-stamped with their realization instant (issue time plus
    horizon) and kept while ``now - stamp <= window_s``. Sign transitions are
    counted between records one horizon apart, i.e. between a prediction and
    the latest one already realized when it was issued. Distributions are
    refitted lazily on the first read after a change.
    """

    horizon_s: int
    alpha_cdf: float = 60.0
    under_family: Optional[str] = None
    over_family: str = "lomax"
    pu_mode: str = "conditional"
    n_grid: int = FIT_GRID_POINTS
    xtol: float = 1e-5
    history: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.under_family is None:
            self.under_family = default_under_family(self.horizon_s)
        if self.pu_mode not in ("conditional", "marginal"):
            raise ValueError(f"unknown pu_mode {self.pu_mode!r}")
        self._sign_at = {}
        self._counts = {"uu": 0, "uo": 0, "oo": 0, "ou": 0}
        self._n_u = 0
        self._all = {"under": [], "over": []}
        self._fit = {"under": None, "over": None}
        self._fit_src = {"under": None, "over": None}
        self._dirty = {"under": True, "over": True}
        self.last_sign: Optional[str] = None
        self.last_stamp: Optional[float] = None
        self.refits = 0

    @property
    def window_s(self) -> float:
        return self.alpha_cdf * self.horizon_s

    def __len__(self):
        return len(self.history)

    # -- bookkeeping ------------------------------------------------------
    def _count(self, origin_u, dest_u, delta):
        k = ("u" if origin_u else "o") + ("u" if dest_u else "o")
        self._counts[k] += delta

    def _evict(self, now):
        while self.history and now - self.history[0][0] > self.window_s + 1e-9:
            stamp, err = self.history.popleft()
            is_u = err <= 0
            self._n_u -= is_u
            self._sign_at.pop(_key(stamp), None)
            nxt = self._sign_at.get(_key(stamp + self.horizon_s))
            if nxt is not None:
                self._count(is_u, nxt, -1)
            self._dirty["under" if is_u else "over"] = True

    def update(self, record, now: Optional[float] = None) -> "ErrorModelState":
        """Add a realized prediction error and drop records that aged out."""
        if int(record.horizon_s) != int(self.horizon_s):
            raise HorizonMismatch(f"record horizon {record.horizon_s} != {self.horizon_s}")
        stamp = float(record.t_issued) + self.horizon_s
        now = stamp if now is None else float(now)
        err = float(record.signed_error)
        self.add_error(stamp, err)
        self._evict(now)
        return self

    def add_error(self, stamp: float, err: float):
        is_u = err <= 0
        prev = self._sign_at.get(_key(stamp - self.horizon_s))
        if prev is not None:
            self._count(prev, is_u, +1)
        self.history.append((stamp, err))
        self._sign_at[_key(stamp)] = is_u
        self._n_u += is_u
        side = "under" if is_u else "over"
        self._all[side].append(-err if is_u else err)
        self._dirty[side] = True
        self.last_sign = "under" if is_u else "over"
        self.last_stamp = stamp

    def advance(self, now: float):
        self._evict(float(now))

    # -- estimates --------------------------------------------------------
    def sign_probabilities(self) -> SignProbabilities:
        n = len(self.history)
        if n == 0:
            return SignProbabilities(DEFAULT_P_U, DEFAULT_P_U, 1 - DEFAULT_P_U, False, False)
        c = self._counts
        return _sign_probabilities(self._n_u, n, c["uu"], c["uo"], c["oo"], c["ou"])

    @property
    def p_u(self) -> float:
        """Probability of underestimation used for the next prediction."""
        sp = self.sign_probabilities()
        if self.pu_mode == "marginal" or self.last_sign is None or not self.history:
            return sp.p_u
        return sp.p_u_given_u if self.last_sign == "under" else sp.p_u_given_o

    def _window_side(self, side):
        e = np.fromiter((err for _, err in self.history), dtype=float, count=len(self.history))
        return side_samples(e, side)

    def _refit(self, side):
        family = self.under_family if side == "under" else self.over_family
        trunc, rng = ((UNDER_TRUNCATION, UNDER_FIT_RANGE) if side == "under"
                      else (OVER_TRUNCATION, OVER_FIT_RANGE))
        prev = self._fit[side] if self._fit_src[side] in ("window", "session") else None
        for source, samples in (("window", self._window_side(side)),
                                ("session", np.asarray(self._all[side], dtype=float))):
            try:
                dist = fit_distribution(samples, family, trunc, rng, self.n_grid,
                                        warm_start=prev, xtol=self.xtol)
            except (TooFewSamples, EmptyInput, FitDiverged, DegenerateTruncation):
                continue
            self.refits += 1
            return dist, source
        return (FALLBACK_UNDER if side == "under" else FALLBACK_OVER), "fallback"

    def distribution(self, side: str) -> ErrorDistribution:
        if self._dirty[side] or self._fit[side] is None:
            self._fit[side], self._fit_src[side] = self._refit(side)
            self._dirty[side] = False
        return self._fit[side]

    def fit_source(self, side: str) -> str:
        self.distribution(side)
        return self._fit_src[side]

    @property
    def phi_u(self) -> ErrorDistribution:
        return self.distribution("under")

    @property
    def phi_o(self) -> ErrorDistribution:
        return self.distribution("over")

    def model_row(self) -> np.ndarray:
        """[p_u, under (code, p0, p1, a, b), over (code, p0, p1, a, b)]."""
        return np.array((self.p_u,) + self.phi_u.packed() + self.phi_o.packed(), dtype=float)

    def composed_cdf(self, x):
        return composed_cdf(self, x)


def composed_cdf(state: ErrorModelState, x):
    """CDF of the signed error for the next prediction.

    ``P(e <= x)`` is ``p_u * (1 - F_u(|x|))`` for negative x and
    ``p_u + (1 - p_u) * F_o(x)`` otherwise.
    """
    out = vec.composed_cdf(state.model_row(), x)
    return float(out) if np.ndim(out) == 0 else out


def write_fit_report(path, entries):
    """entries: iterable of dicts (trace, horizon, plus FitReport.as_dict())."""
    with open(path, "w") as fh:
        json.dump(list(entries), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_ecdf_csv(path, samples_by_key):
    """One row per (key, sorted sample value, ECDF value)."""
    with open(path, "w") as fh:
        fh.write("key,x,ecdf\n")
        for key, samples in samples_by_key:
            if len(samples) == 0:
                continue
            e = ECDF(samples)
            for i, v in enumerate(e.x, start=1):
                fh.write(f"{key},{float(v)!r},{i / e.n!r}\n")
