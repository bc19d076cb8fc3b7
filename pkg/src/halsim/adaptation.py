"""Representation selection for low-delay live streaming.

Representation indices are 0-based throughout the Python API (0 is the
lowest bit rate). Exported tables use 1-based indices.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import _vectorized as vec
from . import kernels
from .error_model import ErrorModelState
from .errors import (ConfigError, DegeneratePsnrRange, MissingPrediction,
                     NoSegmentAvailable)
from .predictors import PredictionRecord, signed_relative_error

_EPS = 1e-9

DEFAULT_LADDER_KBPS = (100, 200, 350, 600, 900, 1300, 1800, 2500, 3300, 4200)


# --------------------------------------------------------------------------
# stream description
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Representation:
    index: int
    mmbr_bps: float
    psnr_db: float


def default_psnr(mmbr_bps):
    """Log-shaped rate/quality curve used when a manifest gives no PSNR."""
    return 30.0 + 10.0 * np.log10(np.asarray(mmbr_bps, dtype=float) / 1e5)


@dataclass
class StreamManifest:
    """Representations plus per-segment sizes in bits (``n x m``).

    Segment indices past the end of the size table wrap around, so a short
    table can describe an arbitrarily long live stream.
    """

    tau_s: float
    representations: List[Representation]
    segment_sizes: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.segment_sizes = np.asarray(self.segment_sizes, dtype=float)
        self.validate()
        self._q = quality_levels([r.psnr_db for r in self.representations])

    def validate(self):
        reps = self.representations
        if not self.tau_s > 0:
            raise ConfigError("tau_s must be positive")
        if not reps:
            raise ConfigError("manifest has no representations")
        rates = np.array([r.mmbr_bps for r in reps])
        psnr = np.array([r.psnr_db for r in reps])
        if np.any(np.diff(rates) <= 0) or np.any(rates <= 0):
            raise ConfigError("representations must have positive, ascending MMBRs")
        if np.any(np.diff(psnr) <= 0):
            raise DegeneratePsnrRange("PSNR must increase strictly with the representation")
        s = self.segment_sizes
        if s.ndim != 2 or s.shape[1] != len(reps) or s.shape[0] == 0:
            raise ConfigError(f"segment_sizes must be n x {len(reps)}")
        if np.any(~(s > 0)):
            raise ConfigError("segment sizes must be positive")
        mean_rate = s.mean(axis=0) / self.tau_s
        if np.any(np.abs(mean_rate - rates) > 0.01 * rates):
            raise ConfigError("mean segment rate deviates from the MMBR by more than 1%")

    @property
    def m(self) -> int:
        return len(self.representations)

    @property
    def mmbr(self) -> np.ndarray:
        return np.array([r.mmbr_bps for r in self.representations])

    @property
    def psnr(self) -> np.ndarray:
        return np.array([r.psnr_db for r in self.representations])

    @property
    def quality(self) -> np.ndarray:
        """Per-representation quality subutility in [0, 1]."""
        return self._q

    def sizes(self, i: int) -> np.ndarray:
        return self.segment_sizes[i % self.segment_sizes.shape[0]]

    def size(self, i: int, j: int) -> float:
        return float(self.sizes(i)[j])

    def size_block(self, first: int, last: int) -> np.ndarray:
        idx = np.arange(first, last + 1) % self.segment_sizes.shape[0]
        return self.segment_sizes[idx]

    @classmethod
    def generate(cls, mmbr_bps: Sequence[float], psnr_db: Optional[Sequence[float]] = None,
                 tau_s: float = 2.0, n_segments: int = 1000, vbr_cv: float = 0.0,
                 seed: int = 0) -> "StreamManifest":
        """Build a manifest with VBR segment sizes of the requested variability.

        Sizes share one lognormal complexity factor across representations
        and are rescaled so that each representation's mean rate is exact.
        """
        rates = np.asarray(mmbr_bps, dtype=float)
        psnr = default_psnr(rates) if psnr_db is None else np.asarray(psnr_db, dtype=float)
        if vbr_cv > 0:
            sig2 = math.log1p(vbr_cv ** 2)
            w = np.random.default_rng(seed).lognormal(-0.5 * sig2, math.sqrt(sig2), n_segments)
            w /= w.mean()
        else:
            w = np.ones(n_segments)
        sizes = np.outer(w, rates * tau_s)
        reps = [Representation(j, float(r), float(g)) for j, (r, g) in enumerate(zip(rates, psnr))]
        return cls(float(tau_s), reps, sizes)

    @classmethod
    def from_dict(cls, d) -> "StreamManifest":
        try:
            tau = float(d.get("tau_s", 2.0))
            reps = d["representations"]
            rates = [float(r["mmbr_bps"]) for r in reps]
            psnr = [float(r["psnr_db"]) for r in reps] if all("psnr_db" in r for r in reps) else None
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed manifest: {exc}") from None
        if "segment_sizes" in d:
            if psnr is None:
                psnr = list(default_psnr(rates))
            reps = [Representation(j, r, g) for j, (r, g) in enumerate(zip(rates, psnr))]
            return cls(tau, reps, np.asarray(d["segment_sizes"], dtype=float))
        gen = d.get("generator", {})
        return cls.generate(rates, psnr, tau, int(gen.get("n_segments", 1000)),
                            float(gen.get("vbr_cv", 0.0)), int(gen.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "StreamManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self, include_sizes=True):
        d = {"tau_s": self.tau_s,
             "representations": [{"mmbr_bps": r.mmbr_bps, "psnr_db": r.psnr_db}
                                 for r in self.representations]}
        if include_sizes:
            d["segment_sizes"] = self.segment_sizes.tolist()
        return d


def default_manifest(tau_s: float = 2.0, n_segments: int = 1000, vbr_cv: float = 0.1,
                     seed: int = 0) -> StreamManifest:
    """Ten representations from 100 to 4200 kbit/s."""
    return StreamManifest.generate(np.array(DEFAULT_LADDER_KBPS) * 1e3, None,
                                   tau_s, n_segments, vbr_cv, seed)


# --------------------------------------------------------------------------
# configuration and client state
# --------------------------------------------------------------------------

PRB_MODES = ("product", "sum_clamped")
PU_MODES = ("conditional", "marginal")


@dataclass(frozen=True)
class AdaptationConfig:
    alpha_q: float = 0.6
    alpha_rb: float = -200.0
    alpha_cdf: float = 60.0
    t_max_s: int = 10
    rho_min_bps: float = 1e4
    delta_p_max_s: float = 5.0
    prb_mode: str = "product"
    pu_mode: str = "conditional"
    enumeration_cap: int = 1_000_000
    beam_width: int = 64
    oracle_horizon_s: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.alpha_q <= 1.0:
            raise ConfigError("alpha_q must lie in [0, 1]")
        if not self.alpha_rb < 0:
            raise ConfigError("alpha_rb must be negative")
        if not self.alpha_cdf > 0:
            raise ConfigError("alpha_cdf must be positive")
        if int(self.t_max_s) < 1:
            raise ConfigError("t_max_s must be at least 1")
        if not self.rho_min_bps > 0:
            raise ConfigError("rho_min_bps must be positive")
        if self.prb_mode not in PRB_MODES:
            raise ConfigError(f"prb_mode must be one of {PRB_MODES}")
        if self.pu_mode not in PU_MODES:
            raise ConfigError(f"pu_mode must be one of {PU_MODES}")
        if self.enumeration_cap < 1 or self.beam_width < 1:
            raise ConfigError("enumeration_cap and beam_width must be positive")

    def check_tau(self, tau_s: float):
        if self.delta_p_max_s < 2 * tau_s - _EPS:
            raise ConfigError("delta_p_max_s must be at least twice the segment duration")

    @classmethod
    def from_dict(cls, d) -> "AdaptationConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)


def publish_time(i: int, tau: float) -> float:
    return (i + 1) * tau


def playback_time(i: int, tau: float, delta_p: float) -> float:
    return i * tau + delta_p


@dataclass
class ClientState:
    next_segment: int
    delta_p: float
    tau_s: float
    last_representation: Optional[int] = None
    completions: Dict[int, float] = field(default_factory=dict)

    def playback(self, i: int) -> float:
        return playback_time(i, self.tau_s, self.delta_p)

    def buffer_level(self, t: float) -> float:
        """Time until the newest downloaded segment starts playing.

        Bounded by ``delta_p - tau`` because a segment can only be fetched
        after its publication instant.
        """
        done = [self.playback(i) for i, tc in self.completions.items() if tc <= t + _EPS]
        if not done:
            return 0.0
        return max(0.0, max(done) - t)


# --------------------------------------------------------------------------
# timeline helpers
# --------------------------------------------------------------------------

def reachable_horizon(i: int, t_pi: float, tau: float, delta_p: float, t_max: float) -> int:
    """Last segment whose playback deadline lies within ``t_pi + t_max``."""
    l = math.floor((t_pi + t_max - delta_p) / tau + _EPS)
    return max(i, l)


def horizon_for(deadline: float, t_pi: float, t_max: int) -> int:
    """Smallest integer prediction horizon covering ``[t_pi, deadline]``."""
    return int(min(max(math.ceil(deadline - t_pi - _EPS), 1), t_max))


@dataclass(frozen=True)
class TuneIn:
    segment: int
    delta_p: float
    t_request: float
    representation: int = 0


def tune_in(t: float, tau: float, delta_p_max: float) -> TuneIn:
    """Pick the oldest published segment that still leaves ``tau`` seconds to fetch it.

    When no published segment qualifies the client waits for the next
    publication instant, which is reflected in ``t_request``.
    """
    if t < tau - _EPS:
        raise NoSegmentAvailable(f"no segment is published before t={tau}")
    while True:
        lo = max(0, math.ceil((t + tau - delta_p_max) / tau - _EPS))
        hi = math.floor(t / tau + _EPS) - 1
        if lo <= hi:
            return TuneIn(lo, float(delta_p_max), float(t))
        t = (hi + 2) * tau


@dataclass(frozen=True)
class MissOutcome:
    next_segment: int
    skipped: int
    t_request: float


def on_deadline_miss(i: int, t: float, tau: float, delta_p_max: float) -> MissOutcome:
    """Cancel segment i at time t and re-tune; segments i..i0-1 are skipped."""
    ti = tune_in(t, tau, delta_p_max)
    i0 = max(ti.segment, i + 1)
    return MissOutcome(i0, i0 - i, ti.t_request)


# --------------------------------------------------------------------------
# subutilities
# --------------------------------------------------------------------------

def quality_levels(psnr_db) -> np.ndarray:
    g = np.asarray(psnr_db, dtype=float)
    if g.size == 1:
        return np.zeros(1)
    span = g[-1] - g[0]
    if not span > 0:
        raise DegeneratePsnrRange("highest PSNR must exceed the lowest")
    return (g - g[0]) / span


def u_rb(p_rb, alpha_rb: float):
    """Rebuffering subutility: 1 at probability 0, 0 at probability 1."""
    if not alpha_rb < 0:
        raise ValueError("alpha_rb must be negative")
    out = vec.u_rb(p_rb, alpha_rb)
    return float(out) if np.ndim(out) == 0 else out


def u_q(choices: Sequence[int], psnr_db) -> float:
    q = quality_levels(psnr_db)
    return float(np.mean(q[np.asarray(choices, dtype=int)]))


def u_qf(choices: Sequence[int], psnr_db, prev_representation: Optional[int] = None) -> float:
    """One minus the mean absolute quality change along the trajectory.

    The predecessor of the first segment is ``prev_representation``; when
    it is None the first segment is compared with itself.
    """
    q = quality_levels(psnr_db)
    c = np.asarray(choices, dtype=int)
    first = c[0] if prev_representation is None else prev_representation
    pred = np.concatenate(([first], c[:-1]))
    return float(1.0 - np.mean(np.abs(q[c] - q[pred])))


def prb_from_phi(phi, mode: str = "product") -> float:
    """Aggregate per-segment deadline-meet probabilities into P_RB."""
    phi = np.asarray(phi, dtype=float)
    if mode == "product":
        return float(1.0 - np.prod(phi))
    if mode == "sum_clamped":
        return float(min(max(1.0 - np.sum(phi), 0.0), 1.0))
    raise ValueError(f"unknown mode {mode!r}")


def utility(p_rb: float, uq: float, uqf: float, alpha_q: float = 0.6,
            alpha_rb: float = -200.0) -> float:
    return u_rb(p_rb, alpha_rb) * (alpha_q * uq + (1.0 - alpha_q) * uqf)


# --------------------------------------------------------------------------
# trajectory search
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    first_segment: int
    choices: tuple
    utility: float = float("nan")
    p_rb: float = float("nan")
    u_rb: float = float("nan")
    u_q: float = float("nan")
    u_qf: float = float("nan")

    @property
    def last_segment(self) -> int:
        return self.first_segment + len(self.choices) - 1

    @property
    def first_choice(self) -> int:
        return self.choices[0]


@dataclass(frozen=True)
class ScoringProblem:
    """Everything needed to score trajectories for segments i..l.

    ``rho`` and ``dt`` hold the clamped throughput prediction and the time
    from the request to each playback deadline; ``models`` holds one packed
    error-model row per segment.
    """

    first_segment: int
    sizes: np.ndarray
    quality: np.ndarray
    prev: int
    rho: np.ndarray
    dt: np.ndarray
    models: np.ndarray

    @property
    def length(self):
        return self.sizes.shape[0]

    def phi(self, choices) -> np.ndarray:
        c = np.asarray(choices, dtype=int)
        cum = np.cumsum(self.sizes[np.arange(len(c)), c])
        args = self.rho * self.dt / cum - 1.0
        return np.array([float(vec.composed_cdf(self.models[k], args[k])) for k in range(len(c))])

    def score(self, choices, config: AdaptationConfig) -> Trajectory:
        c = tuple(int(j) for j in choices)
        prb = prb_from_phi(self.phi(c), config.prb_mode)
        q = self.quality
        first = c[0] if self.prev < 0 else self.prev
        pred = (first,) + c[:-1]
        uq = float(np.mean(q[list(c)]))
        uqf = float(1.0 - np.mean(np.abs(q[list(c)] - q[list(pred)])))
        urb = u_rb(prb, config.alpha_rb)
        return Trajectory(self.first_segment, c, urb * (config.alpha_q * uq + (1 - config.alpha_q) * uqf),
                          prb, urb, uq, uqf)


def build_problem(i: int, t_request: float, t_pi: float, prev: Optional[int],
                  manifest: StreamManifest, models, predictions, config: AdaptationConfig,
                  delta_p: float) -> ScoringProblem:
    """Assemble the scoring inputs for the trajectories starting at segment i.

    ``models`` maps a horizon in seconds to an ``ErrorModelState`` (or a
    packed row) and ``predictions`` maps it to the throughput forecast.
    """
    tau = manifest.tau_s
    l = reachable_horizon(i, t_pi, tau, delta_p, config.t_max_s)
    L = l - i + 1
    rho = np.empty(L)
    dt = np.empty(L)
    rows = np.empty((L, 11))
    for k in range(L):
        deadline = playback_time(i + k, tau, delta_p)
        T = horizon_for(deadline, t_pi, config.t_max_s)
        if T not in predictions:
            raise MissingPrediction(f"no prediction for horizon {T} s")
        rho[k] = max(float(predictions[T]), config.rho_min_bps)
        dt[k] = deadline - t_request
        model = models[T]
        rows[k] = model.model_row() if hasattr(model, "model_row") else np.asarray(model, dtype=float)
    return ScoringProblem(i, np.ascontiguousarray(manifest.size_block(i, l)),
                          np.ascontiguousarray(manifest.quality), -1 if prev is None else int(prev),
                          rho, dt, rows)


def _mode_code(config):
    return 0 if config.prb_mode == "product" else 1


def search_exhaustive(problem: ScoringProblem, config: AdaptationConfig) -> Trajectory:
    c, u, prb, urb, uq, uqf = kernels.score_trajectories(
        problem.sizes, problem.quality, problem.prev, problem.rho, problem.dt,
        problem.models, config.alpha_q, config.alpha_rb, _mode_code(config))
    return Trajectory(problem.first_segment, tuple(int(j) for j in c), float(u), float(prb),
                      float(urb), float(uq), float(uqf))


def search_beam(problem: ScoringProblem, config: AdaptationConfig) -> Trajectory:
    """Beam search over segments.

    Partial trajectories are ranked by the utility they would have if they
    ended at the current segment; the ``beam_width`` best survive.
    """
    L, m = problem.sizes.shape
    q = problem.quality
    alpha_q, alpha_rb = config.alpha_q, config.alpha_rb
    product = config.prb_mode == "product"
    choices = np.zeros((1, 0), dtype=int)
    cum = np.zeros(1)
    agg = np.ones(1) if product else np.zeros(1)
    sq = np.zeros(1)
    sqf = np.zeros(1)
    sw = np.zeros(1, dtype=int)
    for d in range(L):
        nb = choices.shape[0]
        j = np.tile(np.arange(m), nb)
        parent = np.repeat(np.arange(nb), m)
        new_cum = cum[parent] + problem.sizes[d, j]
        phi = vec.composed_cdf(problem.models[d], problem.rho[d] * problem.dt[d] / new_cum - 1.0)
        new_agg = agg[parent] * phi if product else agg[parent] + phi
        if d == 0:
            pred = j if problem.prev < 0 else np.full_like(j, problem.prev)
        else:
            pred = choices[parent, -1]
        new_sq = sq[parent] + q[j]
        new_sqf = sqf[parent] + np.abs(q[j] - q[pred])
        new_sw = sw[parent] + (j != pred)
        prb = 1.0 - new_agg if product else np.clip(1.0 - new_agg, 0.0, 1.0)
        u = vec.u_rb(prb, alpha_rb) * (alpha_q * new_sq / (d + 1)
                                       + (1 - alpha_q) * (1.0 - new_sqf / (d + 1)))
        new_choices = np.concatenate((choices[parent], j[:, None]), axis=1)
        top = u.max()
        band = np.where(u >= top - 1e-12 * abs(top), top, u)
        # primary key last: utility band, then first choice, switches, lexicographic
        keys = [new_choices[:, k] for k in range(d, -1, -1)] + [new_sw, new_choices[:, 0], -band]
        keep = np.lexsort(keys)[:config.beam_width]
        choices, cum, agg = new_choices[keep], new_cum[keep], new_agg[keep]
        sq, sqf, sw = new_sq[keep], new_sqf[keep], new_sw[keep]
    return problem.score(choices[0], config)


def _switches(problem, c):
    first = c[0] if problem.prev < 0 else problem.prev
    return sum(1 for a, b in zip((first,) + tuple(c[:-1]), c) if a != b)


def _pick(problem, trajectories):
    top = max(t.utility for t in trajectories)
    tied = [t for t in trajectories if t.utility >= top - 1e-12 * abs(top)]
    return min(tied, key=lambda t: (t.choices[0], _switches(problem, t.choices), t.choices))


def choose_representation(problem: ScoringProblem, config: AdaptationConfig) -> Trajectory:
    """Best trajectory; its first element is the representation to fetch.

    Ties are broken toward the lower first representation, then toward
    fewer switches.
    """
    m = problem.sizes.shape[1]
    if m ** problem.length <= config.enumeration_cap:
        return search_exhaustive(problem, config)
    return search_beam(problem, config)


def brute_force(problem: ScoringProblem, config: AdaptationConfig) -> Trajectory:
    """Reference enumeration in plain Python (slow; for testing)."""
    m = problem.sizes.shape[1]
    allt = [problem.score(c, config) for c in itertools.product(range(m), repeat=problem.length)]
    return _pick(problem, allt)


# --------------------------------------------------------------------------
# baseline rules
# --------------------------------------------------------------------------

def fixed_margin_policy(margin: float, mmbr_bps: Sequence[float], rho_hat: float) -> int:
    """Highest representation leaving ``margin`` of the throughput unused.

    A representation qualifies when its MMBR is at most
    ``(1 - margin) * rho_hat``; the lowest one is the fallback. A larger
    margin is therefore more cautious.
    """
    if not 0.0 <= margin < 1.0:
        raise ValueError("margin must lie in [0, 1)")
    rates = np.asarray(mmbr_bps, dtype=float)
    ok = np.flatnonzero(rates <= (1.0 - margin) * rho_hat * (1 + 1e-12))
    return int(ok[-1]) if ok.size else 0


def queue_meets_deadlines(i: int, j: int, t: float, manifest: StreamManifest, delta_p: float,
                          completion: Callable[[float, float], float], horizon_s: float) -> bool:
    """Fetch segment i at j, then the following ones at the lowest
    representation, and check every deadline up to ``t + horizon_s``."""
    tau = manifest.tau_s
    t_free, k, jj = t, i, j
    while True:
        deadline = playback_time(k, tau, delta_p)
        if deadline > t + horizon_s + _EPS and k > i:
            return True
        start = max(t_free, publish_time(k, tau))
        done = completion(start, manifest.size(k, jj))
        if done > deadline + _EPS:
            return False
        t_free, k, jj = done, k + 1, 0


def oracle_policy(i: int, t: float, manifest: StreamManifest, delta_p: float,
                  completion: Callable[[float, float], float], horizon_s: float = 10.0) -> int:
    for j in range(manifest.m - 1, 0, -1):
        if queue_meets_deadlines(i, j, t, manifest, delta_p, completion, horizon_s):
            return j
    return 0


# --------------------------------------------------------------------------
# policy objects driven by the simulator
# --------------------------------------------------------------------------

@dataclass
class DecisionContext:
    segment: int
    t_request: float
    t_pi: int
    prev_representation: Optional[int]
    delta_p: float
    manifest: StreamManifest
    past_bps: np.ndarray
    completion: Optional[Callable[[float, float], float]] = None


@dataclass(frozen=True)
class Decision:
    representation: int
    p_rb: float = float("nan")
    u_rb: float = float("nan")
    u_q: float = float("nan")
    u_qf: float = float("nan")
    u: float = float("nan")


class Policy:
    name = "policy"
    needs_lookahead = False

    def reset(self, manifest: StreamManifest, config: AdaptationConfig):
        self.manifest = manifest
        self.config = config

    def observe(self, t: int, past_bps: np.ndarray):
        """Called once per integer second with the throughput of ``[0, t)``."""

    def choose(self, ctx: DecisionContext) -> Decision:
        raise NotImplementedError


class LowestPolicy(Policy):
    name = "lowest"

    def choose(self, ctx):
        return Decision(0)


class FixedMarginPolicy(Policy):
    """Mean throughput over the last segment duration, minus a fixed margin."""

    def __init__(self, margin: float):
        if not 0.0 <= margin < 1.0:
            raise ConfigError("margin must lie in [0, 1)")
        self.margin = float(margin)
        self.name = f"fixed-{self.margin:g}"

    def choose(self, ctx):
        w = max(1, int(round(self.manifest.tau_s)))
        past = ctx.past_bps[: ctx.t_pi]
        rho_hat = float(past[-w:].mean()) if past.size else 0.0
        return Decision(fixed_margin_policy(self.margin, self.manifest.mmbr, rho_hat))


class OraclePolicy(Policy):
    name = "oracle"
    needs_lookahead = True

    def choose(self, ctx):
        if ctx.completion is None:
            raise ConfigError("the oracle needs future throughput")
        return Decision(oracle_policy(ctx.segment, ctx.t_request, self.manifest, ctx.delta_p,
                                      ctx.completion, self.config.oracle_horizon_s))


class UtilityPolicy(Policy):
    """Utility-maximizing adaptation with online per-horizon error models.

    Every second the policy forecasts the mean throughput for horizons of
    1..t_max seconds with the last horizon-length mean, and feeds realized
    forecast errors into one error model per horizon.
    """

    name = "utility"

    def reset(self, manifest, config):
        super().reset(manifest, config)
        self.models = {T: ErrorModelState(T, alpha_cdf=config.alpha_cdf, pu_mode=config.pu_mode)
                       for T in range(1, int(config.t_max_s) + 1)}
        self.issued: Dict[int, Dict[int, float]] = {}
        self.predictions: Dict[int, float] = {}
        self._src = None

    def _forecast(self, csum, t, T):
        n = min(T, t)
        return (csum[t] - csum[t - n]) / n

    def observe(self, t, past_bps):
        if t < 1:
            return
        if self._src is not past_bps:
            # prefix sums only ever read up to index t, i.e. the past
            self._src = past_bps
            self._csum = np.concatenate(([0.0], np.cumsum(past_bps)))
        csum = self._csum
        rho_min = self.config.rho_min_bps
        preds = {}
        for T, model in self.models.items():
            issued_at = t - T
            prev = self.issued.get(issued_at, {}).get(T)
            if prev is not None:
                actual = (csum[t] - csum[issued_at]) / T
                err = float(signed_relative_error(prev, actual, rho_min))
                model.update(PredictionRecord(float(issued_at), T, prev, actual, err), now=t)
            else:
                model.advance(t)
            preds[T] = self._forecast(csum, t, T)
        self.issued[t] = preds
        self.issued.pop(t - int(self.config.t_max_s) - 1, None)
        self.predictions = preds

    def choose(self, ctx):
        preds = self.issued.get(ctx.t_pi, self.predictions)
        problem = build_problem(ctx.segment, ctx.t_request, ctx.t_pi, ctx.prev_representation,
                                self.manifest, self.models, preds, self.config, ctx.delta_p)
        best = choose_representation(problem, self.config)
        return Decision(best.first_choice, best.p_rb, best.u_rb, best.u_q, best.u_qf, best.utility)


def make_policy(name: str) -> Policy:
    """``utility``, ``oracle``, ``lowest`` or ``fixed:<margin>``."""
    key = name.strip().lower()
    if key == "utility":
        return UtilityPolicy()
    if key == "oracle":
        return OraclePolicy()
    if key == "lowest":
        return LowestPolicy()
    if key.startswith("fixed"):
        try:
            margin = float(key.split(":", 1)[1] if ":" in key else key.split("-", 1)[1])
        except (IndexError, ValueError):
            raise ConfigError(f"malformed fixed-margin policy {name!r}") from None
        return FixedMarginPolicy(margin)
    raise ConfigError(f"unknown policy {name!r}")


DECISION_FIELDS = ["t", "segment", "chosen_j", "p_rb", "u_rb", "u_q", "u_qf", "u"]


def write_decision_log(path, rows):
    """rows: iterable of (t, segment, Decision); chosen_j is written 1-based."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DECISION_FIELDS)
        for t, seg, d in rows:
            vals = [d.p_rb, d.u_rb, d.u_q, d.u_qf, d.u]
            w.writerow([repr(float(t)), seg, d.representation + 1]
                       + ["" if math.isnan(v) else repr(float(v)) for v in vals])
