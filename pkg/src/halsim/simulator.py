"""Trace-driven replay of a live-streaming session."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats as sstats

from .adaptation import (AdaptationConfig, ClientState, Decision, DecisionContext,
                         LowestPolicy, Policy, StreamManifest, make_policy,
                         on_deadline_miss, playback_time, publish_time, tune_in)
from .errors import ConfigError
from .traces import ThroughputTrace

_EPS = 1e-9

EVENT_KINDS = ("RequestIssued", "BytesDelivered", "SegmentComplete", "DeadlineMiss",
               "TuneIn", "PlaybackStart")


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    payload: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"t": self.t, "event": self.kind, **self.payload}, sort_keys=True)


@dataclass
class SessionEventLog:
    events: List[Event] = field(default_factory=list)

    def add(self, t, kind, **payload):
        self.events.append(Event(float(t), kind, payload))

    def ordered(self) -> List[Event]:
        return sorted(self.events, key=lambda e: e.t)

    def of_kind(self, kind) -> List[Event]:
        return [e for e in self.ordered() if e.kind == kind]

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.ordered())

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


@dataclass(frozen=True)
class SessionMetrics:
    skipped_fraction: float
    unplayable_fraction: float
    adjusted_skipped: float
    mean_u_q: float
    mean_u_qf: float
    utilization: float
    rebuffer_events: int
    segments_played: int = 0
    segments_skipped: int = 0

    def as_dict(self):
        return asdict(self)


@dataclass
class SessionResult:
    metrics: SessionMetrics
    log: SessionEventLog
    played: Dict[int, int]
    decisions: list
    client: ClientState

    def __iter__(self):
        yield self.metrics
        yield self.log


class FluidLink:
    """Bytes of a trace delivered uniformly within each one-second slot."""

    def __init__(self, trace: ThroughputTrace):
        self.bits = trace.bytes.astype(float) * 8.0
        self.cum = np.concatenate(([0.0], np.cumsum(self.bits)))
        self.duration = trace.duration

    def delivered(self, t: float) -> float:
        """Cumulative bits the link can carry in ``[0, t]``."""
        if t <= 0:
            return 0.0
        if t >= self.duration:
            return float(self.cum[-1])
        k = int(math.floor(t))
        return float(self.cum[k] + (t - k) * self.bits[k])

    def completion(self, t0: float, size_bits: float) -> float:
        """Earliest time a download of ``size_bits`` started at ``t0`` ends (inf past the trace)."""
        target = self.delivered(t0) + size_bits
        k = int(np.searchsorted(self.cum, target, side="left"))
        if k > self.duration:
            return math.inf
        if k == 0:
            return t0
        sec = k - 1
        t1 = sec + (target - self.cum[sec]) / self.bits[sec]
        return max(t1, t0)

    def chunks(self, t0: float, t1: float):
        """(slot end, bits) for each slot overlapped by ``[t0, t1]``."""
        out = []
        k = int(math.floor(t0))
        while k < t1 and k < self.duration:
            a, b = max(t0, k), min(t1, k + 1)
            bits = (b - a) * self.bits[k]
            if b > a:
                out.append((b, bits))
            k += 1
        return out


def _decision_ctx(policy, i, t_req, prev, delta_p, manifest, link, past_bps):
    return DecisionContext(
        segment=i, t_request=t_req, t_pi=int(math.floor(t_req + _EPS)),
        prev_representation=prev, delta_p=delta_p, manifest=manifest,
        past_bps=past_bps,
        completion=link.completion if policy.needs_lookahead else None)


def run_session(trace: ThroughputTrace, manifest: StreamManifest, policy: Policy,
                config: Optional[AdaptationConfig] = None, seed: int = 0,
                unplayable_fraction: Optional[float] = None) -> SessionResult:
    """Replay one session and compute its metrics.

    The client joins at the first publication instant, fetches segments one
    at a time, and re-tunes whenever a segment misses its playback deadline.
    The session stops at the first request that would run past the end of
    the trace. ``seed`` is accepted for interface stability; the replay
    itself draws no random numbers.
    """
    config = config or AdaptationConfig()
    tau = manifest.tau_s
    config.check_tau(tau)
    if trace.duration < 2 * tau:
        raise ConfigError("trace is shorter than two segment durations")
    link = FluidLink(trace)
    past_bps = link.bits  # policies only ever read past_bps[:t_pi]
    policy.reset(manifest, config)
    log = SessionEventLog()
    q = manifest.quality

    ti = tune_in(tau, tau, config.delta_p_max_s)
    delta_p = ti.delta_p
    client = ClientState(ti.segment, delta_p, tau)
    log.add(ti.t_request, "TuneIn", segment=ti.segment, delta_p=delta_p, reason="join")
    i, t_free, forced = ti.segment, ti.t_request, True
    prev: Optional[int] = None
    observed = 0
    played: Dict[int, int] = {}
    skipped = misses = 0
    delivered_media = 0.0
    decisions = []
    awaiting_start = True

    while True:
        t_req = max(t_free, publish_time(i, tau))
        if t_req >= trace.duration:
            break
        while observed <= int(math.floor(t_req + _EPS)):
            policy.observe(observed, past_bps)
            observed += 1
        if forced:
            decision = Decision(0)
        else:
            ctx = _decision_ctx(policy, i, t_req, prev, delta_p, manifest, link, past_bps)
            decision = policy.choose(ctx)
        j = int(decision.representation)
        if not 0 <= j < manifest.m:
            raise ConfigError(f"policy chose invalid representation {j}")
        size = manifest.size(i, j)
        deadline = playback_time(i, tau, delta_p)
        t_done = link.completion(t_req, size)
        if t_done <= deadline + _EPS:
            t_end = t_done
        elif deadline <= trace.duration:
            t_end = deadline
        else:
            break  # outcome falls past the end of the trace
        decisions.append((t_req, i, decision))
        log.add(t_req, "RequestIssued", segment=i, representation=j, size_bits=size,
                deadline=deadline)
        for t_chunk, bits in link.chunks(t_req, t_end):
            log.add(t_chunk, "BytesDelivered", segment=i, bytes=bits / 8.0)
        if t_done <= deadline + _EPS:
            log.add(t_done, "SegmentComplete", segment=i, representation=j)
            client.completions[i] = t_done
            played[i] = j
            delivered_media += size
            if awaiting_start:
                log.add(deadline, "PlaybackStart", segment=i, startup_delay=deadline - t_req)
                awaiting_start = False
            prev, t_free, forced = j, t_done, False
            i += 1
        else:
            log.add(deadline, "DeadlineMiss", segment=i, representation=j)
            miss = on_deadline_miss(i, deadline, tau, config.delta_p_max_s)
            skipped += miss.skipped
            misses += 1
            log.add(miss.t_request, "TuneIn", segment=miss.next_segment, delta_p=delta_p,
                    reason="miss", skipped=miss.skipped)
            i, t_free, forced, prev = miss.next_segment, miss.t_request, True, None
            awaiting_start = True
        client.next_segment = i
        client.last_representation = prev

    total = len(played) + skipped
    skipped_fraction = skipped / total if total else 0.0
    seq = sorted(played)
    u_q = float(np.mean(q[[played[k] for k in seq]])) if seq else 0.0
    pairs = [(played[a], played[a + 1]) for a in seq if a + 1 in played]
    u_qf = float(1.0 - np.mean([abs(q[x] - q[y]) for x, y in pairs])) if pairs else 1.0
    t0 = tau
    capacity = link.cum[-1] - link.delivered(t0)
    utilization = delivered_media / capacity if capacity > 0 else 0.0
    unplayable = 0.0 if unplayable_fraction is None else float(unplayable_fraction)
    metrics = SessionMetrics(
        skipped_fraction=skipped_fraction,
        unplayable_fraction=unplayable,
        adjusted_skipped=max(0.0, skipped_fraction - unplayable),
        mean_u_q=u_q,
        mean_u_qf=u_qf,
        utilization=float(utilization),
        rebuffer_events=misses,
        segments_played=len(played),
        segments_skipped=skipped,
    )
    return SessionResult(metrics, log, played, decisions, client)


def unplayable_baseline(trace: ThroughputTrace, manifest: StreamManifest,
                        config: Optional[AdaptationConfig] = None) -> float:
    """Skipped fraction when always fetching the lowest representation."""
    return run_session(trace, manifest, LowestPolicy(), config).metrics.skipped_fraction


def simulate(trace, manifest, policy_name: str, config=None, seed=0, unplayable=None):
    """Run a session for a named policy, computing the correction term if needed."""
    config = config or AdaptationConfig()
    if unplayable is None:
        unplayable = unplayable_baseline(trace, manifest, config)
    return run_session(trace, manifest, make_policy(policy_name), config, seed, unplayable)


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

REPORTED_METRICS = ("adjusted_skipped", "mean_u_q", "mean_u_qf", "skipped_fraction",
                    "unplayable_fraction", "utilization", "rebuffer_events")


def confidence_interval(values: Sequence[float], level: float = 0.9):
    """Mean and two-sided Student-t interval over independent runs."""
    x = np.asarray(values, dtype=float)
    mean = float(x.mean())
    if x.size < 2:
        return mean, float("nan"), float("nan")
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        return mean, mean, mean
    half = float(sstats.t.ppf(0.5 + level / 2, x.size - 1)) * sd / math.sqrt(x.size)
    return mean, mean - half, mean + half


@dataclass
class ExperimentResult:
    per_trace: Dict[str, Dict[str, SessionMetrics]]
    sessions: Dict[str, Dict[str, SessionResult]]
    level: float = 0.9

    def table(self, metrics=REPORTED_METRICS):
        rows = []
        for policy, by_trace in self.per_trace.items():
            for metric in metrics:
                vals = [getattr(m, metric) for m in by_trace.values()]
                mean, lo, hi = confidence_interval(vals, self.level)
                rows.append({"policy": policy, "metric": metric, "mean": mean,
                             "ci_lo": lo, "ci_hi": hi})
        return rows

    def mean(self, policy, metric):
        return float(np.mean([getattr(m, metric) for m in self.per_trace[policy].values()]))


def run_experiment(traces: Sequence[ThroughputTrace], manifest: StreamManifest,
                   policies: Sequence[str], config: Optional[AdaptationConfig] = None,
                   seed: int = 0, level: float = 0.9, keep_sessions: bool = False,
                   progress: Optional[Callable[[str], None]] = None) -> ExperimentResult:
    """Every policy on every trace; intervals are computed across traces."""
    config = config or AdaptationConfig()
    per_trace: Dict[str, Dict[str, SessionMetrics]] = {p: {} for p in policies}
    sessions: Dict[str, Dict[str, SessionResult]] = {p: {} for p in policies}
    for k, tr in enumerate(traces):
        key = tr.id if tr.id not in per_trace[policies[0]] else f"{tr.id}#{k}"
        unplayable = unplayable_baseline(tr, manifest, config)
        for name in policies:
            res = run_session(tr, manifest, make_policy(name), config, seed, unplayable)
            per_trace[name][key] = res.metrics
            if keep_sessions:
                sessions[name][key] = res
            if progress:
                progress(f"{key} {name}: adjusted_skipped={res.metrics.adjusted_skipped:.4f} "
                         f"mean_u_q={res.metrics.mean_u_q:.4f}")
    return ExperimentResult(per_trace, sessions, level)


RESULT_FIELDS = ["policy", "metric", "mean", "ci_lo", "ci_hi"]


def write_results_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def write_session_metrics_csv(path, result: ExperimentResult):
    fields = ["policy", "trace_id"] + list(SessionMetrics.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for policy, by_trace in result.per_trace.items():
            for tid, m in by_trace.items():
                w.writerow([policy, tid] + [repr(v) if isinstance(v, float) else v
                                            for v in asdict(m).values()])
