import math

import numpy as np
import pytest

from halsim.traces import ThroughputTrace


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def constant_trace(bps, seconds, trace_id="const"):
    return ThroughputTrace(trace_id, np.full(seconds, int(round(bps / 8)), dtype=np.int64))


def audit_session(trace, manifest, result, tau=2.0, delta_p=5.0):
    """Check byte conservation and timeline invariants on an event log."""
    events = result.log.ordered()
    times = [e.t for e in events]
    assert times == sorted(times)
    # byte conservation per one-second slot
    per_slot = np.zeros(trace.duration + 1)
    for e in result.log.of_kind("BytesDelivered"):
        per_slot[int(math.ceil(e.t - 1e-9)) - 1] += e.payload["bytes"]
    assert np.all(per_slot[:trace.duration] <= trace.bytes + 1e-6)
    # every request is closed exactly once, and times are consistent
    open_req = None
    for e in events:
        if e.kind == "RequestIssued":
            assert open_req is None
            i = e.payload["segment"]
            assert e.t >= (i + 1) * tau - 1e-9
            assert e.payload["deadline"] == pytest.approx(i * tau + delta_p)
            open_req = e
        elif e.kind in ("SegmentComplete", "DeadlineMiss"):
            assert open_req is not None and e.payload["segment"] == open_req.payload["segment"]
            assert e.t >= open_req.t
            assert e.t <= open_req.payload["deadline"] + 1e-9
            open_req = None
    assert open_req is None
    # buffer level never exceeds delta_p - tau
    for i, tc in result.client.completions.items():
        assert result.client.buffer_level(tc) <= delta_p - tau + 1e-9


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion
# ---------------------------------------------------------------------------

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _ACCEPTANCE.append((marker.args[0], marker.args[1], rep.outcome))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    merged = {}
    for number, title, outcome in _ACCEPTANCE:
        ok = merged.get(number, (title, True))[1] and outcome == "passed"
        merged[number] = (title, ok)
    for number in sorted(merged):
        title, ok = merged[number]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}")
