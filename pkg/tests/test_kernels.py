"""The numba loops and the numpy fallback must agree."""
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from halsim import _loops as loops
from halsim import _vectorized as vec
from halsim import kernels
from halsim._accel import NUMBA_ENABLED


def test_backend_selected():
    assert kernels.BACKEND == ("numba" if NUMBA_ENABLED else "numpy")


@pytest.mark.parametrize("seed", range(5))
def test_smoothing_fits_agree(seed):
    x = np.random.default_rng(seed).uniform(1e5, 5e6, 8)
    tol = 1e-12 * float(x @ x)
    a1, s1 = loops.ses_fit(x, 0.01, tol, 6)
    a2, s2 = vec.ses_fit(x, 0.01, tol, 6)
    assert a1 == pytest.approx(a2, abs=1e-12) and s1 == pytest.approx(s2, rel=1e-12)
    h1 = loops.hw_fit(x, 0.02, tol, 6, 1e-7)
    h2 = vec.hw_fit(x, 0.02, tol, 6, 1e-7)
    np.testing.assert_allclose(h1, h2, rtol=1e-12, atol=1e-12)
    assert loops.hw_forecast(x, 0.3, 0.4) == pytest.approx(vec.hw_forecast(x, 0.3, 0.4), rel=1e-14)


@pytest.mark.parametrize("fam,p0,p1,a,b", [
    (0, 2.0, 0.0, 0.0, 1.0), (1, 0.3, 0.2, 0.0, 1.0),
    (2, 0.5, 0.3, 0.0, math.inf), (3, 0.5, 2.0, 0.0, math.inf),
])
def test_truncated_cdf_agrees(fam, p0, p1, a, b):
    xs = np.linspace(-0.5, 5.0, 57)
    got = np.array([loops.trunc_cdf(fam, p0, p1, a, b, x) for x in xs])
    np.testing.assert_allclose(got, vec.trunc_cdf(fam, p0, p1, a, b, xs), atol=1e-14)


@pytest.mark.parametrize("fam", [0, 1, 2, 3])
def test_fit_search_agrees(fam):
    rng = np.random.default_rng(fam)
    grid = np.linspace(0.1, 2.0, 129)
    mid = 0.5 * (grid[1:] + grid[:-1])
    target = np.sort(rng.uniform(0, 1, mid.size))
    h = grid[1] - grid[0]
    theta0 = np.zeros(2) if fam in (0, 3) else np.array([0.5, -1.0])
    lo = np.full(2, -13.8)
    hi = np.full(2, 13.8)
    if fam == 0:  # one free parameter: the second coordinate is pinned
        lo[1] = hi[1] = 0.0
    r1 = loops.fit_search(fam, theta0, 0.5, 0.0, math.inf, mid, target, h, lo, hi, 1e-7, 5000)
    r2 = vec.fit_search(fam, theta0, 0.5, 0.0, math.inf, mid, target, h, lo, hi, 1e-7, 5000)
    np.testing.assert_allclose(r1[0], r2[0], rtol=1e-9, atol=1e-9)


def _problem(rng, m, L):
    sizes = np.sort(rng.uniform(1e5, 4e6, m)) * rng.uniform(0.9, 1.1, (L, 1))
    q = np.linspace(0, 1, m)
    rows = np.tile([0.5, 1, 0.2, 0.2, 0.0, 1.0, 3, 0.5, 1.5, 0.0, math.inf], (L, 1))
    rows[:, 0] = rng.uniform(0.2, 0.8, L)
    rho = np.full(L, rng.uniform(5e5, 3e6))
    dt = 2.0 * np.arange(1, L + 1) + 1.0
    return sizes, q, rho, dt, rows


@pytest.mark.parametrize("mode", [0, 1])
def test_trajectory_search_agrees(mode):
    rng = np.random.default_rng(17 + mode)
    for _ in range(15):
        m, L = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        sizes, q, rho, dt, rows = _problem(rng, m, L)
        prev = int(rng.integers(-1, m))
        a = loops.score_trajectories(sizes, q, prev, rho, dt, rows, 0.6, -200.0, mode)
        b = vec.score_trajectories(sizes, q, prev, rho, dt, rows, 0.6, -200.0, mode)
        assert list(a[0]) == list(b[0])
        np.testing.assert_allclose(a[1:], b[1:], rtol=1e-9, atol=1e-300)


_SCRIPT = """
import numpy as np
from halsim import kernels
from halsim.adaptation import default_manifest, make_policy
from halsim.simulator import run_session
from halsim.traces import SyntheticTraceSpec, generate_trace
tr = generate_trace(SyntheticTraceSpec(seed=3, duration_s=150))
res = run_session(tr, default_manifest(), make_policy("utility"))
print(kernels.BACKEND)
print(res.metrics)
"""


def _run(flag):
    env = dict(os.environ)
    env.pop("HALSIM_DISABLE_NUMBA", None)
    if flag:
        env["HALSIM_DISABLE_NUMBA"] = "1"
    r = subprocess.run([sys.executable, "-c", _SCRIPT], env=env, capture_output=True, text=True,
                       timeout=600)
    assert r.returncode == 0, r.stderr
    return r.stdout.splitlines()


def test_numpy_fallback_reproduces_session():
    numpy_out = _run(True)
    assert numpy_out[0] == "numpy"
    default_out = _run(False)
    assert default_out[0] == ("numba" if NUMBA_ENABLED else "numpy")
    assert numpy_out[1] == default_out[1]
