import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halsim import adaptation as ad
from halsim.errors import ConfigError, DegeneratePsnrRange, MissingPrediction, NoSegmentAvailable
from halsim.error_model import ErrorModelState


# ---------------------------------------------------------------- manifest

def test_default_manifest():
    m = ad.default_manifest()
    assert m.m == 10
    assert m.mmbr[0] == 1e5 and m.mmbr[-1] == 4.2e6
    assert m.quality[0] == 0.0 and m.quality[-1] == 1.0
    np.testing.assert_allclose(m.segment_sizes.mean(axis=0) / 2.0, m.mmbr, rtol=1e-12)
    assert m.size(1000, 3) == m.size(0, 3)  # sizes wrap around


def test_manifest_roundtrip(tmp_path):
    m = ad.StreamManifest.generate([1e5, 5e5], tau_s=1.0, n_segments=5, vbr_cv=0.2, seed=4)
    p = tmp_path / "m.json"
    import json
    p.write_text(json.dumps(m.to_dict()))
    back = ad.StreamManifest.load(p)
    np.testing.assert_array_equal(back.segment_sizes, m.segment_sizes)
    assert back.psnr.tolist() == m.psnr.tolist()


def test_manifest_from_generator_dict():
    m = ad.StreamManifest.from_dict({"tau_s": 2, "representations": [
        {"mmbr_bps": 1e5}, {"mmbr_bps": 3e5}], "generator": {"n_segments": 4}})
    assert m.segment_sizes.shape == (4, 2)


@pytest.mark.parametrize("rates,psnr,err", [
    ([2e5, 1e5], None, ConfigError),
    ([1e5, 2e5], [30.0, 30.0], DegeneratePsnrRange),
])
def test_manifest_validation(rates, psnr, err):
    with pytest.raises(err):
        ad.StreamManifest.generate(rates, psnr)


def test_manifest_rate_mismatch():
    reps = [ad.Representation(0, 1e5, 30.0)]
    with pytest.raises(ConfigError):
        ad.StreamManifest(2.0, reps, np.array([[1e5]]))


def test_single_representation_quality_is_zero():
    m = ad.StreamManifest.generate([5e5])
    assert m.quality.tolist() == [0.0]


# ---------------------------------------------------------------- config

def test_config_defaults_and_validation():
    c = ad.AdaptationConfig()
    assert (c.alpha_q, c.alpha_rb, c.alpha_cdf, c.t_max_s) == (0.6, -200.0, 60.0, 10)
    with pytest.raises(ConfigError):
        ad.AdaptationConfig(alpha_q=1.5)
    with pytest.raises(ConfigError):
        ad.AdaptationConfig(alpha_rb=1.0)
    with pytest.raises(ConfigError):
        ad.AdaptationConfig.from_dict({"nope": 1})
    with pytest.raises(ConfigError):
        ad.AdaptationConfig(delta_p_max_s=3.0).check_tau(2.0)
    assert ad.AdaptationConfig.from_dict(c.to_dict()) == c


# ---------------------------------------------------------------- timeline

def test_times():
    assert ad.publish_time(0, 2.0) == 2.0
    assert ad.playback_time(3, 2.0, 5.0) == 11.0


@pytest.mark.parametrize("t,seg,t_req", [(2.0, 0, 2.0), (3.5, 1, 4.0), (7.0, 2, 7.0), (10.0, 4, 10.0)])
def test_tune_in(t, seg, t_req):
    ti = ad.tune_in(t, 2.0, 5.0)
    assert (ti.segment, ti.t_request, ti.delta_p) == (seg, t_req, 5.0)


def test_tune_in_before_first_publication():
    with pytest.raises(NoSegmentAvailable):
        ad.tune_in(1.0, 2.0, 5.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(2.0, 500.0), st.sampled_from([(1.0, 2.0), (2.0, 5.0), (2.0, 8.0), (4.0, 9.0)]))
def test_tune_in_properties(t, cfg):
    tau, dp = cfg
    t = max(t, tau)
    ti = ad.tune_in(t, tau, dp)
    i = ti.segment
    assert ti.t_request >= t
    assert ad.publish_time(i, tau) <= ti.t_request + 1e-9
    assert ad.playback_time(i, tau, dp) >= ti.t_request + tau - 1e-9
    if i > 0:  # the previous segment would not leave tau seconds
        assert ad.playback_time(i - 1, tau, dp) < ti.t_request + tau - 1e-9


def test_deadline_miss_skips_until_retuned():
    out = ad.on_deadline_miss(3, 11.0, 2.0, 5.0)
    assert (out.next_segment, out.skipped, out.t_request) == (4, 1, 11.0)


def test_reachable_horizon():
    assert ad.reachable_horizon(3, 7, 2.0, 5.0, 10) == 6
    assert ad.reachable_horizon(9, 7, 2.0, 5.0, 10) == 9  # never before i
    assert ad.horizon_for(11.0, 7, 10) == 4
    assert ad.horizon_for(7.2, 7, 10) == 1
    assert ad.horizon_for(40.0, 7, 10) == 10


def test_client_buffer_level():
    c = ad.ClientState(0, 5.0, 2.0)
    assert c.buffer_level(3.0) == 0.0
    c.completions[0] = 2.5
    c.completions[1] = 4.0
    assert c.buffer_level(4.0) == pytest.approx(5.0 + 2 - 4.0)


# ---------------------------------------------------------------- subutilities

def test_u_rb_values():
    assert ad.u_rb(0.0, -200) == 1.0
    assert ad.u_rb(1.0, -200) == 0.0
    assert ad.u_rb(0.01, -200) == pytest.approx(math.exp(-2), rel=1e-12)
    with pytest.raises(ValueError):
        ad.u_rb(0.5, 1.0)


def test_u_q_and_u_qf():
    psnr = [30.0, 35.0, 40.0]
    assert ad.u_q([0, 2], psnr) == 0.5
    assert ad.u_qf([0, 2], psnr) == 0.5
    assert ad.u_qf([2, 2], psnr, prev_representation=0) == 0.5
    assert ad.u_qf([1], psnr) == 1.0


def test_prb_modes():
    assert ad.prb_from_phi([0.9, 0.8]) == pytest.approx(0.28)
    assert ad.prb_from_phi([0.9, 0.8], "sum_clamped") == 0.0
    assert ad.prb_from_phi([0.2, 0.3], "sum_clamped") == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ad.prb_from_phi([0.5], "other")


def test_utility_combination():
    assert ad.utility(0.0, 1.0, 0.5) == pytest.approx(0.6 + 0.4 * 0.5)
    assert ad.utility(1.0, 1.0, 1.0) == 0.0


# ---------------------------------------------------------------- search

def random_problem(rng, m=None, L=None):
    m = m or int(rng.integers(1, 5))
    L = L or int(rng.integers(1, 5))
    rates = np.cumsum(rng.uniform(1e5, 1e6, m))
    sizes = rates * 2.0 * rng.uniform(0.8, 1.2, (L, m))
    q = ad.quality_levels(np.sort(rng.uniform(25, 45, m)) + np.arange(m) * 1e-3) if m > 1 else np.zeros(1)
    rows = np.empty((L, 11))
    for k in range(L):
        rows[k] = [rng.uniform(0.1, 0.9), rng.choice([0, 1, 2, 3]), *rng.uniform(0.1, 3.0, 2), 0.0, 1.0,
                   rng.choice([0, 1, 2, 3]), *rng.uniform(0.1, 3.0, 2), 0.0, math.inf]
        if rows[k, 1] in (1, 2):
            rows[k, 2] = rng.uniform(-0.5, 1.0)
        if rows[k, 6] in (1, 2):
            rows[k, 7] = rng.uniform(-0.5, 2.0)
    rho = np.full(L, rng.uniform(2e5, 3e6))
    dt = 2.0 * np.arange(1, L + 1) + rng.uniform(0, 2)
    prev = int(rng.integers(-1, m))
    return ad.ScoringProblem(int(rng.integers(0, 100)), sizes, q, prev, rho, dt, rows)


@pytest.mark.parametrize("mode", ad.PRB_MODES)
def test_exhaustive_matches_brute_force(mode):
    rng = np.random.default_rng(99)
    cfg = ad.AdaptationConfig(prb_mode=mode)
    for _ in range(40):
        p = random_problem(rng)
        fast, slow = ad.choose_representation(p, cfg), ad.brute_force(p, cfg)
        assert fast.choices == slow.choices
        assert fast.utility == pytest.approx(slow.utility, rel=1e-9, abs=1e-300)


def test_beam_is_exact_when_wide_enough():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = random_problem(rng, m=3, L=3)
        wide = ad.AdaptationConfig(beam_width=27)
        assert ad.search_beam(p, wide).choices == ad.brute_force(p, wide).choices


def test_beam_used_above_enumeration_cap():
    rng = np.random.default_rng(8)
    p = random_problem(rng, m=4, L=4)
    cfg = ad.AdaptationConfig(enumeration_cap=10, beam_width=8)
    t = ad.choose_representation(p, cfg)
    assert len(t.choices) == 4
    assert t.utility == pytest.approx(p.score(t.choices, cfg).utility)
    assert t.utility <= ad.brute_force(p, cfg).utility + 1e-12


def test_tie_break_prefers_lower_first_choice():
    # certain success everywhere, zero quality spread: every trajectory ties
    rows = np.tile([0.5, 0, 1e6, 0, 0, 1, 0, 1e-6, 0, 0, math.inf], (2, 1))
    p = ad.ScoringProblem(0, np.ones((2, 2)), np.zeros(2), -1, np.full(2, 1e9),
                          np.full(2, 10.0), rows)
    assert ad.choose_representation(p, ad.AdaptationConfig()).choices == (0, 0)


def test_build_problem_shapes_and_missing_prediction():
    man = ad.default_manifest()
    cfg = ad.AdaptationConfig()
    models = {T: ErrorModelState(T) for T in range(1, 11)}
    preds = {T: 1e6 for T in range(1, 11)}
    p = ad.build_problem(3, 7.5, 7, 2, man, models, preds, cfg, 5.0)
    assert p.length == 4  # segments 3..6
    np.testing.assert_allclose(p.dt, [11 - 7.5, 13 - 7.5, 15 - 7.5, 17 - 7.5])
    assert p.prev == 2
    with pytest.raises(MissingPrediction):
        ad.build_problem(3, 7.5, 7, 2, man, models, {1: 1e6}, cfg, 5.0)


# ---------------------------------------------------------------- baselines

def test_fixed_margin_rule():
    rates = [1e5, 2e5, 3.5e5, 6e5, 9e5]
    assert ad.fixed_margin_policy(0.8, rates, 1e6) == 1   # budget 200 kbit/s
    assert ad.fixed_margin_policy(0.2, rates, 1e6) == 3   # budget 800 kbit/s
    assert ad.fixed_margin_policy(0.0, rates, 9e5) == 4
    assert ad.fixed_margin_policy(0.5, rates, 1e4) == 0
    with pytest.raises(ValueError):
        ad.fixed_margin_policy(1.0, rates, 1e6)


def test_fixed_margin_monotone_in_margin():
    rates = ad.default_manifest().mmbr
    picks = [ad.fixed_margin_policy(m, rates, 2e6) for m in np.linspace(0, 0.95, 20)]
    assert picks == sorted(picks, reverse=True)


def test_oracle_rule_with_constant_link():
    man = ad.StreamManifest.generate([1e5, 5e5, 2e6], tau_s=2.0)
    rate = 1e6

    def completion(t0, bits):
        return t0 + bits / rate

    # 2 Mbit/s segments need 4 s per 2 s segment: too slow
    assert ad.oracle_policy(0, 2.0, man, 5.0, completion) == 1


def test_make_policy():
    assert isinstance(ad.make_policy("utility"), ad.UtilityPolicy)
    assert isinstance(ad.make_policy("oracle"), ad.OraclePolicy)
    assert ad.make_policy("fixed:0.7").margin == 0.7
    for bad in ("fixed:x", "fixed:1.2", "greedy"):
        with pytest.raises(ConfigError):
            ad.make_policy(bad)


def test_decision_log(tmp_path):
    p = tmp_path / "d.csv"
    ad.write_decision_log(p, [(2.0, 0, ad.Decision(0)), (4.0, 1, ad.Decision(2, 0.1, 0.2, 0.3, 0.4, 0.5))])
    lines = p.read_text().splitlines()
    assert lines[0] == "t,segment,chosen_j,p_rb,u_rb,u_q,u_qf,u"
    assert lines[1] == "2.0,0,1,,,,,"
    assert lines[2] == "4.0,1,3,0.1,0.2,0.3,0.4,0.5"


def test_single_maximal_jump():
    assert ad.u_qf([1], [30.0, 40.0], prev_representation=0) == 0.0


def test_psnr_affine_invariance():
    rng = np.random.default_rng(21)
    for _ in range(10):
        p = random_problem(rng, m=3, L=3)
        psnr = np.array([31.0, 36.5, 44.0])
        q1 = ad.quality_levels(psnr)
        q2 = ad.quality_levels(2.5 * psnr + 7.0)
        np.testing.assert_allclose(q1, q2, atol=1e-15)
        cfg = ad.AdaptationConfig()
        a = ad.choose_representation(ad.ScoringProblem(p.first_segment, p.sizes, q1, p.prev,
                                                       p.rho, p.dt, p.models), cfg)
        b = ad.choose_representation(ad.ScoringProblem(p.first_segment, p.sizes, q2, p.prev,
                                                       p.rho, p.dt, p.models), cfg)
        assert a.choices == b.choices
