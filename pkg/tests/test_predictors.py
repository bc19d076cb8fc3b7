import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halsim import predictors as pr
from halsim.errors import EmptyInput, SeriesTooShort, TooFewSamples
from halsim.traces import WindowedSeries


def test_spec_parse_and_label():
    s = pr.PredictorSpec.parse("sma:10:hm")
    assert (s.kind, s.n_past, s.mean_type) == ("SMA", 10, "hm")
    assert s.label == "SMA:10:hm"
    assert pr.PredictorSpec.parse("HW:10:mse").label == "HW:10:mse"
    assert pr.PredictorSpec.parse("LinExt:4").label == "LinExt:4"


@pytest.mark.parametrize("text", ["SMA", "FOO:3", "SES:1", "HW:2", "SMA:3:median"])
def test_spec_rejects(text):
    with pytest.raises(ValueError):
        pr.PredictorSpec.parse(text)


def test_sma_means():
    assert pr.predict_sma([1, 2, 4]) == pytest.approx(7 / 3)
    assert pr.predict_sma([1, 2, 4], "gm") == pytest.approx(2.0)
    assert pr.predict_sma([1, 2, 4], "hm") == pytest.approx(12 / 7)


def test_sma_harmonic_with_zero_falls_back_to_arithmetic():
    assert pr.predict_sma([0.0, 4.0], "hm") == 2.0


def test_sma_empty():
    with pytest.raises(EmptyInput):
        pr.predict_sma([])


def test_ses_hand_computed():
    assert pr.predict_ses([1.0, 2.0], alpha=0.5) == 1.5


def test_hw_hand_computed():
    # level 2, trend 1 -> f=3, level 3.5, trend 1.25 -> 4.75
    assert pr.predict_hw([1.0, 2.0, 4.0], alpha=0.5, beta=0.5) == 4.75


def test_fitted_values_frozen():
    a, mse = pr.fit_ses([1, 3, 2, 5, 4])
    assert a == pytest.approx(0.6742211979538548, abs=1e-9)
    assert mse == pytest.approx(3.1141910927223937, rel=1e-9)
    alpha, beta, _ = pr.fit_hw([1, 3, 2, 5, 4, 6])
    assert alpha == pytest.approx(0.40519287109375, abs=1e-9)
    assert beta == 1.0


def test_too_short_inputs():
    with pytest.raises(TooFewSamples):
        pr.predict_ses([1.0])
    with pytest.raises(TooFewSamples):
        pr.predict_hw([1.0, 2.0])
    with pytest.raises(TooFewSamples):
        pr.predict_linext([3.0])


def test_linext_line():
    assert pr.predict_linext([1, 2, 4]) == pytest.approx(16 / 3)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e4, 1e4), st.integers(3, 10))
def test_affine_inputs_extrapolate_exactly(a, b, n):
    x = [a + b * k for k in range(1, n + 1)]
    nxt = a + b * (n + 1)
    scale = max(1.0, abs(a), abs(b) * n)
    assert pr.predict_linext(x) == pytest.approx(nxt, abs=1e-9 * scale)
    assert pr.predict_hw(x) == pytest.approx(nxt, abs=1e-9 * scale)


def test_signed_error_definition():
    assert pr.signed_relative_error(150.0e3, 100.0e3) == pytest.approx(0.5)
    assert pr.signed_relative_error(50.0e3, 100.0e3) == pytest.approx(-0.5)
    # both sides floored at rho_min
    assert pr.signed_relative_error(0.0, 0.0) == 0.0
    assert pr.signed_relative_error(2e4, 0.0) == 1.0
    assert pr.relative_error(50.0e3, 100.0e3) == pytest.approx(0.5)


def test_signed_error_vectorized():
    out = pr.signed_relative_error(np.array([1e5, 3e5]), np.array([2e5, 2e5]))
    np.testing.assert_allclose(out, [-0.5, 0.5])


def test_signed_error_needs_positive_floor():
    with pytest.raises(ValueError):
        pr.signed_relative_error(1.0, 1.0, rho_min=0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e9), st.floats(0, 1e9))
def test_signed_error_lower_bound(h, r):
    assert pr.signed_relative_error(h, r) > -1.0


def test_horizon_means():
    s = WindowedSeries(1, np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(pr.horizon_means(s, 2), [1.5, 2.5, 3.5])
    with pytest.raises(SeriesTooShort):
        pr.horizon_means(s, 5)


def test_evaluate_protocol_uses_non_overlapping_means():
    s = WindowedSeries(1, np.array([10.0, 20.0, 30.0, 40.0, 50.0, 60.0]) * 1e4)
    recs = pr.evaluate_predictor(s, pr.PredictorSpec("SMA", 2), 2)
    # first issue time t=4 uses the means of [0,2) and [2,4)
    assert recs[0].t_issued == 4.0
    assert recs[0].rho_hat == pytest.approx(25e4)
    assert recs[0].rho_actual == pytest.approx(55e4)
    assert recs[0].signed_error == pytest.approx(25 / 55 - 1)
    assert len(recs) == 1


def test_evaluate_too_short():
    s = WindowedSeries(1, np.ones(5) * 1e5)
    with pytest.raises(SeriesTooShort):
        pr.evaluate_predictor(s, pr.PredictorSpec("SMA", 3), 2)


def test_constant_trace_has_zero_error():
    s = WindowedSeries(1, np.full(100, 1e6))
    for spec in ("SMA:5:hm", "SES:5", "LinExt:5", "HW:5"):
        recs = pr.evaluate_predictor(s, pr.PredictorSpec.parse(spec), 3)
        assert all(abs(r.signed_error) < 1e-12 for r in recs)
        for row in pr.threshold_summary(recs):
            assert row["frac_lt_0.2"] == row["frac_lt_0.5"] == row["frac_lt_1.0"] == 1.0


def test_threshold_summary_monotone():
    recs = [pr.PredictionRecord(0, 1, 0, 0, e) for e in (-0.1, -0.3, -0.9, 0.05, 0.7, 1.5)]
    rows = {r["side"]: r for r in pr.threshold_summary(recs)}
    assert rows["under"]["n"] == 3
    assert (rows["under"]["frac_lt_0.2"], rows["under"]["frac_lt_0.5"],
            rows["under"]["frac_lt_1.0"]) == pytest.approx((1 / 3, 2 / 3, 1.0))
    assert (rows["over"]["frac_lt_0.2"], rows["over"]["frac_lt_0.5"],
            rows["over"]["frac_lt_1.0"]) == pytest.approx((1 / 3, 1 / 3, 2 / 3))


def test_error_csv_roundtrip(tmp_path):
    r = pr.PredictionRecord(3.0, 2, 1.5e6, 1.0e6, 0.5)
    p = tmp_path / "e.csv"
    pr.write_error_csv(p, [("tr", "SMA:1:ar", r)])
    [(tid, label, back)] = pr.read_error_csv(p)
    assert (tid, label) == ("tr", "SMA:1:ar")
    assert back == r


def test_ses_flat_objective_ties_to_smallest_alpha():
    # only one error term, independent of alpha: the smallest alpha wins
    assert pr.fit_ses([0.0, 10.0]) == (0.0, 100.0)
    assert pr.predict_ses([0.0, 10.0]) == 0.0


def test_ses_with_unit_alpha_is_last_value():
    assert pr.predict_ses([3.0, 7.0, 5.0], alpha=1.0) == pr.predict_sma([5.0])
