import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from incres_affect.errors import LengthMismatch, ZeroDenominator, ZeroVariance
from incres_affect.metrics import cc, ccc, evaluate, histogram2d, parse_report, rmse, sagr


# single-loop references --------------------------------------------------

def loop_mean(xs):
    s = 0.0
    for x in xs:
        s += x
    return s / len(xs)


def loop_rmse(p, t):
    s = 0.0
    for a, b in zip(p, t):
        s += (a - b) ** 2
    return math.sqrt(s / len(p))


def loop_moments(p, t):
    mp, mt = loop_mean(p), loop_mean(t)
    vp = vt = cov = 0.0
    for a, b in zip(p, t):
        vp += (a - mp) ** 2
        vt += (b - mt) ** 2
        cov += (a - mp) * (b - mt)
    n = len(p)
    return mp, mt, vp / n, vt / n, cov / n


def loop_cc(p, t):
    _, _, vp, vt, cov = loop_moments(p, t)
    return cov / (math.sqrt(vp) * math.sqrt(vt))


def loop_ccc(p, t):
    mp, mt, vp, vt, cov = loop_moments(p, t)
    rho = cov / (math.sqrt(vp) * math.sqrt(vt))
    return 2 * rho * math.sqrt(vp) * math.sqrt(vt) / (vp + vt + (mp - mt) ** 2)


def loop_sign(x):
    return int(x > 0) - int(x < 0)


def loop_sagr(p, t):
    hits = 0
    for a, b in zip(p, t):
        hits += loop_sign(a) == loop_sign(b)
    return hits / len(p)


def test_all_metrics_match_loop_references():
    g = np.random.default_rng(0)
    for _ in range(100):
        n = int(g.integers(2, 60))
        p, t = g.uniform(-1, 1, n), g.uniform(-1, 1, n)
        assert abs(rmse(p, t) - loop_rmse(p, t)) <= 1e-12
        assert abs(cc(p, t) - loop_cc(p, t)) <= 1e-12
        assert abs(ccc(p, t) - loop_ccc(p, t)) <= 1e-12
        assert abs(sagr(p, t) - loop_sagr(p, t)) <= 1e-12
        assert abs(ccc(p, t)) <= abs(cc(p, t)) + 1e-15


def test_rmse_examples():
    assert rmse([0.1, 0.2], [0.1, 0.2]) == 0.0
    assert rmse([1, 1], [0, 0]) == 1.0
    assert rmse([0.2, -0.4, 0.6], [0, 0, 0]) == pytest.approx(math.sqrt(0.56 / 3), abs=1e-15)
    assert rmse([0.2, -0.4, 0.6], [0, 0, 0]) == pytest.approx(0.43205, abs=1e-5)


def test_cc_examples():
    t = np.array([0.1, -0.5, 0.8, 0.3])
    assert cc(t, t) == pytest.approx(1.0, abs=1e-15)
    assert cc(-t, t) == pytest.approx(-1.0, abs=1e-15)
    assert cc(t + 0.3, t) == pytest.approx(1.0, abs=1e-12)


def test_cc_constant_raises():
    with pytest.raises(ZeroVariance):
        cc([0.1, 0.2, 0.3], [0.5, 0.5, 0.5])
    with pytest.raises(ZeroVariance):
        cc([0.5, 0.5], [0.1, 0.2])


def test_ccc_examples():
    t = np.array([0.1, -0.5, 0.8, 0.3])
    assert ccc(t, t) == pytest.approx(1.0, abs=1e-15)
    p, t = [0.1, 0.5, 0.9], [0.0, 0.5, 1.0]
    assert abs(ccc(p, t) - loop_ccc(p, t)) <= 1e-12
    # hand values: var_p = 0.32/3, var_t = 0.5/3, cov = 0.4/3, equal means
    assert ccc(p, t) == pytest.approx(0.8 / 0.82, abs=1e-12)


def test_ccc_zero_denominator():
    with pytest.raises(ZeroDenominator):
        ccc([0.2, 0.2], [0.2, 0.2])
    # constant but offset means is defined (and zero)
    assert ccc([0.2, 0.2], [0.4, 0.4]) == 0.0


def test_ccc_shift_penalty_law():
    g = np.random.default_rng(1)
    for _ in range(10):
        theta = g.uniform(-1, 1, 50)
        c = float(g.uniform(-0.5, 0.5))
        var = loop_moments(theta, theta)[2]
        expect = 2 * var / (2 * var + c * c)
        assert ccc(theta, theta + c) == pytest.approx(expect, abs=1e-12)
        assert ccc(theta, theta + c) <= cc(theta, theta + c)


def test_sagr_examples():
    assert sagr([0.3, -0.2], [0.9, -0.01]) == 1.0
    assert sagr([0.3, -0.2], [-0.9, -0.01]) == 0.5
    assert sagr([0.0, 0.5], [0.0, 0.5]) == 1.0
    assert sagr([0.0], [0.1]) == 0.0


def test_length_mismatch():
    for fn in (rmse, cc, ccc, sagr):
        with pytest.raises(LengthMismatch):
            fn([0.1, 0.2], [0.1, 0.2, 0.3])
    with pytest.raises(LengthMismatch):
        histogram2d([0.1], [0.1, 0.2], 4)


series = hnp.arrays(np.float64, st.integers(2, 40), elements=st.floats(-1, 1))


@settings(max_examples=60, deadline=None)
@given(series, st.data())
def test_correlation_properties(a, data):
    b = data.draw(hnp.arrays(np.float64, a.size, elements=st.floats(-1, 1)))
    assume(np.var(a) > 1e-6 and np.var(b) > 1e-6)
    assert ccc(a, a) == pytest.approx(1.0, abs=1e-12)
    assert abs(ccc(a, b)) <= abs(cc(a, b)) + 1e-12
    assert ccc(a, b) == pytest.approx(ccc(b, a), abs=1e-12)
    scale = data.draw(st.floats(0.1, 10))
    shift = data.draw(st.floats(-5, 5))
    assert cc(scale * a + shift, b) == pytest.approx(cc(a, b), abs=1e-9)
    assert -1.0 <= cc(a, b) <= 1.0


@settings(max_examples=40, deadline=None)
@given(series, st.floats(0.01, 1.0))
def test_ccc_decreases_with_shift(a, c):
    assume(np.var(a) > 1e-6)
    assert ccc(a, a + 2 * c) < ccc(a, a + c) < ccc(a, a)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_rmse_is_a_metric(data):
    n = data.draw(st.integers(1, 30))
    arr = hnp.arrays(np.float64, n, elements=st.floats(-1, 1))
    x, y, z = data.draw(arr), data.draw(arr), data.draw(arr)
    assert rmse(x, y) >= 0
    assert rmse(x, x) == 0
    assert rmse(x, y) == pytest.approx(rmse(y, x), abs=1e-15)
    assert rmse(x, z) <= rmse(x, y) + rmse(y, z) + 1e-12
    if not np.array_equal(x, y):
        assert rmse(x, y) > 0


@settings(max_examples=60, deadline=None)
@given(series, st.data())
def test_sagr_is_multiple_of_one_over_n(a, data):
    b = data.draw(hnp.arrays(np.float64, a.size, elements=st.floats(-1, 1)))
    s = sagr(a, b)
    assert 0.0 <= s <= 1.0
    assert s * a.size == pytest.approx(round(s * a.size), abs=1e-9)


def test_histogram_single_point():
    h = histogram2d([0.0], [0.0], 2)
    np.testing.assert_array_equal(h, [[0, 0], [0, 1]])


def test_histogram_upper_edge_inclusive():
    h = histogram2d(np.ones(7), np.ones(7), 5)
    assert h[4, 4] == 7 and h.sum() == 7


def test_histogram_rows_are_valence():
    h = histogram2d([-0.9], [0.9], 2)
    np.testing.assert_array_equal(h, [[0, 1], [0, 0]])


def test_histogram_uniform_monte_carlo():
    g = np.random.default_rng(2)
    n = 10_000
    h = histogram2d(g.uniform(-1, 1, n), g.uniform(-1, 1, n), 10)
    p = 1 / 100
    sigma = math.sqrt(n * p * (1 - p))
    assert h.sum() == n
    assert np.all(np.abs(h - n * p) <= 5 * sigma)


def test_evaluate_report_structure_and_round_trip():
    g = np.random.default_rng(3)
    truth = g.uniform(-1, 1, (30, 2))
    pred = truth + g.normal(0, 0.1, (30, 2))
    vids = ["a"] * 10 + ["b"] * 20
    report = evaluate(pred, truth, vids, bins=4)
    head = report.headline()
    assert len(head) == 8
    assert head["valence_rmse"] == rmse(np.clip(pred[:, 0], -1, 1), truth[:, 0])
    assert report.histogram.sum() == 30
    assert set(report.per_video) == {"a", "b"}
    parsed = parse_report(report.to_text())
    for key, value in head.items():
        assert parsed[key] == value


def test_evaluate_constant_prediction_marks_undefined():
    truth = np.array([[0.1, 0.2], [0.3, -0.2], [-0.5, 0.4]])
    pred = np.zeros((3, 2))
    report = evaluate(pred, truth, ["v"] * 3)
    assert report.metrics["valence"]["cc"] is None
    assert report.undefined["valence_cc"] == 1
    assert report.per_video_mean["valence_cc"] is None
    assert "valence_cc: undefined" in report.to_text()
