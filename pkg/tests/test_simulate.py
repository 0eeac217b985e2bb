import numpy as np
import pytest
from scipy import stats

from recallsurv.model import MONTH, LogisticRecall, PiecewiseRecall, Weibull, observed_v
from recallsurv.simulate import (
    KNOTS,
    PRESETS,
    Distribution,
    Scenario,
    generate,
    preset,
    subject_uniforms,
)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_generate_valid_data(name):
    data = generate(preset(name, 300, 1))
    data.validate()
    assert len(data) == 300
    assert np.all(np.isin(data.s, np.arange(8, 22)))
    assert np.all((data.m >= 1) & (data.m <= 12))
    assert np.all((data.d >= 0) & (data.d <= MONTH))
    np.testing.assert_array_equal(data.delta, (data.t <= data.s).astype(int))


@pytest.mark.parametrize("name", PRESETS)
def test_recorded_values_follow_from_event_age(name):
    data = generate(preset(name, 500, 2))
    v = observed_v(data.t, data.d, data.m, data.epsilon, data.delta)
    np.testing.assert_array_equal(v, data.v)


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("case_z")


def test_case_a_censoring_fraction():
    data = generate(preset("case_a", 10_000, 3))
    assert np.mean(data.delta == 0) == pytest.approx(0.29, abs=0.02)


@pytest.mark.parametrize("name", ["case_a", "case_b", "case_c"])
def test_truncated_event_ages(name):
    data = generate(preset(name, 10_000, 4))
    assert data.t.min() >= 8.0 and data.t.max() <= 16.0
    assert np.median(data.t) == pytest.approx(11.6, abs=0.05)


def test_weibull_event_age_median():
    data = generate(preset("case_i", 10_000, 5))
    assert np.median(data.t) == pytest.approx(11.6, abs=0.05)


def test_case_iv_exact_recall_near_half_at_five_years():
    data = generate(preset("case_iv", 10_000, 6))
    u = data.s - data.t
    near = (data.delta == 1) & (np.abs(u - 5.0) < 1.0)
    assert np.mean(data.epsilon[near] == 0) == pytest.approx(0.5, abs=0.05)


@pytest.mark.parametrize("name, k, expected", [
    ("case_ii", 1, 0.46), ("case_ii", 2, 0.21), ("case_ii", 3, 0.05),
])
def test_case_ii_category_shares_near_five_years(name, k, expected):
    data = generate(preset(name, 20_000, 7))
    u = data.s - data.t
    near = (data.delta == 1) & (np.abs(u - 5.0) < 0.5)
    assert np.mean(data.epsilon[near] == k) == pytest.approx(expected, abs=0.05)


def test_degenerate_recall_gives_exact_ages():
    b = np.zeros((4, 4))
    b[0] = 1.0
    sc = preset("case_a", 500, 8).with_(recall=PiecewiseRecall(KNOTS, b))
    data = generate(sc)
    ev = data.delta == 1
    assert np.all(data.epsilon[ev] == 0)
    np.testing.assert_array_equal(data.v[ev], data.t[ev])


def test_same_seed_same_data():
    a = generate(preset("case_ii", 200, 11))
    b = generate(preset("case_ii", 200, 11))
    for col in ("s", "delta", "epsilon", "v", "m", "d", "t"):
        np.testing.assert_array_equal(getattr(a, col), getattr(b, col))


def test_different_seed_different_data():
    a = generate(preset("case_ii", 200, 11))
    b = generate(preset("case_ii", 200, 12))
    assert not np.array_equal(a.t, b.t)


def test_longer_sample_extends_shorter():
    short = generate(preset("case_iii", 50, 9))
    long = generate(preset("case_iii", 120, 9))
    for col in ("s", "delta", "epsilon", "v", "m", "d", "t"):
        np.testing.assert_array_equal(getattr(short, col), getattr(long, col)[:50])


def test_subject_uniforms_prefix_and_range():
    u = subject_uniforms(3, 40)
    assert np.all((u >= 0) & (u < 1))
    np.testing.assert_array_equal(u[:10], subject_uniforms(3, 10))


def test_custom_sampling_laws():
    sc = Scenario(200, Weibull(10, 12), LogisticRecall((0, 0, 0, 0, 0, 0)),
                  interview=Distribution("fixed", 15.0), birth_month=Distribution("fixed", 3),
                  birth_offset=Distribution("fixed", 0.0), seed=1)
    data = generate(sc)
    assert np.all(data.s == 15.0) and np.all(data.m == 3) and np.all(data.d == 0.0)


def test_distribution_validation():
    with pytest.raises(ValueError):
        Distribution("normal", 0, 1)
    with pytest.raises(ValueError):
        Distribution("uniform", 2, 1)
    with pytest.raises(ValueError):
        Scenario(0, Weibull(10, 12), LogisticRecall((0,) * 6))


@pytest.mark.parametrize("name, gamma", [("mixture_g02", 0.2), ("mixture_g05", 0.5)])
def test_mixture_share_below_nine(name, gamma):
    data = generate(preset(name, 20_000, 10))
    lognormal = stats.norm.cdf((np.log(9.0) - 2.45) / np.sqrt(0.07))
    weibull = 1 - np.exp(-((9.0 / 12.0) ** 10))
    expected = gamma * lognormal + (1 - gamma) * weibull
    assert np.mean(data.t < 9.0) == pytest.approx(expected, abs=0.01)
