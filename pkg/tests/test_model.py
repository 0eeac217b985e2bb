import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from helpers import dataset, random_event_model, random_recall_model, total_outcome_mass
from oracles import (
    MONTH,
    branch_integral,
    logistic_probs,
    month_bounds,
    subject_density,
    weibull_pdf,
    year_bounds,
)
from recallsurv.model import (
    Dataset,
    DomainError,
    LogisticRecall,
    Mixture,
    PiecewiseRecall,
    SubjectRecord,
    TruncatedWeibull,
    Weibull,
    conditional_densities,
    event_probabilities,
    month_interval,
    observed_v,
    outcome_density,
    recall_probs,
    year_interval,
)
from recallsurv.simulate import ETA, ETA_LISTED, KNOTS, LOGNORMAL, THETA

ages = st.floats(0.01, 60.0, allow_nan=False)
offsets = st.floats(0.0, MONTH, allow_nan=False)
months = st.integers(1, 12)


# ---------------------------------------------------------------------------
# Calendar intervals
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("t, d, lo, hi", [
    (11.5, 0.0, 11.5, 11.5 + MONTH),
    (11.5, 0.03, 11.47, 11.47 + MONTH),
])
def test_month_interval_examples(t, d, lo, hi):
    iv = month_interval(t, d)
    assert iv.lo == pytest.approx(lo, abs=1e-12)
    assert iv.hi == pytest.approx(hi, abs=1e-12)


@pytest.mark.parametrize("t, d, m, lo, hi", [
    (11.5, 0.03, 6, 10.5 + 0.16 / 3, 11.5 + 0.16 / 3),
    (11.5, 0.0, 1, 11.0, 12.0),
])
def test_year_interval_examples(t, d, m, lo, hi):
    iv = year_interval(t, d, m)
    assert iv.lo == pytest.approx(lo, abs=1e-12)
    assert iv.hi == pytest.approx(hi, abs=1e-12)


@given(ages, offsets)
def test_month_interval_contains_age(t, d):
    iv = month_interval(t, d)
    assert iv.hi - iv.lo == pytest.approx(MONTH, abs=1e-12)
    assert iv.lo - 1e-9 <= t <= iv.hi + 1e-9
    assert (iv.lo, iv.hi) == pytest.approx(month_bounds(t, d), abs=1e-12)


@given(ages, offsets, months)
def test_year_interval_contains_age(t, d, m):
    iv = year_interval(t, d, m)
    assert iv.hi - iv.lo == pytest.approx(1.0, abs=1e-12)
    assert iv.lo - 1e-9 <= t <= iv.hi + 1e-9
    assert (iv.lo, iv.hi) == pytest.approx(year_bounds(t, d, m), abs=1e-12)


@pytest.mark.parametrize("bad", [dict(t=0.0, d=0.0), dict(t=5.0, d=-0.01), dict(t=5.0, d=0.1)])
def test_month_interval_rejects_out_of_domain(bad):
    with pytest.raises(DomainError):
        month_interval(**bad)


def test_year_interval_rejects_bad_month():
    with pytest.raises(DomainError):
        year_interval(5.0, 0.0, 13)


@pytest.mark.parametrize("eps, expected", [(2, 11.0), (3, 0.0), (1, 11.5), (0, 11.5)])
def test_observed_v_examples(eps, expected):
    assert observed_v(11.5, 0.03, 6, eps, 1) == pytest.approx(expected, abs=1e-12)


def test_observed_v_censored_is_zero():
    assert observed_v(15.0, 0.03, 6, 0, 0) == 0.0


@given(ages, offsets, months, st.integers(1, 2))
def test_recall_interval_of_observed_v_contains_age(t, d, m, eps):
    v = float(observed_v(t, d, m, eps, 1))
    rec = SubjectRecord(s=t + 1.0, delta=1, epsilon=eps, v=v, m=m, d=d)
    assert t in rec.recall_interval()


@pytest.mark.parametrize("row", [
    (0.0, 0, 0, 0.0, 1, 0.0),        # nonpositive s
    (10.0, 2, 0, 0.0, 1, 0.0),       # bad delta
    (10.0, 1, 4, 0.0, 1, 0.0),       # bad epsilon
    (10.0, 1, 1, 9.05, 1, 0.0),      # month value off the 1/12 grid
    (10.0, 1, 2, 9.5, 1, 0.0),       # year value not an integer
    (10.0, 1, 0, 10.5, 1, 0.0),      # exact recall after the interview
    (10.0, 0, 0, 3.0, 1, 0.0),       # censored with nonzero v
    (10.0, 1, 0, 9.0, 0, 0.0),       # birth month out of range
])
def test_record_invariants(row):
    with pytest.raises(DomainError):
        SubjectRecord(*row)


# ---------------------------------------------------------------------------
# Event-time laws
# ---------------------------------------------------------------------------

EVENT_MODELS = [
    Weibull(*THETA),
    Weibull(2.0, 5.0),
    TruncatedWeibull(*THETA, 8.0, 16.0),
    Mixture(0.5, *LOGNORMAL, *THETA),
    Mixture(0.2, *LOGNORMAL, *THETA),
]


@pytest.mark.parametrize("model", EVENT_MODELS, ids=lambda m: type(m).__name__)
def test_density_integrates_to_one(model):
    total, _ = integrate.quad(lambda t: float(model.pdf(t)), 0, 80, points=[8, 12, 16],
                              limit=400, epsabs=1e-13)
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("model", EVENT_MODELS, ids=lambda m: type(m).__name__)
def test_cdf_is_integral_of_density(model):
    for t in (9.0, 11.6, 14.0):
        val, _ = integrate.quad(lambda u: float(model.pdf(u)), 0, t, points=[8], limit=400)
        assert float(model.cdf(t)) == pytest.approx(val, abs=1e-9)


@pytest.mark.parametrize("model", EVENT_MODELS, ids=lambda m: type(m).__name__)
def test_cdf_monotone_and_quantiles_invert(model):
    t = np.linspace(0, 100, 2001)
    F = model.cdf(t)
    assert np.all(np.diff(F) >= -1e-15)
    assert F[-1] == pytest.approx(1.0, abs=1e-12)
    p = np.array([0.01, 0.25, 0.5, 0.75, 0.99])
    np.testing.assert_allclose(model.cdf(model.ppf(p)), p, atol=1e-10)
    np.testing.assert_allclose(model.sf(model.isf(p)), p, atol=1e-10)


def test_truncated_weibull_median_matches_quoted_value():
    assert TruncatedWeibull(*THETA, 8.0, 16.0).median() == pytest.approx(11.6, abs=0.05)


def test_mixture_lognormal_median_is_preserved():
    # both components have median near 11.6, so any mixture does too
    for g in (0.2, 0.5):
        assert Mixture(g, *LOGNORMAL, *THETA).median() == pytest.approx(11.6, abs=0.05)


# ---------------------------------------------------------------------------
# Recall probabilities
# ---------------------------------------------------------------------------


def test_logistic_case_i_is_uniform_at_five_years():
    np.testing.assert_allclose(recall_probs(LogisticRecall(ETA["case_i"]), 5.0), 0.25,
                               atol=1e-12)


def test_logistic_listed_case_ii_probabilities():
    # exact, month, year, none as quoted for the second scenario
    probs = recall_probs(LogisticRecall(ETA["case_ii"]), 5.0)
    np.testing.assert_allclose(probs, [0.28, 0.46, 0.21, 0.05], atol=0.005)


@pytest.mark.parametrize("name, expected", [
    ("case_iii", [0.232, 0.155, 0.232, 0.382]),
    ("case_iv", [0.497, 0.100, 0.100, 0.302]),
])
def test_logistic_preset_probabilities(name, expected):
    np.testing.assert_allclose(recall_probs(LogisticRecall(ETA[name]), 5.0), expected,
                               atol=0.001)


def test_logistic_case_iv_exact_recall_half_at_five_years():
    assert recall_probs(LogisticRecall(ETA["case_iv"]), 5.0)[0] == pytest.approx(0.5, abs=0.005)


def test_logistic_literal_vector_follows_reference_formula():
    eta = ETA_LISTED["case_ii"]
    np.testing.assert_allclose(recall_probs(LogisticRecall(eta), 5.0),
                               logistic_probs(eta, 5.0), rtol=1e-12)
    np.testing.assert_allclose(logistic_probs(eta, 5.0), [0.281, 0.049, 0.463, 0.208],
                               atol=0.001)


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(0, 30))
def test_logistic_matches_reference(eta, u):
    probs = recall_probs(LogisticRecall(tuple(eta)), u)
    np.testing.assert_allclose(probs, logistic_probs(eta, u), rtol=1e-10, atol=1e-300)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_piecewise_degenerate_always_exact():
    b = np.zeros((4, 4))
    b[0] = 1.0
    np.testing.assert_array_equal(recall_probs(PiecewiseRecall(KNOTS, b), 1.0), [1, 0, 0, 0])


@pytest.mark.parametrize("u, seg", [(0.0, 0), (2.9, 0), (3.0, 0), (3.01, 1), (6.0, 1),
                                    (8.99, 2), (9.0, 2), (9.5, 3), (40.0, 3)])
def test_piecewise_segments_are_left_open(u, seg):
    assert PiecewiseRecall(KNOTS, np.full((4, 4), 0.25)).segment(u) == seg


def test_recall_probs_rejects_negative_elapsed_time():
    with pytest.raises(DomainError):
        recall_probs(LogisticRecall(ETA["case_i"]), -0.1)


@pytest.mark.parametrize("b", [np.full((4, 3), 0.25), np.full((4, 4), 0.3)])
def test_piecewise_rejects_bad_matrix(b):
    with pytest.raises(ValueError):
        PiecewiseRecall(KNOTS, b)


# ---------------------------------------------------------------------------
# Outcome densities
# ---------------------------------------------------------------------------

W = Weibull(*THETA)
CASE_I = LogisticRecall(ETA["case_i"])


def test_censored_density_is_survival():
    rec = SubjectRecord(s=12.0, delta=0, epsilon=0, v=0.0, m=1, d=0.0)
    assert outcome_density(rec, W, CASE_I) == pytest.approx(math.exp(-1), rel=1e-12)


def test_no_recall_with_certain_forgetting_is_cdf():
    b = np.zeros((4, 4))
    b[3] = 1.0
    rec = SubjectRecord(s=12.0, delta=1, epsilon=3, v=0.0, m=1, d=0.0)
    val = outcome_density(rec, W, PiecewiseRecall(KNOTS, b))
    assert val == pytest.approx(1 - math.exp(-1), rel=1e-10)


def test_exact_recall_density_is_product():
    rec = SubjectRecord(s=14.0, delta=1, epsilon=0, v=11.5, m=3, d=0.02)
    expected = weibull_pdf(11.5, *THETA) * logistic_probs(ETA["case_i"], 2.5)[0]
    assert outcome_density(rec, W, CASE_I) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("name", ["case_i", "case_ii", "case_iii", "case_iv"])
@pytest.mark.parametrize("row", [
    (14.0, 1, 1, 11.5, 6, 0.03),
    (14.0, 1, 1, 13.75, 6, 0.03),     # month cut by the interview
    (14.0, 1, 2, 11.0, 6, 0.03),
    (12.2, 1, 2, 12.0, 4, 0.01),      # year cut by the interview
    (14.0, 1, 3, 0.0, 6, 0.03),
    (9.0, 1, 3, 0.0, 1, 0.0),
])
def test_interval_densities_match_adaptive_quadrature(name, row):
    eta = ETA[name]
    got = conditional_densities(dataset([row]), W, LogisticRecall(eta))[0]
    want = subject_density(row, *THETA, lambda k, u: logistic_probs(eta, u)[k])
    assert got == pytest.approx(want, rel=1e-7, abs=1e-14)


@pytest.mark.parametrize("row", [(14.0, 1, 1, 11.5, 6, 0.03), (14.0, 1, 2, 11.0, 6, 0.03),
                                 (15.0, 1, 3, 0.0, 2, 0.05)])
def test_piecewise_densities_match_adaptive_quadrature(row):
    b = np.array([[0.15, 0.10, 0.08, 0.05], [0.28, 0.2, 0.15, 0.1], [0.22, 0.25, 0.17, 0.1],
                  [0.35, 0.45, 0.6, 0.75]])
    got = conditional_densities(dataset([row]), W, PiecewiseRecall(KNOTS, b))[0]
    s = row[0]
    pdf = lambda u: weibull_pdf(u, *THETA)  # noqa: E731
    k = row[2]
    lo, hi = {1: (row[3] - row[5], row[3] - row[5] + MONTH),
              2: (row[3] - row[5] - (row[4] - 1) / 12, row[3] - row[5] - (row[4] - 1) / 12 + 1),
              3: (0.0, s)}[k]
    want = 0.0
    # split at knots so quad sees a smooth integrand on every piece
    cuts = sorted({lo, hi, *[s - x for x in KNOTS if lo < s - x < hi]})
    for a, c in zip(cuts[:-1], cuts[1:]):
        want += branch_integral(pdf, lambda u: b[k][0 if u <= 3 else 1 if u <= 6 else
                                                  2 if u <= 9 else 3], s, a, c)
    assert got == pytest.approx(want, rel=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_outcome_law_normalizes(seed):
    rng = np.random.default_rng(seed)
    s = float(rng.integers(8, 22))
    m = int(rng.integers(1, 13))
    d = float(rng.uniform(0, MONTH))
    total = total_outcome_mass(s, m, d, random_event_model(rng), random_recall_model(rng))
    assert total == pytest.approx(1.0, abs=1e-5)


def test_event_probabilities_sum_to_cdf():
    s = np.array([8.0, 12.0, 20.0])
    for name in ETA:
        p = event_probabilities(W, LogisticRecall(ETA[name]), s)
        np.testing.assert_allclose(p.sum(axis=-1), W.cdf(s), atol=1e-10)


def test_partial_density_nests_binary_density():
    a, b = -0.3, 0.12
    big = -1e3
    eta = (big, big, a, 0.0, 0.0, b)
    rows = [(14.0, 1, 3, 0.0, 6, 0.03), (17.0, 1, 3, 0.0, 2, 0.0), (13.0, 1, 0, 11.2, 1, 0.01)]
    got = conditional_densities(dataset(rows), W, LogisticRecall(eta))
    pdf = lambda u: weibull_pdf(u, *THETA)  # noqa: E731
    want = [branch_integral(pdf, lambda u: special.expit(a + b * u), r[0], 0, r[0])
            for r in rows[:2]]
    want.append(pdf(11.2) * special.expit(-(a + b * 1.8)))
    np.testing.assert_allclose(got, want, rtol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_densities_nonnegative_and_bounded(seed):
    from helpers import random_scenario_rows

    rng = np.random.default_rng(seed)
    rows = random_scenario_rows(rng, 20)
    dens = conditional_densities(dataset(rows), W, random_recall_model(rng))
    assert np.all(dens >= 0)
    assert np.all(np.isfinite(dens))


def test_dataset_subset_and_records_round_trip():
    rows = [(14.0, 1, 1, 11.5, 6, 0.03), (10.0, 0, 0, 0.0, 2, 0.01)]
    data = dataset(rows)
    again = Dataset.from_records(data.records())
    np.testing.assert_array_equal(again.v, data.v)
    assert len(data.subset([1])) == 1
    assert data.subset([1]).s[0] == 10.0
