"""Shared builders for test datasets."""

import math

import numpy as np
from scipy import integrate

from recallsurv import nonparametric as npm
from recallsurv.model import (
    MONTH,
    Dataset,
    LogisticRecall,
    Mixture,
    PiecewiseRecall,
    TruncatedWeibull,
    Weibull,
    conditional_densities,
)
from recallsurv.simulate import KNOTS, LOGNORMAL, generate, preset

TINY_KNOTS = (0.0, 3.0)
TINY_B = np.array([[0.4, 0.3], [0.2, 0.2], [0.2, 0.2], [0.2, 0.3]])


def dataset(rows, t=None):
    """Dataset from ``(s, delta, epsilon, v, m, d)`` tuples."""
    cols = list(zip(*rows))
    return Dataset(s=cols[0], delta=cols[1], epsilon=cols[2], v=cols[3], m=cols[4], d=cols[5],
                   t=t)


def total_outcome_mass(s, m, d, fmodel, rmodel):
    """Sum of the conditional outcome law over every observable ``(v, eps, delta)``.

    Month and year values are enumerated; the exact-recall density is
    integrated over ``v`` in ``(0, s]``.
    """
    rows = [(s, 0, 0, 0.0, m, d), (s, 1, 3, 0.0, m, d)]
    top_month = math.floor(12 * (s + d))
    rows += [(s, 1, 1, k / 12, m, d) for k in range(0, top_month + 1)]
    top_year = math.floor(s + d + (m - 1) / 12)
    rows += [(s, 1, 2, float(k), m, d) for k in range(0, top_year + 1)]
    discrete = conditional_densities(dataset(rows), fmodel, rmodel).sum()

    def exact(v):
        return float(conditional_densities(dataset([(s, 1, 0, v, m, d)]), fmodel, rmodel)[0])

    med = float(fmodel.median())
    pts = [p for p in (med, s - 3, s - 6, s - 9) if 0 < p < s]
    cont, _ = integrate.quad(exact, 1e-9, s, points=pts or None, limit=400,
                             epsabs=1e-12, epsrel=1e-10)
    return discrete + cont


def random_scenario_rows(rng, n, s_range=(8, 21)):
    """Random valid records (no event ages) for invariance checks."""
    rows = []
    for _ in range(n):
        s = float(rng.integers(s_range[0], s_range[1] + 1))
        m = int(rng.integers(1, 13))
        d = float(rng.uniform(0, MONTH))
        delta = int(rng.random() < 0.7)
        if not delta:
            rows.append((s, 0, 0, 0.0, m, d))
            continue
        t = float(rng.uniform(s - 8, s - 0.01))
        eps = int(rng.integers(0, 4))
        if eps == 0:
            v = t
        elif eps == 1:
            v = math.floor(12 * (d + t)) / 12
        elif eps == 2:
            v = float(math.floor(t + d + (m - 1) / 12))
        else:
            v = 0.0
        rows.append((s, 1, eps, v, m, d))
    return rows


def as_array(x):
    return np.asarray(x, float)


def random_recall_model(rng):
    if rng.random() < 0.5:
        return LogisticRecall(tuple(rng.uniform(-2, 2, 3)) + tuple(rng.uniform(-0.4, 0.4, 3)))
    b = rng.dirichlet(np.ones(4), size=4).T
    return PiecewiseRecall(KNOTS, b)


def random_event_model(rng):
    kind = rng.integers(3)
    if kind == 0:
        return Weibull(rng.uniform(3, 12), rng.uniform(9, 14))
    if kind == 1:
        return TruncatedWeibull(rng.uniform(5, 12), rng.uniform(10, 13), 8.0, 16.0)
    return Mixture(rng.uniform(0, 1), *LOGNORMAL, rng.uniform(5, 12), rng.uniform(10, 13))


def exact_only(data):
    """Same subjects with every event recalled exactly at its true age."""
    ev = data.delta == 1
    return Dataset(s=data.s, delta=data.delta, epsilon=np.zeros(len(data), int),
                   v=np.where(ev, data.t, 0.0), m=data.m, d=data.d, t=data.t)


def tiny_instances(count, n=5, start=0):
    """Small simulated datasets on which every subject reaches a support point."""
    out, seed = [], start
    while len(out) < count:
        seed += 1
        sc = preset("case_a", n, seed).with_(recall=PiecewiseRecall(TINY_KNOTS, TINY_B))
        data = generate(sc)
        try:
            sup = npm.build_support(data)
        except npm.NoExactRecalls:
            continue
        if npm.alpha_matrix(data, sup, TINY_KNOTS, np.full((4, 2), 0.25)).included.all():
            out.append((seed, data))
    return out
