"""Approximate nonparametric MLE (AMLE) of the event-time distribution.

Probability mass is restricted to the distinct exactly recalled ages.  The
likelihood is then ``prod_i sum_j alpha_ij q_j``, where ``alpha_ij`` depends
on the piecewise-constant recall probabilities ``b``.  We alternate
self-consistency sweeps in ``q`` with an EM update of ``b``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, PiecewiseRecall

log = logging.getLogger(__name__)

CENSORED = -1


class NoExactRecalls(ValueError):
    pass


class AllZeroRow(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NpSupport:
    """Distinct exactly recalled ages and the subjects recalling each."""

    points: np.ndarray
    sources: tuple

    @property
    def counts(self):
        return np.array([len(s) for s in self.sources])

    def __len__(self):
        return len(self.points)


def build_support(data: Dataset) -> NpSupport:
    exact = np.flatnonzero((data.delta == 1) & (data.epsilon == 0))
    if len(exact) == 0:
        raise NoExactRecalls("no subject recalled the exact event date")
    points, inverse = np.unique(data.v[exact], return_inverse=True)
    sources = tuple(exact[inverse == j] for j in range(len(points)))
    return NpSupport(points, sources)


class StepFunction:
    """Right-continuous distribution function with jumps ``masses`` at ``points``."""

    def __init__(self, points, masses):
        self.points = np.asarray(points, float)
        self.masses = np.asarray(masses, float)
        self._cum = np.cumsum(self.masses)

    def __call__(self, t):
        idx = np.searchsorted(self.points, np.asarray(t, float), side="right")
        return np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)

    def table(self):
        return np.column_stack([self.points, self._cum])


def edf(ages) -> StepFunction:
    """Empirical distribution function of fully observed event ages."""
    ages = np.asarray(ages, float)
    if ages.size == 0:
        raise ValueError("edf needs at least one age")
    points, counts = np.unique(ages, return_counts=True)
    return StepFunction(points, counts / ages.size)


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------


def recall_types(data: Dataset, binary=False):
    """Row type: -1 censored, else the recall category (0/1 in binary mode)."""
    types = np.where(data.delta == 1, data.epsilon, CENSORED)
    if binary:
        types = np.where(types > 0, 1, types)
    return types


def elapsed_windows(s, knots, t_min):
    """``W_l(s) = max(s - x_l, t_min)`` for each knot, shape ``(n, L)``."""
    return np.maximum(np.asarray(s, float)[:, None] - np.asarray(knots, float), t_min)


@dataclass(eq=False)
class AlphaMatrix:
    """Coefficients ``alpha_ij`` of the restricted-support likelihood.

    ``mask`` and ``segment`` fix which support points a subject can reach
    and in which elapsed-time segment each lies; only ``values`` depend on
    ``b``.
    """

    values: np.ndarray
    mask: np.ndarray
    segment: np.ndarray
    types: np.ndarray
    windows: np.ndarray

    @property
    def included(self):
        return self.mask.any(axis=1)

    def with_b(self, b) -> "AlphaMatrix":
        b = np.asarray(b, float)
        vals = np.where(self.types[:, None] == CENSORED, 1.0,
                        b[np.maximum(self.types, 0)[:, None], self.segment])
        return AlphaMatrix(vals * self.mask, self.mask, self.segment, self.types, self.windows)


def alpha_matrix(data: Dataset, support: NpSupport, knots, b, binary=False,
                 t_min=None) -> AlphaMatrix:
    """Coefficients for every subject and support point under recall matrix ``b``."""
    knots = np.asarray(knots, float)
    t = support.points
    s = data.s[:, None]
    types = recall_types(data, binary)
    lo, hi = data.recall_bounds()
    mask = np.zeros((len(data), len(t)), bool)
    cens = types == CENSORED
    mask[cens] = t > s[cens]
    exact = (data.delta == 1) & (data.epsilon == 0)
    mask[exact] = t == data.v[exact, None]
    if binary:
        other = types == 1
        mask[other] = t <= s[other]
    else:
        for cat in (1, 2):
            k = types == cat
            mask[k] = (t >= lo[k, None]) & (t <= hi[k, None])
        k = types == 3
        mask[k] = t <= s[k]
    rec = PiecewiseRecall(knots, np.full((1, len(knots)), 1.0))
    segment = rec.segment(np.maximum(s - t, 0.0))
    if t_min is None:
        t_min = min(t.min(), np.nanmin(lo)) if np.any(~np.isnan(lo)) else t.min()
    windows = elapsed_windows(data.s, knots, t_min)
    base = AlphaMatrix(np.zeros(mask.shape), mask, segment, types, windows)
    return base.with_b(b)


# ---------------------------------------------------------------------------
# Updates
# ---------------------------------------------------------------------------


def _values(alpha):
    return alpha.values if isinstance(alpha, AlphaMatrix) else np.asarray(alpha, float)


def posterior(q, alpha):
    """``mu_ij``: probability that subject ``i``'s event sits at point ``j``."""
    a = _values(alpha) * q
    tot = a.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, a / tot, 0.0), tot[:, 0]


def self_consistency_step(q, alpha):
    """One sweep ``q_j <- mean_i mu_ij(q)`` over rows with a positive denominator."""
    q = np.asarray(q, float)
    mu, tot = posterior(q, alpha)
    live = tot > 0
    if not live.all() and np.all(q > 0):
        raise AllZeroRow(f"{np.sum(~live)} subject(s) have no admissible support point")
    return mu[live].sum(axis=0) / live.sum()


def amle_loglik(q, alpha):
    tot = _values(alpha) @ q
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(tot)))


def m_step_recall(data: Dataset, support: NpSupport, q, knots, b=None, binary=False,
                  alpha: AlphaMatrix = None):
    """EM update of the piecewise recall matrix for fixed masses ``q``.

    Each event subject spreads one unit of count over elapsed-time segments
    in proportion to its posterior over support points; ``b`` is then the
    per-segment share of each recall type.  Columns without counts keep
    their previous value.
    """
    knots = np.asarray(knots, float)
    n_types = 2 if binary else 4
    if b is None:
        b = np.full((n_types, len(knots)), 1.0 / n_types)
    b = np.asarray(b, float)
    if alpha is None:
        alpha = alpha_matrix(data, support, knots, b, binary)
    mu, tot = posterior(np.asarray(q, float), alpha)
    counts = np.zeros((n_types, len(knots)))
    for typ in range(n_types):
        rows = (alpha.types == typ) & (tot > 0)
        if rows.any():
            np.add.at(counts[typ], alpha.segment[rows].ravel(), mu[rows].ravel())
    col = counts.sum(axis=0)
    with np.errstate(invalid="ignore"):
        return np.where(col > 0, counts / col, b)


# ---------------------------------------------------------------------------
# Fit
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class NpFit:
    support: NpSupport
    masses: np.ndarray
    recall_b: np.ndarray
    knots: np.ndarray
    loglik_trace: list
    converged: bool
    binary: bool = False
    dropped: int = 0
    iterations: int = 0
    inner_iterations: list = field(default_factory=list)

    @property
    def loglik(self):
        return self.loglik_trace[-1]

    @property
    def cdf(self) -> StepFunction:
        return StepFunction(self.support.points, self.masses)

    def to_dict(self):
        return {
            "kind": "binary" if self.binary else "partial",
            "knots": self.knots.tolist(),
            "support": self.support.points.tolist(),
            "masses": self.masses.tolist(),
            "b": self.recall_b.tolist(),
            "loglik_trace": list(self.loglik_trace),
            "converged": self.converged,
            "dropped": self.dropped,
            "iterations": self.iterations,
        }


def fit_amle(data: Dataset, knots, *, binary=False, b_init=None, inner_tol=1e-8,
             outer_tol=1e-8, max_outer=5000, max_inner=100_000) -> NpFit:
    """Alternate self-consistency in the masses with EM updates of ``b``.

    ``binary=True`` gives the two-type (exact versus anything else) variant.
    Subjects that cannot reach any support point are dropped and counted.
    """
    knots = np.asarray(knots, float)
    support = build_support(data)
    n_types = 2 if binary else 4
    b = np.full((n_types, len(knots)), 1.0 / n_types) if b_init is None else np.array(b_init, float)
    alpha = alpha_matrix(data, support, knots, b, binary)
    keep = alpha.included
    dropped = int(np.sum(~keep))
    if dropped:
        log.warning("dropping %d subject(s) with no admissible support point", dropped)
        alpha = AlphaMatrix(alpha.values[keep], alpha.mask[keep], alpha.segment[keep],
                            alpha.types[keep], alpha.windows[keep])
    q = np.full(len(support), 1.0 / len(support))
    trace, inner_counts = [], []
    converged = False
    outer = 0
    for outer in range(1, max_outer + 1):
        for inner in range(1, max_inner + 1):
            q_new = self_consistency_step(q, alpha)
            step = np.max(np.abs(q_new - q))
            q = q_new
            if step < inner_tol:
                break
        inner_counts.append(inner)
        trace.append(amle_loglik(q, alpha))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < outer_tol:
            converged = True
            break
        b = m_step_recall(data, support, q, knots, b, binary, alpha=alpha)
        alpha = alpha.with_b(b)
    if not converged:
        log.warning("AMLE stopped after %d outer iterations without converging", outer)
    return NpFit(support, q, b, knots, trace, converged, binary, dropped, outer, inner_counts)


def fit_binary_amle(data: Dataset, knots, **opts) -> NpFit:
    """AMLE treating month, year and no recall alike as 'not exact'."""
    return fit_amle(data, knots, binary=True, **opts)
