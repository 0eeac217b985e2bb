"""Model checks: chi-square goodness of fit and recall-curve comparisons."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import MONTH, Dataset, EventTimeModel, PiecewiseRecall, RecallModel, weighted_mass
from .nonparametric import CENSORED, recall_types
from .parametric import LikelihoodKind, ParametricFit

log = logging.getLogger(__name__)

S_SPLIT = 14.0
D_SPLIT = 1.0 / 24.0
MIN_EXPECTED = 5.0


class FitNotConverged(ValueError):
    pass


class NonPositiveDf(ValueError):
    pass


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    """One bin: outcome type plus interview-age, offset and V halves.

    ``outcome`` is ``"none"`` (no event yet) or the recall category 0..3;
    ``v_high`` is None where V is not split.
    """

    outcome: object
    s_high: bool
    d_high: bool
    v_high: object = None

    def label(self):
        parts = [f"outcome={self.outcome}", f"S{'>' if self.s_high else '<='}14",
                 f"d{'>' if self.d_high else '<='}1/24"]
        if self.v_high is not None:
            parts.append("V>c" if self.v_high else "V<=c")
        return " ".join(parts)


def initial_cells():
    cells = []
    for outcome in ("none", 0, 1, 2, 3):
        v_opts = (False, True) if outcome in (0, 1, 2) else (None,)
        for s_high in (False, True):
            for d_high in (False, True):
                for v_high in v_opts:
                    cells.append(Cell(outcome, s_high, d_high, v_high))
    return cells


@dataclass
class Bin:
    cells: list
    observed: float
    expected: float

    @property
    def stratum(self):
        return self.cells[0].outcome

    def label(self):
        return " | ".join(c.label() for c in self.cells)


@dataclass
class GofResult:
    bins: list
    statistic: float
    df: int
    p_value: float
    merged_from: int
    v_cut: float

    def to_dict(self):
        return {
            "bins": [{"cells": b.label(), "observed": b.observed, "expected": b.expected}
                     for b in self.bins],
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "merged_from": self.merged_from,
            "v_cut": self.v_cut,
        }


def v_upper_bound(outcome, c, d, m):
    """Largest event age (exclusive) whose reported V stays at or below ``c``."""
    if outcome == 0:
        return np.full(np.shape(d), c)
    if outcome == 1:
        return (math.floor(12.0 * c) + 1.0) * MONTH - d
    return math.floor(c) + 1.0 - d - (np.asarray(m) - 1.0) * MONTH


def _observed_cells(data: Dataset, cells, v_cut):
    types = recall_types(data)
    s_high = data.s > S_SPLIT
    d_high = data.d > D_SPLIT
    v_high = data.v > v_cut
    counts = np.zeros(len(cells))
    index = {c: k for k, c in enumerate(cells)}
    for i in range(len(data)):
        outcome = "none" if types[i] == CENSORED else int(types[i])
        vh = bool(v_high[i]) if outcome in (0, 1, 2) else None
        counts[index[Cell(outcome, bool(s_high[i]), bool(d_high[i]), vh)]] += 1
    return counts


def _expected_cells(data: Dataset, fmodel: EventTimeModel, rmodel: RecallModel, cells, v_cut):
    s, d, m = data.s, data.d, data.m
    zero = np.zeros_like(s)
    total = {k: weighted_mass(fmodel, rmodel.component(k), s, zero, s) for k in range(4)}
    low = {k: weighted_mass(fmodel, rmodel.component(k), s, zero,
                            np.minimum(v_upper_bound(k, v_cut, d, m), s))
           for k in range(3)}
    s_high = s > S_SPLIT
    d_high = d > D_SPLIT
    out = np.zeros(len(cells))
    for j, c in enumerate(cells):
        rows = (s_high == c.s_high) & (d_high == c.d_high)
        if c.outcome == "none":
            p = fmodel.sf(s)
        elif c.v_high is None:
            p = total[c.outcome]
        elif c.v_high:
            p = np.maximum(total[c.outcome] - low[c.outcome], 0.0)
        else:
            p = low[c.outcome]
        out[j] = np.sum(p[rows])
    return out


def merge_bins(bins, min_expected=MIN_EXPECTED):
    """Greedy merge until every bin has expected count >= ``min_expected``.

    The smallest bin is merged into whichever adjacent bin of the same
    outcome stratum has the smaller expected count; only a bin alone in its
    stratum is merged across strata.
    """
    bins = list(bins)
    while len(bins) > 1:
        k = min(range(len(bins)), key=lambda j: (bins[j].expected, j))
        if bins[k].expected >= min_expected:
            break
        nbrs = [j for j in (k - 1, k + 1) if 0 <= j < len(bins)]
        same = [j for j in nbrs if bins[j].stratum == bins[k].stratum]
        j = min(same or nbrs, key=lambda j: (bins[j].expected, j))
        a, b = sorted((j, k))
        bins[a] = Bin(bins[a].cells + bins[b].cells, bins[a].observed + bins[b].observed,
                      bins[a].expected + bins[b].expected)
        del bins[b]
    return bins


def _check_fit(fit: ParametricFit):
    if fit.kind is not LikelihoodKind.PARTIAL:
        raise ValueError("goodness of fit needs a partial-recall fit")
    if not fit.converged:
        raise FitNotConverged("goodness of fit needs a converged fit")


def gof_bins(data: Dataset, fit: ParametricFit, v_cut=None):
    """Observed and expected counts over the 32 initial cells, then merged.

    Returns ``(merged bins, number of initial cells, V threshold)``.
    """
    _check_fit(fit)
    if v_cut is None:
        nz = data.v[(data.delta == 1) & (data.epsilon < 3)]
        v_cut = float(np.median(nz)) if len(nz) else 0.0
    cells = initial_cells()
    obs = _observed_cells(data, cells, v_cut)
    exp = _expected_cells(data, fit.event_model(), fit.recall_model(), cells, v_cut)
    bins = [Bin([c], o, e) for c, o, e in zip(cells, obs, exp)]
    return merge_bins(bins), len(cells), v_cut


def pearson(observed, expected):
    observed = np.asarray(observed, float)
    expected = np.asarray(expected, float)
    return float(np.sum((observed - expected) ** 2 / expected))


def gof_chisq(data: Dataset, fit: ParametricFit, v_cut=None) -> GofResult:
    """Pearson chi-square test of the fitted partial-recall model."""
    bins, n_initial, v_cut = gof_bins(data, fit, v_cut)
    df = len(bins) - 1 - fit.n_free
    if df <= 0:
        raise NonPositiveDf(f"{len(bins)} bins leave no degrees of freedom for "
                            f"{fit.n_free} parameters")
    stat = pearson([b.observed for b in bins], [b.expected for b in bins])
    p = float(stats.chi2.sf(stat, df))
    return GofResult(bins, stat, df, p, n_initial, v_cut)


# ---------------------------------------------------------------------------
# Recall-probability checks
# ---------------------------------------------------------------------------


def segment_masses(data: Dataset, fmodel: EventTimeModel, knots):
    """``F``-mass of each event subject's admissible range inside each segment.

    Exact recalls get an indicator of the segment holding ``s - v``.
    Shape ``(n, L)``; censored rows are zero.
    """
    knots = np.asarray(knots, float)
    lo, hi = data.recall_bounds()
    s = data.s
    types = recall_types(data)
    out = np.zeros((len(data), len(knots)))
    for j in range(len(knots)):
        seg_hi = np.minimum(hi, s - knots[j])
        seg_lo = np.maximum(lo, s - knots[j + 1]) if j + 1 < len(knots) else lo
        out[:, j] = fmodel.mass(np.nan_to_num(seg_lo), np.nan_to_num(seg_hi))
    exact = types == 0
    rec = PiecewiseRecall(knots, np.ones((1, len(knots))))
    seg = rec.segment(np.maximum(s[exact] - data.v[exact], 0.0))
    out[exact] = np.eye(len(knots))[seg]
    out[types == CENSORED] = 0.0
    return out


def conditional_piecewise_recall(data: Dataset, fmodel: EventTimeModel, knots, tol=1e-10,
                                 max_iter=10_000, return_counts=False):
    """Piecewise recall matrix maximizing the likelihood with ``F`` held fixed.

    EM over the unknown elapsed-time segment: each event subject is split
    across segments in proportion to ``b * mass``, then ``b`` is the
    per-segment share of each recall type.  With ``return_counts`` the
    expected number of events per segment is returned as well.
    """
    knots = np.asarray(knots, float)
    L = len(knots)
    types = recall_types(data)
    M = segment_masses(data, fmodel, knots)
    ev = (types >= 0) & (M.sum(axis=1) > 0)
    t_ev, M = types[ev], M[ev]
    b = np.full((4, L), 0.25)
    for _ in range(max_iter):
        w = b[t_ev] * M
        w /= w.sum(axis=1, keepdims=True)
        counts = np.zeros((4, L))
        np.add.at(counts, t_ev, w)
        col = counts.sum(axis=0)
        b_new = np.where(col > 0, counts / np.where(col > 0, col, 1.0), b)
        step = np.max(np.abs(b_new - b))
        b = b_new
        if step < tol:
            break
    return (b, col) if return_counts else b


def coarsen(b, counts, knots, coarse_knots):
    """Count-weighted average of a fine recall matrix over coarser segments.

    Every coarse knot must also be a fine knot.
    """
    knots = np.asarray(knots, float)
    idx = np.searchsorted(np.asarray(coarse_knots, float), knots, side="right") - 1
    out = np.zeros((b.shape[0], len(coarse_knots)))
    tot = np.zeros(len(coarse_knots))
    np.add.at(out.T, idx, (b * counts).T)
    np.add.at(tot, idx, counts)
    return out / np.where(tot > 0, tot, np.nan)


def logistic_segment_average(rmodel: RecallModel, fmodel: EventTimeModel, knots, s_values,
                             u_max=None):
    """Average logistic probabilities over each segment, weighted by the law of ``s - T``.

    ``s_values`` are the interview ages to average over (equal weight).
    """
    knots = np.asarray(knots, float)
    s_values = np.asarray(s_values, float)
    out = np.zeros((4, len(knots)))
    for j in range(len(knots)):
        lo = s_values - (knots[j + 1] if j + 1 < len(knots) else np.inf)
        hi = s_values - knots[j]
        mass = fmodel.mass(np.maximum(lo, 0.0), np.minimum(hi, s_values))
        if mass.sum() <= 0:
            out[:, j] = np.nan
            continue
        for k in range(4):
            num = weighted_mass(fmodel, rmodel.component(k), s_values, lo, hi)
            out[k, j] = num.sum() / mass.sum()
    return out


AGE_EDGES = (9.5, 12.5, 15.5, 18.5, 21.5)


def cumulative_recall_curves(data: Dataset, edges=AGE_EDGES):
    """Observed ``P(epsilon <= k | event)`` per interview-age group.

    Returns rows ``(lo, hi, mid, n_events, c0, c1, c2, c3)``; groups with
    no events are left out.
    """
    rows = []
    ev = data.delta == 1
    for lo, hi in zip(edges[:-1], edges[1:]):
        k = ev & (data.s >= lo) & (data.s < hi)
        if not k.any():
            log.info("no events with interview age in [%g, %g)", lo, hi)
            continue
        counts = np.bincount(data.epsilon[k], minlength=4)[:4]
        rows.append((lo, hi, 0.5 * (lo + hi), int(k.sum()), *np.cumsum(counts) / k.sum()))
    return rows


def model_recall_curves(fmodel: EventTimeModel, rmodel: RecallModel, ages):
    """Model ``P(epsilon <= k | T <= s)`` at each interview age, shape ``(len(ages), 4)``."""
    ages = np.asarray(ages, float)
    zero = np.zeros_like(ages)
    probs = np.stack([weighted_mass(fmodel, rmodel.component(k), ages, zero, ages)
                      for k in range(4)], -1)
    return np.cumsum(probs, axis=-1) / fmodel.cdf(ages)[:, None]
