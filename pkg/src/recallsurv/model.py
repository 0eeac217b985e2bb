"""Observation model for partially recalled event dates.

Subjects are interviewed at age ``s``.  If the event happened by then
(``delta = 1``) the respondent recalls its date exactly (``epsilon = 0``), up
to the calendar month (1), up to the calendar year (2), or not at all (3).
Calendar arithmetic uses a year of length 1 and a month of length 1/12.

The event-time laws and recall-probability families live here, together
with the conditional density of one subject's outcome given
``(s, m, d)``, which is the building block of every likelihood in the
package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from scipy import special

MONTH = 1.0 / 12.0
N_NODES = 64

_x, _w = np.polynomial.legendre.leggauss(N_NODES)
_x = 0.5 * (_x + 1.0)
# cubic grading clusters nodes at both ends of the probability range,
# where the quantile function has its log/power singularities
GL_NODES = _x * _x * (3.0 - 2.0 * _x)
GL_WEIGHTS = 0.5 * _w * 6.0 * _x * (1.0 - _x)
del _x, _w

_TOL = 1e-9


class DomainError(ValueError):
    """Input outside the domain of a calendar or model operation."""


# ---------------------------------------------------------------------------
# Subjects and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubjectRecord:
    """One respondent's observable vector ``(s, v, epsilon, delta, m, d)``.

    ``t`` is the true event age; it exists only for simulated data and is
    never read by an estimator.
    """

    s: float
    delta: int
    epsilon: int
    v: float
    m: int
    d: float
    t: Optional[float] = None

    def __post_init__(self):
        check_record(self.s, self.delta, self.epsilon, self.v, self.m, self.d)

    def recall_interval(self) -> Optional["RecallInterval"]:
        """Calendar interval implied by a month or year recall, else None."""
        if self.delta != 1 or self.epsilon not in (1, 2):
            return None
        if self.epsilon == 1:
            lo = self.v - self.d
            return RecallInterval(lo, lo + MONTH, "month")
        lo = self.v - self.d - (self.m - 1) / 12.0
        return RecallInterval(lo, lo + 1.0, "year")


def check_record(s, delta, epsilon, v, m, d):
    if not s > 0:
        raise DomainError(f"interview age must be positive, got {s}")
    if delta not in (0, 1):
        raise DomainError(f"delta must be 0 or 1, got {delta}")
    if epsilon not in (0, 1, 2, 3):
        raise DomainError(f"epsilon must be in 0..3, got {epsilon}")
    if m not in range(1, 13):
        raise DomainError(f"birth month must be in 1..12, got {m}")
    if not -_TOL <= d <= MONTH + _TOL:
        raise DomainError(f"birth offset must lie in [0, 1/12], got {d}")
    if delta == 0 or epsilon == 3:
        if v != 0:
            raise DomainError("v must be 0 for censored or unrecalled subjects")
    elif epsilon == 0:
        if not 0 < v <= s:
            raise DomainError(f"exact recall needs 0 < v <= s, got v={v}, s={s}")
    elif epsilon == 1:
        if abs(12 * v - round(12 * v)) > 12 * _TOL:
            raise DomainError(f"month recall needs v on a 1/12 grid, got {v}")
    elif abs(v - round(v)) > _TOL or v < 0:
        raise DomainError(f"year recall needs a nonnegative integer v, got {v}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column store of subject records; the unit estimators work on."""

    s: np.ndarray
    delta: np.ndarray
    epsilon: np.ndarray
    v: np.ndarray
    m: np.ndarray
    d: np.ndarray
    t: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        cols = {
            "s": np.asarray(self.s, dtype=float),
            "delta": np.asarray(self.delta, dtype=int),
            "epsilon": np.array(self.epsilon, dtype=int),
            "v": np.asarray(self.v, dtype=float),
            "m": np.asarray(self.m, dtype=int),
            "d": np.asarray(self.d, dtype=float),
        }
        n = len(cols["s"])
        for name, col in cols.items():
            if col.shape != (n,):
                raise ValueError(f"column {name!r} has shape {col.shape}, expected ({n},)")
            object.__setattr__(self, name, col)
        # epsilon carries no information for censored rows
        cols["epsilon"][cols["delta"] == 0] = 0
        if self.t is not None:
            object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        ids = np.arange(1, n + 1) if self.ids is None else np.asarray(self.ids)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.s)

    def __iter__(self) -> Iterator[SubjectRecord]:
        return iter(self.records())

    def records(self) -> list[SubjectRecord]:
        t = self.t if self.t is not None else [None] * len(self)
        return [
            SubjectRecord(float(s), int(dl), int(e), float(v), int(m), float(d),
                          None if ti is None else float(ti))
            for s, dl, e, v, m, d, ti in zip(
                self.s, self.delta, self.epsilon, self.v, self.m, self.d, t)
        ]

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord]) -> "Dataset":
        has_t = all(r.t is not None for r in records) and len(records) > 0
        return cls(
            s=[r.s for r in records],
            delta=[r.delta for r in records],
            epsilon=[r.epsilon for r in records],
            v=[r.v for r in records],
            m=[r.m for r in records],
            d=[r.d for r in records],
            t=[r.t for r in records] if has_t else None,
        )

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            s=self.s[index], delta=self.delta[index], epsilon=self.epsilon[index],
            v=self.v[index], m=self.m[index], d=self.d[index],
            t=None if self.t is None else self.t[index], ids=self.ids[index],
        )

    def validate(self):
        """Raise DomainError if any row breaks the record invariants."""
        self.records()
        return self

    def recall_bounds(self):
        """Lower/upper ends of each subject's admissible event-age range.

        Exact recalls give ``(v, v)``; month and year recalls the calendar
        interval capped at ``s``; no-recall ``(0, s)``; censored rows NaN.
        """
        lo = np.full(len(self), np.nan)
        hi = np.full(len(self), np.nan)
        ev = self.delta == 1
        e = self.epsilon
        k = ev & (e == 0)
        lo[k] = hi[k] = self.v[k]
        k = ev & (e == 1)
        lo[k] = self.v[k] - self.d[k]
        hi[k] = np.minimum(self.s[k], lo[k] + MONTH)
        k = ev & (e == 2)
        lo[k] = self.v[k] - self.d[k] - (self.m[k] - 1) / 12.0
        hi[k] = np.minimum(self.s[k], lo[k] + 1.0)
        k = ev & (e == 3)
        lo[k] = 0.0
        hi[k] = self.s[k]
        return lo, hi


# ---------------------------------------------------------------------------
# Calendar arithmetic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecallInterval:
    lo: float
    hi: float
    kind: str

    def __contains__(self, t):
        return self.lo - _TOL <= t <= self.hi + _TOL


def _check_td(t, d):
    if not t > 0:
        raise DomainError(f"event age must be positive, got {t}")
    if not 0 <= d <= MONTH:
        raise DomainError(f"birth offset must lie in [0, 1/12], got {d}")


def month_interval(t: float, d: float) -> RecallInterval:
    """Ages at the start and end of the calendar month containing age ``t``."""
    _check_td(t, d)
    lo = np.floor(12 * (d + t)) / 12 - d
    return RecallInterval(lo, lo + MONTH, "month")


def year_interval(t: float, d: float, m: int) -> RecallInterval:
    """Ages at the start and end of the calendar year containing age ``t``."""
    _check_td(t, d)
    if m not in range(1, 13):
        raise DomainError(f"birth month must be in 1..12, got {m}")
    shift = d + (m - 1) / 12
    lo = np.floor(t + shift) - shift
    return RecallInterval(lo, lo + 1.0, "year")


def observed_v(t, d, m, epsilon, delta):
    """Recorded value ``v`` for a subject with true event age ``t``.

    Works elementwise on arrays.
    """
    t, d, m, epsilon, delta = np.broadcast_arrays(
        np.asarray(t, float), np.asarray(d, float), np.asarray(m),
        np.asarray(epsilon), np.asarray(delta))
    if np.any((delta == 1) & ~(t > 0)):
        raise DomainError("event age must be positive")
    if np.any((d < 0) | (d > MONTH)):
        raise DomainError("birth offset must lie in [0, 1/12]")
    if np.any((m < 1) | (m > 12)):
        raise DomainError("birth month must be in 1..12")
    ev = delta == 1
    v = np.where(ev & (epsilon == 0), t, 0.0)
    v = np.where(ev & (epsilon == 1), np.floor(12 * (d + t)) / 12, v)
    v = np.where(ev & (epsilon == 2), np.floor(t + d + (m - 1) / 12), v)
    return v[()] if v.ndim == 0 else v


# ---------------------------------------------------------------------------
# Event-time laws
# ---------------------------------------------------------------------------


class EventTimeModel:
    """Common interface: ``cdf``, ``sf``, ``pdf``, ``ppf``, ``isf``."""

    def mass(self, a, b):
        """P(a < T <= b), computed without cancellation in either tail."""
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        lower = self.cdf(a) < 0.5
        out = np.where(lower, self.cdf(b) - self.cdf(a), self.sf(a) - self.sf(b))
        return np.where(b > a, np.maximum(out, 0.0), 0.0)

    def median(self):
        return float(self.ppf(0.5))

    def logpdf(self, t):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(t))


@dataclass(frozen=True)
class Weibull(EventTimeModel):
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise DomainError("Weibull shape and scale must be positive")

    def _z(self, t):
        t = np.maximum(np.asarray(t, float), 0.0)
        return (t / self.scale) ** self.shape

    def cdf(self, t):
        return -np.expm1(-self._z(t))

    def sf(self, t):
        return np.exp(-self._z(t))

    def pdf(self, t):
        t = np.asarray(t, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = self._z(t)
            out = self.shape / np.where(t > 0, t, 1.0) * z * np.exp(-z)
        return np.where(t > 0, out, 0.0)

    def logpdf(self, t):
        t = np.asarray(t, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = np.log(np.where(t > 0, t, 1.0) / self.scale)
            out = np.log(self.shape / self.scale) + (self.shape - 1) * lt - np.exp(self.shape * lt)
        return np.where(t > 0, out, -np.inf)

    def ppf(self, p):
        return self.scale * (-np.log1p(-np.asarray(p, float))) ** (1.0 / self.shape)

    def isf(self, q):
        return self.scale * (-np.log(np.asarray(q, float))) ** (1.0 / self.shape)

    def median(self):
        return self.scale * np.log(2.0) ** (1.0 / self.shape)


@dataclass(frozen=True)
class TruncatedWeibull(EventTimeModel):
    shape: float
    scale: float
    lower: float
    upper: float

    def __post_init__(self):
        if not 0 <= self.lower < self.upper:
            raise DomainError("truncation bounds must satisfy 0 <= lower < upper")

    @property
    def base(self):
        return Weibull(self.shape, self.scale)

    @property
    def _norm(self):
        return float(self.base.mass(self.lower, self.upper))

    def _clip(self, t):
        return np.clip(np.asarray(t, float), self.lower, self.upper)

    def cdf(self, t):
        return self.base.mass(self.lower, self._clip(t)) / self._norm

    def sf(self, t):
        return self.base.mass(self._clip(t), self.upper) / self._norm

    def pdf(self, t):
        t = np.asarray(t, float)
        inside = (t >= self.lower) & (t <= self.upper)
        return np.where(inside, self.base.pdf(t) / self._norm, 0.0)

    def ppf(self, p):
        p = np.asarray(p, float)
        b = self.base
        lo_cdf, lo_sf = b.cdf(self.lower), b.sf(self.lower)
        z = self._norm
        with np.errstate(divide="ignore", invalid="ignore"):
            left = b.ppf(lo_cdf + p * z)
            right = b.isf(lo_sf - p * z)
        return self._clip(np.where(lo_cdf < 0.5, left, right))

    def isf(self, q):
        return self.ppf(1.0 - np.asarray(q, float))


@dataclass(frozen=True)
class Mixture(EventTimeModel):
    """``gamma * LogNormal(mu, sigma2) + (1 - gamma) * Weibull(shape, scale)``."""

    gamma: float
    mu: float
    sigma2: float
    shape: float
    scale: float

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise DomainError("mixture weight must lie in [0, 1]")
        if not self.sigma2 > 0:
            raise DomainError("lognormal variance must be positive")

    @property
    def weibull(self):
        return Weibull(self.shape, self.scale)

    def _zlog(self, t):
        t = np.asarray(t, float)
        with np.errstate(divide="ignore"):
            return (np.log(np.where(t > 0, t, 0.0)) - self.mu) / np.sqrt(self.sigma2)

    def cdf(self, t):
        return self.gamma * special.ndtr(self._zlog(t)) + (1 - self.gamma) * self.weibull.cdf(t)

    def sf(self, t):
        return self.gamma * special.ndtr(-self._zlog(t)) + (1 - self.gamma) * self.weibull.sf(t)

    def pdf(self, t):
        t = np.asarray(t, float)
        sig = np.sqrt(self.sigma2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ln = np.exp(-0.5 * self._zlog(t) ** 2) / (np.where(t > 0, t, 1.0) * sig * np.sqrt(2 * np.pi))
        ln = np.where(t > 0, ln, 0.0)
        return self.gamma * ln + (1 - self.gamma) * self.weibull.pdf(t)

    def _invert(self, target, fn, decreasing):
        target = np.asarray(target, float)
        lo = np.zeros_like(target)
        hi = np.full_like(target, 1.0)
        # expand the bracket until it holds every target
        while True:
            val = fn(hi)
            bad = (val > target) if decreasing else (val < target)
            if not np.any(bad):
                break
            hi = np.where(bad, hi * 2, hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            val = fn(mid)
            go_right = (val > target) if decreasing else (val < target)
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
            if np.all(hi - lo <= 1e-13 * np.maximum(hi, 1.0)):
                break
        return 0.5 * (lo + hi)

    def ppf(self, p):
        return self._invert(p, self.cdf, decreasing=False)

    def isf(self, q):
        return self._invert(q, self.sf, decreasing=True)


# ---------------------------------------------------------------------------
# Recall probabilities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogisticRecall:
    """Multinomial logistic recall with ``eta = (a1, a2, a3, b1, b2, b3)``.

    Category 0 (exact recall) is the reference: ``log(pi_k / pi_0) = a_k + b_k u``.
    """

    eta: tuple

    def __post_init__(self):
        eta = tuple(float(x) for x in self.eta)
        if len(eta) != 6:
            raise ValueError("logistic recall needs 6 parameters")
        object.__setattr__(self, "eta", eta)

    def probs(self, u):
        u = np.asarray(u, float)
        a = np.array(self.eta[:3])
        b = np.array(self.eta[3:])
        logits = np.concatenate(
            [np.zeros(u.shape + (1,)), a + b * u[..., None]], axis=-1)
        return special.softmax(logits, axis=-1)

    def component(self, k: int) -> Callable:
        a = np.array(self.eta[:3])
        b = np.array(self.eta[3:])

        def pi_k(u):
            logits = np.stack([np.zeros_like(u)] + [a[j] + b[j] * u for j in range(3)], -1)
            return np.exp(logits[..., k] - special.logsumexp(logits, axis=-1))
        return pi_k


@dataclass(frozen=True, eq=False)
class PiecewiseRecall:
    """Recall probabilities constant on elapsed-time segments.

    Segment ``j`` covers ``knots[j] < u <= knots[j+1]``; the first segment
    also holds ``u = 0`` and the last one extends to infinity.  ``b`` has one
    row per recall category and one column per segment.
    """

    knots: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, float)
        b = np.atleast_2d(np.asarray(self.b, float))
        if knots.ndim != 1 or knots[0] != 0 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must start at 0 and increase strictly")
        if b.shape[1] != len(knots):
            raise ValueError(f"b has {b.shape[1]} columns for {len(knots)} segments")
        if np.any(b < -1e-12) or np.any(b > 1 + 1e-12):
            raise ValueError("recall probabilities must lie in [0, 1]")
        if np.any(np.abs(b.sum(axis=0) - 1) > 1e-12):
            raise ValueError("each column of b must sum to 1")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "b", b)

    @property
    def n_segments(self):
        return len(self.knots)

    def segment(self, u):
        u = np.asarray(u, float)
        idx = np.searchsorted(self.knots, u, side="left") - 1
        return np.clip(idx, 0, len(self.knots) - 1)

    def probs(self, u):
        return np.moveaxis(self.b[:, self.segment(u)], 0, -1)

    def component(self, k: int) -> Callable:
        row = self.b[k]
        return lambda u: row[self.segment(u)]


RecallModel = Union[LogisticRecall, PiecewiseRecall]


def recall_probs(model: RecallModel, u):
    """Probability vector ``(pi0, pi1, pi2, pi3)`` at elapsed time ``u``."""
    if np.any(np.asarray(u) < 0):
        raise DomainError("elapsed time must be nonnegative")
    return model.probs(u)


# ---------------------------------------------------------------------------
# Integrals of f(u) * pi(s - u)
# ---------------------------------------------------------------------------


def quadrature_nodes(fmodel: EventTimeModel, s, lo, hi):
    """Probability width and event-age nodes for ``[lo, min(hi, s)]``.

    The substitution ``u = F^{-1}(p)`` turns ``f(u) du`` into ``dp``, so the
    remaining integrand is only the recall weight, smooth however peaked
    ``f`` is.  The ``p``-range gets a fixed 64-node Gauss-Legendre rule
    graded towards its ends.
    """
    s = np.asarray(s, float)
    lo = np.maximum(np.asarray(lo, float), 0.0)
    hi = np.minimum(np.asarray(hi, float), s)
    s, lo, hi = np.broadcast_arrays(s, lo, hi)
    width = fmodel.mass(lo, hi)
    cdf_lo = fmodel.cdf(lo)
    lower = cdf_lo < 0.5
    u = np.empty(s.shape + (N_NODES,))
    x = GL_NODES
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        p = cdf_lo[lower, None] + width[lower, None] * x
        u[lower] = fmodel.ppf(np.minimum(p, 1.0))
        q = fmodel.sf(lo[~lower])[:, None] - width[~lower, None] * x
        u[~lower] = fmodel.isf(np.maximum(q, 0.0))
    u = np.clip(np.nan_to_num(u, nan=0.0), lo[..., None], hi[..., None])
    return width, u


def weighted_mass(fmodel: EventTimeModel, weight: Callable, s, lo, hi, nodes=None):
    """Integral of ``f(u) * weight(s - u)`` over ``[lo, min(hi, s)]``.

    Empty ranges give 0.  ``nodes`` may carry a precomputed
    ``quadrature_nodes`` result for the same arguments.
    """
    s = np.asarray(s, float)
    width, u = quadrature_nodes(fmodel, s, lo, hi) if nodes is None else nodes
    vals = weight(np.broadcast_to(s, width.shape)[..., None] - u) @ GL_WEIGHTS
    return np.where(width > 0, width * vals, 0.0)


def piecewise_mass(fmodel: EventTimeModel, knots, row, s, lo, hi):
    """Same integral for a step-function weight given by ``row`` on ``knots``.

    The range is split wherever ``s - u`` crosses a knot, so each piece is
    exact.
    """
    s = np.asarray(s, float)
    lo = np.maximum(np.asarray(lo, float), 0.0)
    hi = np.minimum(np.asarray(hi, float), s)
    s, lo, hi = np.broadcast_arrays(s, lo, hi)
    knots = np.asarray(knots, float)
    total = np.zeros(s.shape)
    for j in range(len(knots)):
        seg_hi = s - knots[j]
        seg_lo = s - knots[j + 1] if j + 1 < len(knots) else np.full(s.shape, -np.inf)
        a = np.maximum(lo, seg_lo)
        b = np.minimum(hi, seg_hi)
        total = total + row[j] * fmodel.mass(a, b)
    return total


def branch_mass(fmodel: EventTimeModel, rmodel: RecallModel, k: int, s, lo, hi):
    if isinstance(rmodel, PiecewiseRecall):
        return piecewise_mass(fmodel, rmodel.knots, rmodel.b[k], s, lo, hi)
    return weighted_mass(fmodel, rmodel.component(k), s, lo, hi)


def conditional_densities(data: Dataset, fmodel: EventTimeModel, rmodel: RecallModel):
    """Per-subject conditional density of ``(v, epsilon, delta)`` given ``(s, m, d)``."""
    out = np.zeros(len(data))
    s, e = data.s, data.epsilon
    cens = data.delta == 0
    out[cens] = fmodel.sf(s[cens])
    ev = ~cens
    k = ev & (e == 0)
    if np.any(k):
        v = data.v[k]
        pi0 = rmodel.component(0)(np.maximum(s[k] - v, 0.0))
        out[k] = np.where(v < s[k], fmodel.pdf(v) * pi0, 0.0)
    lo, hi = data.recall_bounds()
    for cat in (1, 2, 3):
        k = ev & (e == cat)
        if np.any(k):
            out[k] = branch_mass(fmodel, rmodel, cat, s[k], lo[k], hi[k])
    return out


def outcome_density(rec: SubjectRecord, fmodel: EventTimeModel, rmodel: RecallModel) -> float:
    """Conditional density of one subject's outcome (the g-factors dropped)."""
    return float(conditional_densities(Dataset.from_records([rec]), fmodel, rmodel)[0])


def event_probabilities(fmodel: EventTimeModel, rmodel: RecallModel, s):
    """``P(delta = 1, epsilon = k | s)`` for k = 0..3, shape ``(..., 4)``."""
    s = np.asarray(s, float)
    zero = np.zeros_like(s)
    return np.stack([branch_mass(fmodel, rmodel, k, s, zero, s) for k in range(4)], -1)
