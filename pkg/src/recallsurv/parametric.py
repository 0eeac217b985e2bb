"""Maximum likelihood for a Weibull event time under three data views.

``current``  uses only interview age and event status.
``binary``   distinguishes exact recall from everything else, with a
             two-parameter logistic non-recall curve.
``partial``  uses exact, month, year and no recall with the multinomial
             logistic recall model.

Parameters are optimised on the scale ``(log shape, log scale, eta)``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .model import GL_WEIGHTS, Dataset, DomainError, LogisticRecall, Weibull, quadrature_nodes, weighted_mass

log = logging.getLogger(__name__)

Z95 = 1.959963984540054
_BIG_NEGATIVE = -1e3  # logistic intercept that switches a recall category off


class LikelihoodKind(str, enum.Enum):
    CURRENT = "current"
    BINARY = "binary"
    PARTIAL = "partial"

    @property
    def n_eta(self):
        return {"current": 0, "binary": 2, "partial": 6}[self.value]


class DegenerateData(ValueError):
    pass


class SingularInformation(np.linalg.LinAlgError):
    pass


class NonConvergence(RuntimeError):
    pass


def _kind(kind) -> LikelihoodKind:
    return kind if isinstance(kind, LikelihoodKind) else LikelihoodKind(kind)


# ---------------------------------------------------------------------------
# Log-likelihood
# ---------------------------------------------------------------------------


class Loglik:
    """Log-likelihood of one dataset, callable on the packed parameter vector."""

    def __init__(self, data: Dataset, kind):
        self.data = data
        self.kind = _kind(kind)
        s, dl, e = data.s, data.delta, data.epsilon
        self.cens = dl == 0
        self.exact = (dl == 1) & (e == 0)
        lo, hi = data.recall_bounds()
        if self.kind is LikelihoodKind.CURRENT:
            self.event = dl == 1
        elif self.kind is LikelihoodKind.BINARY:
            self.other = (dl == 1) & (e != 0)
            self.other_s = s[self.other]
        else:
            self.other = (dl == 1) & (e != 0)
            self.other_s = s[self.other]
            self.other_lo = lo[self.other]
            self.other_hi = hi[self.other]
            self.other_cat = e[self.other][:, None]
            self._cache_key = None
        self.exact_v = data.v[self.exact]
        self.exact_u = s[self.exact] - self.exact_v

    def unpack(self, x):
        x = np.asarray(x, float)
        return (math.exp(x[0]), math.exp(x[1])), tuple(x[2:])

    def terms(self, x):
        """Per-group log contributions (censored, exact, other)."""
        (shape, scale), eta = self.unpack(x)
        f = Weibull(shape, scale)
        d = self.data
        z_cens = (d.s[self.cens] / scale) ** shape
        out = [-z_cens]
        if self.kind is LikelihoodKind.CURRENT:
            z = (d.s[self.event] / scale) ** shape
            with np.errstate(divide="ignore"):
                out.append(np.log(-np.expm1(-z)))
            return out
        if self.kind is LikelihoodKind.BINARY:
            a, b = eta
            lin = a + b * self.exact_u
            out.append(f.logpdf(self.exact_v) + special.log_expit(-lin))
            if len(self.other_s):
                weight = lambda u: special.expit(a + b * u)  # noqa: E731
                m = weighted_mass(f, weight, self.other_s, 0.0, self.other_s)
                with np.errstate(divide="ignore"):
                    out.append(np.log(m))
            return out
        alpha = np.array(eta[:3])
        beta = np.array(eta[3:])
        lin = alpha + beta * self.exact_u[:, None]
        out.append(f.logpdf(self.exact_v) - np.logaddexp(0.0, special.logsumexp(lin, axis=1)))
        if len(self.other_s):
            width, u = self._nodes(f)
            el = self.other_s[:, None] - u
            logits = alpha[:, None, None] + beta[:, None, None] * el
            top = np.maximum(logits.max(axis=0), 0.0)
            ex = np.exp(logits - top)
            denom = np.exp(-top) + ex.sum(axis=0)
            pi = ex[self.other_cat[:, 0] - 1, np.arange(len(el))] / denom
            m = width * (pi @ GL_WEIGHTS)
            with np.errstate(divide="ignore"):
                out.append(np.log(m))
        return out

    def _nodes(self, f):
        key = (f.shape, f.scale)
        if self._cache_key != key:
            self._cache = quadrature_nodes(f, self.other_s, self.other_lo, self.other_hi)
            self._cache_key = key
        return self._cache

    def __call__(self, x) -> float:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                parts = np.concatenate(self.terms(x))
        except (OverflowError, DomainError):
            return -np.inf
        if not np.all(np.isfinite(parts)):
            return -np.inf
        return float(np.sum(parts))


def pack(kind, theta, eta=None):
    kind = _kind(kind)
    eta = () if eta is None else tuple(eta)
    if len(eta) != kind.n_eta:
        raise ValueError(f"{kind.value} likelihood takes {kind.n_eta} recall parameters")
    if not (theta[0] > 0 and theta[1] > 0):
        raise ValueError("Weibull parameters must be positive")
    return np.array([math.log(theta[0]), math.log(theta[1]), *eta], float)


def loglik(data: Dataset, kind, theta, eta=None) -> float:
    """Log-likelihood; ``-inf`` if any subject's contribution vanishes."""
    return Loglik(data, kind)(pack(kind, theta, eta))


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------


def num_grad(fun, x, rel=1e-5):
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for i in range(len(x)):
        h = rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def num_hess(fun, x, rel=1e-4):
    x = np.asarray(x, float)
    k = len(x)
    h = rel * np.maximum(1.0, np.abs(x))
    f0 = fun(x)
    H = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (fun(x + 2 * ei) - 2 * f0 + fun(x - 2 * ei)) / (4 * h[i] ** 2)
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4 * h[i] * h[j])
    return H


@dataclass
class OptResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    converged: bool
    iterations: int


def bfgs(fun, x0, gtol=1e-6, maxiter=400, c1=1e-4, max_step=5.0):
    """Minimise ``fun`` by BFGS with a backtracking Armijo line search.

    Non-finite trial values count as failed steps, so the search simply
    shrinks away from regions where the objective is undefined.
    """
    x = np.asarray(x0, float).copy()
    f = fun(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    g = num_grad(fun, x)
    Hinv = np.eye(len(x))
    scaled = False
    it = 0
    for it in range(1, maxiter + 1):
        if np.max(np.abs(g)) < gtol:
            return OptResult(x, f, g, True, it - 1)
        p = -Hinv @ g
        slope = g @ p
        if slope >= 0:
            Hinv = np.eye(len(x))
            p, slope = -g, -(g @ g)
        # keep trial points within a few units of the current iterate
        step = min(1.0, max_step / np.max(np.abs(p)))
        for _ in range(60):
            x_new = x + step * p
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
                break
            step *= 0.5
        else:
            if np.allclose(Hinv, np.eye(len(x))):
                break
            Hinv = np.eye(len(x))
            continue
        g_new = num_grad(fun, x_new)
        sk = x_new - x
        yk = g_new - g
        sy = sk @ yk
        if sy > 1e-12 * np.linalg.norm(sk) * np.linalg.norm(yk):
            if not scaled:
                Hinv = np.eye(len(x)) * sy / (yk @ yk)
                scaled = True
            rho = 1.0 / sy
            V = np.eye(len(x)) - rho * np.outer(sk, yk)
            Hinv = V @ Hinv @ V.T + rho * np.outer(sk, sk)
        x, f, g = x_new, f_new, g_new
    return OptResult(x, f, g, bool(np.max(np.abs(g)) < gtol), it)


def newton_polish(fun, res: OptResult, gtol=1e-6, steps=8):
    """Finish with damped Newton steps on a finite-difference Hessian."""
    x, f, g = res.x, res.fun, res.grad
    for _ in range(steps):
        if np.max(np.abs(g)) < gtol:
            break
        H = num_hess(fun, x)
        try:
            w, V = np.linalg.eigh(H)
        except np.linalg.LinAlgError:
            break
        if w.min() <= 0:
            break
        p = -(V / w) @ (V.T @ g)
        step = 1.0
        for _ in range(30):
            f_new = fun(x + step * p)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * (g @ p):
                break
            step *= 0.5
        else:
            break
        x = x + step * p
        f = f_new
        g = num_grad(fun, x)
    return OptResult(x, f, g, bool(np.max(np.abs(g)) < gtol), res.iterations)


# ---------------------------------------------------------------------------
# Fits
# ---------------------------------------------------------------------------


@dataclass
class ParametricFit:
    kind: LikelihoodKind
    theta: tuple
    eta: Optional[tuple]
    loglik: float
    covariance: Optional[np.ndarray]
    converged: bool
    iterations: int
    derived: dict = field(default_factory=dict)
    fixed_eta: bool = False

    @property
    def params(self):
        return np.array([*self.theta, *(self.eta or ())])

    @property
    def param_names(self):
        names = ["theta1", "theta2"]
        if self.kind is LikelihoodKind.BINARY:
            names += ["alpha", "beta"]
        elif self.kind is LikelihoodKind.PARTIAL:
            names += ["alpha1", "alpha2", "alpha3", "beta1", "beta2", "beta3"]
        return names[: 2 if self.fixed_eta else None]

    @property
    def n_free(self):
        return 2 + (0 if self.fixed_eta else self.kind.n_eta)

    @property
    def median(self):
        return weibull_median(*self.theta)

    @property
    def pi0_at_5(self):
        return exact_recall_prob(self.kind, self.eta, 5.0)

    def event_model(self) -> Weibull:
        return Weibull(*self.theta)

    def recall_model(self) -> LogisticRecall:
        if self.kind is not LikelihoodKind.PARTIAL:
            raise ValueError("only a partial-recall fit carries a four-category recall model")
        return LogisticRecall(self.eta)

    def to_dict(self):
        cov = None if self.covariance is None else np.asarray(self.covariance).tolist()
        return {
            "kind": self.kind.value,
            "theta": list(self.theta),
            "eta": None if self.eta is None else list(self.eta),
            "loglik": self.loglik,
            "covariance": cov,
            "param_names": self.param_names,
            "converged": self.converged,
            "iterations": self.iterations,
            "fixed_eta": self.fixed_eta,
            "derived": {k: {"value": v[0], "se": v[1]} for k, v in self.derived.items()},
        }

    @classmethod
    def from_dict(cls, d):
        cov = d.get("covariance")
        return cls(
            kind=LikelihoodKind(d["kind"]),
            theta=tuple(d["theta"]),
            eta=None if d.get("eta") is None else tuple(d["eta"]),
            loglik=d["loglik"],
            covariance=None if cov is None else np.array(cov, float),
            converged=d["converged"],
            iterations=d["iterations"],
            derived={k: (v["value"], v["se"]) for k, v in d.get("derived", {}).items()},
            fixed_eta=d.get("fixed_eta", False),
        )


def weibull_median(shape, scale):
    return scale * math.log(2.0) ** (1.0 / shape)


def exact_recall_prob(kind, eta, u):
    kind = _kind(kind)
    if kind is LikelihoodKind.CURRENT or eta is None:
        return float("nan")
    if kind is LikelihoodKind.BINARY:
        return float(special.expit(-(eta[0] + eta[1] * u)))
    return float(LogisticRecall(eta).probs(u)[0])


def initial_theta(data: Dataset):
    """Crude Weibull quantile match on exactly recalled ages; (10, 12) if too few."""
    v = data.v[(data.delta == 1) & (data.epsilon == 0)]
    if len(v) >= 4:
        q25, q50, q75 = np.quantile(v, [0.25, 0.5, 0.75])
        if q25 > 0 and q75 > q25:
            shape = (math.log(-math.log(0.25)) - math.log(-math.log(0.75))) / math.log(q75 / q25)
            shape = min(max(shape, 0.5), 50.0)
            return shape, q50 / math.log(2.0) ** (1.0 / shape)
    return 10.0, 12.0


def _check_data(data, kind):
    if len(data) == 0:
        raise DegenerateData("dataset is empty")
    if kind is LikelihoodKind.CURRENT and (data.delta.all() or not data.delta.any()):
        raise DegenerateData("current status fit needs both events and non-events")
    if kind is not LikelihoodKind.CURRENT and not data.delta.any():
        raise DegenerateData("no events in the data")


def fit_mle(data: Dataset, kind, init=None, *, fixed_eta=None, compute_se=True,
            gtol=1e-6, maxiter=400, restarts=3, seed=0) -> ParametricFit:
    """Maximum likelihood fit.

    Parameters
    ----------
    init : (theta, eta) pair, optional
        Starting point; default is a quantile match for theta and zero eta.
    fixed_eta : sequence, optional
        Hold the recall parameters at these values and fit theta only.
    compute_se : bool
        Compute the observed-information covariance and delta-method SEs.
    restarts : int
        Jittered restarts tried when the first run does not converge.
    """
    kind = _kind(kind)
    _check_data(data, kind)
    ll = Loglik(data, kind)
    n_eta = kind.n_eta
    if init is None:
        theta0, eta0 = initial_theta(data), np.zeros(n_eta)
    else:
        theta0, eta0 = init
        eta0 = np.zeros(n_eta) if eta0 is None else np.asarray(eta0, float)
    if fixed_eta is not None:
        eta_fixed = np.asarray(fixed_eta, float)
        objective = lambda y: -ll(np.concatenate([y, eta_fixed]))  # noqa: E731
        x0 = pack(LikelihoodKind.CURRENT, theta0)
    else:
        objective = lambda y: -ll(y)  # noqa: E731
        x0 = pack(kind, theta0, eta0)
    if not np.isfinite(objective(x0)):
        x0 = x0.copy()
        x0[:2] = np.log([10.0, 12.0])

    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(1 + restarts):
        start = x0 if attempt == 0 else best.x + rng.normal(0, 0.2, len(x0)) * (
            [0.5, 0.05] + [1.0] * (len(x0) - 2))
        if not np.isfinite(objective(start)):
            continue
        res = bfgs(objective, start, gtol=gtol, maxiter=maxiter)
        if not res.converged:
            res = newton_polish(objective, res, gtol=gtol)
        if best is None or res.converged and not best.converged or (
                res.converged == best.converged and res.fun < best.fun):
            best = res
        if best.converged:
            break
    if not best.converged:
        log.warning("%s fit did not converge (max |grad| = %.2e)", kind.value,
                    np.max(np.abs(best.grad)))

    x_full = best.x if fixed_eta is None else np.concatenate([best.x, eta_fixed])
    theta, eta = ll.unpack(x_full)
    fit = ParametricFit(
        kind=kind, theta=theta, eta=eta if n_eta else None, loglik=-best.fun,
        covariance=None, converged=best.converged, iterations=best.iterations,
        fixed_eta=fixed_eta is not None,
    )
    fit.derived = {"median": (fit.median, float("nan"))}
    if n_eta:
        fit.derived["pi0_at_5"] = (fit.pi0_at_5, float("nan"))
    if compute_se:
        try:
            standard_errors(fit, data)
        except SingularInformation as exc:
            log.warning("no covariance for %s fit: %s", kind.value, exc)
    return fit


def standard_errors(fit: ParametricFit, data: Dataset):
    """Observed-information covariance and delta-method SEs, stored on ``fit``.

    Returns the covariance over the free parameters on the natural scale.
    """
    ll = Loglik(data, fit.kind)
    x = pack(fit.kind, fit.theta, fit.eta)
    if fit.fixed_eta:
        eta = x[2:]
        H = num_hess(lambda y: -ll(np.concatenate([y, eta])), x[:2])
    else:
        H = num_hess(lambda y: -ll(y), x)
    if not np.all(np.isfinite(H)):
        raise SingularInformation("Hessian has non-finite entries")
    H = 0.5 * (H + H.T)
    if np.linalg.cond(H) > 1e12:
        raise SingularInformation("observed information is numerically singular")
    w = np.linalg.eigvalsh(H)
    if w.min() <= 0:
        raise SingularInformation("observed information is not positive definite")
    cov_x = np.linalg.inv(H)
    jac = np.ones(len(x))
    jac[:2] = fit.theta
    jac = jac[: len(cov_x)]
    cov = cov_x * np.outer(jac, jac)
    cov = 0.5 * (cov + cov.T)
    fit.covariance = cov

    shape, scale = fit.theta
    med = fit.median
    g_med = np.zeros(len(cov))
    g_med[0] = -med * math.log(math.log(2.0)) / shape**2
    g_med[1] = med / scale
    fit.derived["median"] = (med, float(math.sqrt(g_med @ cov @ g_med)))
    if fit.kind is not LikelihoodKind.CURRENT:
        p0 = fit.pi0_at_5
        g = np.zeros(len(cov))
        if not fit.fixed_eta:
            if fit.kind is LikelihoodKind.BINARY:
                q = 1.0 - p0
                g[2:] = [-q * p0, -5.0 * q * p0]
            else:
                probs = LogisticRecall(fit.eta).probs(5.0)
                g[2:5] = -p0 * probs[1:]
                g[5:8] = -5.0 * p0 * probs[1:]
        fit.derived["pi0_at_5"] = (p0, float(math.sqrt(max(g @ cov @ g, 0.0))))
    return cov


def survival_curve(fit: ParametricFit, ages):
    """Fitted survival ``1 - F(t)`` with pointwise 95% delta-method half-widths."""
    ages = np.asarray(ages, float)
    shape, scale = fit.theta
    pos = ages > 0
    t = np.where(pos, ages, 1.0)
    z = (t / scale) ** shape
    surv = np.where(pos, np.exp(-z), 1.0)
    if fit.covariance is None:
        return surv, np.full(ages.shape, np.nan)
    cov = np.asarray(fit.covariance)[:2, :2]
    d1 = -surv * z * np.log(t / scale)
    d2 = surv * z * shape / scale
    var = d1**2 * cov[0, 0] + 2 * d1 * d2 * cov[0, 1] + d2**2 * cov[1, 1]
    half = np.where(pos, Z95 * np.sqrt(np.maximum(var, 0.0)), 0.0)
    return surv, half
