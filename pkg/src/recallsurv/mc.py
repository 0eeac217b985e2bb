"""Monte Carlo comparison of the estimators on simulated scenarios.

Every replication draws its data from a seed derived from ``(seed, rep)``,
so results do not depend on the number of workers or their scheduling.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nonparametric as npm
from . import simulate as sim
from .model import Mixture
from .parametric import DegenerateData, fit_mle

log = logging.getLogger(__name__)

PARAMETRIC = ("current", "binary", "partial")
NONPARAMETRIC = ("amle_partial", "amle_binary", "edf")
QUANTITIES = ("theta1", "theta2", "median", "pi0_at_5")
DEFAULT_AGES = tuple(np.round(np.arange(8.0, 16.001, 0.5), 6))


@dataclass(frozen=True)
class McConfig:
    scenario: str
    n: int
    reps: int
    estimators: tuple = PARAMETRIC
    seed: int = 0
    workers: int = 1
    knots: tuple = sim.KNOTS
    ages: tuple = DEFAULT_AGES

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.estimators:
            raise ValueError("at least one estimator is needed")
        unknown = set(self.estimators) - set(PARAMETRIC) - set(NONPARAMETRIC)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        if self.scenario not in sim.PRESETS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        object.__setattr__(self, "ages", tuple(float(a) for a in self.ages))

    @property
    def parametric(self):
        return all(e in PARAMETRIC for e in self.estimators)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class McSummary:
    """Rows of ``(estimator, quantity, truth, bias, stdev, mse, reps_used, failures)``.

    ``raw`` maps estimator to an array of per-replication estimates
    (NaN for failed replications).
    """

    config: McConfig
    rows: list
    raw: dict = field(default_factory=dict)

    COLUMNS = ("estimator", "quantity", "truth", "bias", "stdev", "mse", "reps_used", "failures")

    def row(self, estimator, quantity):
        for r in self.rows:
            if r["estimator"] == estimator and r["quantity"] == quantity:
                return r
        raise KeyError((estimator, quantity))

    def curve(self, estimator, column="mse"):
        """Nonparametric summary column against age for one estimator."""
        rows = [r for r in self.rows if r["estimator"] == estimator]
        return np.array([r["quantity"] for r in rows]), np.array([r[column] for r in rows])


def rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1, np.uint64)[0])


def summarize(estimates, truth):
    """Bias, population stdev and MSE over the finite entries of ``estimates``."""
    est = np.asarray(estimates, float)
    ok = np.isfinite(est)
    used = int(ok.sum())
    if used == 0:
        return dict(bias=np.nan, stdev=np.nan, mse=np.nan, reps_used=0)
    err = est[ok] - truth
    bias = float(err.mean())
    var = float(np.mean((err - bias) ** 2))
    return dict(bias=bias, stdev=float(np.sqrt(var)), mse=float(np.mean(err**2)), reps_used=used)


def worker_count(requested: int) -> int:
    cap = os.environ.get("RECALLSURV_THREADS")
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return min(n, os.cpu_count() or 1)


def _map(fn, cfg: McConfig):
    args = [(cfg, r) for r in range(cfg.reps)]
    workers = worker_count(cfg.workers)
    if workers == 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, args, chunksize=max(1, cfg.reps // (4 * workers))))


def _dataset(cfg: McConfig, rep: int):
    return sim.generate(sim.preset(cfg.scenario, cfg.n, rep_seed(cfg.seed, rep)))


# ---------------------------------------------------------------------------
# Parametric
# ---------------------------------------------------------------------------


def parametric_truth(scenario: str):
    sc = sim.preset(scenario)
    ev = sc.event
    weib = ev.weibull if isinstance(ev, Mixture) else ev
    theta = (weib.shape, weib.scale)
    return {"theta1": theta[0], "theta2": theta[1], "median": ev.median(),
            "pi0_at_5": float(sc.recall.probs(5.0)[0])}


def _parametric_rep(arg):
    cfg, rep = arg
    data = _dataset(cfg, rep)
    out = {}
    for est in cfg.estimators:
        vals = np.full(len(QUANTITIES), np.nan)
        try:
            fit = fit_mle(data, est, compute_se=False)
        except (DegenerateData, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.info("rep %d %s failed: %s", rep, est, exc)
            out[est] = (vals, False)
            continue
        if fit.converged:
            vals[:] = [*fit.theta, fit.median, fit.pi0_at_5]
        out[est] = (vals, fit.converged)
    return out


def run_mc_parametric(cfg: McConfig) -> McSummary:
    if not cfg.parametric:
        raise ValueError("run_mc_parametric takes current/binary/partial estimators only")
    results = _map(_parametric_rep, cfg)
    truth = parametric_truth(cfg.scenario)
    rows, raw = [], {}
    for est in cfg.estimators:
        vals = np.array([r[est][0] for r in results])
        ok = np.array([r[est][1] for r in results])
        raw[est] = vals
        for q, name in enumerate(QUANTITIES):
            stats = summarize(vals[:, q], truth[name])
            rows.append(dict(estimator=est, quantity=name, truth=truth[name], **stats,
                             failures=int((~ok).sum())))
    return McSummary(cfg, rows, raw)


def run_sensitivity(cfg: McConfig) -> McSummary:
    """Parametric Weibull fits on data from a lognormal-Weibull mixture."""
    if not isinstance(sim.preset(cfg.scenario).event, Mixture):
        raise ValueError("sensitivity runs need a mixture scenario")
    return run_mc_parametric(cfg)


# ---------------------------------------------------------------------------
# Nonparametric
# ---------------------------------------------------------------------------


def _nonparametric_rep(arg):
    cfg, rep = arg
    data = _dataset(cfg, rep)
    ages = np.asarray(cfg.ages)
    out = {}
    for est in cfg.estimators:
        try:
            if est == "edf":
                f = npm.edf(data.t)
                out[est] = f(ages)
                continue
            fit = npm.fit_amle(data, cfg.knots, binary=est == "amle_binary")
        except npm.NoExactRecalls:
            out[est] = None
            continue
        out[est] = fit.cdf(ages) if fit.converged else None
    return out


def run_mc_nonparametric(cfg: McConfig, ages=None) -> McSummary:
    """Pointwise bias, variance and MSE of the distribution function estimates."""
    if ages is not None:
        cfg = McConfig(**{**asdict(cfg), "ages": tuple(ages)})
    if not all(e in NONPARAMETRIC for e in cfg.estimators):
        raise ValueError("run_mc_nonparametric takes amle_partial/amle_binary/edf only")
    results = _map(_nonparametric_rep, cfg)
    ages = np.asarray(cfg.ages)
    truth = sim.preset(cfg.scenario).event.cdf(ages)
    rows, raw = [], {}
    for est in cfg.estimators:
        vals = np.array([np.full(len(ages), np.nan) if r[est] is None else r[est]
                         for r in results])
        failures = sum(r[est] is None for r in results)
        raw[est] = vals
        for k, age in enumerate(ages):
            stats = summarize(vals[:, k], truth[k])
            rows.append(dict(estimator=est, quantity=float(age), truth=float(truth[k]),
                             **stats, failures=failures))
    return McSummary(cfg, rows, raw)


def run(cfg: McConfig) -> McSummary:
    if cfg.parametric:
        return run_mc_parametric(cfg)
    return run_mc_nonparametric(cfg)
