"""Command-line interface: ``recallsurv <subcommand> ...``.

Every subcommand writes a ``*.manifest.json`` next to its output holding
the full argument list, so ``recallsurv rerun <manifest>`` repeats the run
and reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import io
from . import mc
from . import nonparametric as npm
from . import simulate as sim
from .parametric import LikelihoodKind, ParametricFit, fit_mle, survival_curve

log = logging.getLogger("recallsurv")


class UsageError(Exception):
    pass


def _knots(text):
    try:
        knots = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--knots expects comma-separated numbers, got {text!r}")
    if not knots or knots[0] != 0 or any(b <= a for a, b in zip(knots, knots[1:])):
        raise argparse.ArgumentTypeError("--knots must start at 0 and increase")
    return knots


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return n


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def manifest_path(out) -> Path:
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(out, args, argv, inputs=(), seed=None, config=None):
    """Record what produced ``out``: arguments, seed, version and input digests."""
    stamp = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = time.gmtime(int(stamp)) if stamp else time.gmtime()
    manifest = {
        "subcommand": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "config": config if config is not None else {
            k: v for k, v in vars(args).items() if k not in ("func", "command")},
        "seed": seed,
        "version": __version__,
        "inputs": {str(p): io.file_digest(p) for p in inputs},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", stamp),
    }
    io.write_json(manifest_path(out), manifest)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def load_scenario(spec, n, seed):
    """A preset name or the path of a scenario JSON file."""
    if spec in sim.PRESETS:
        return sim.preset(spec, n, seed), []
    if not spec.endswith(".json"):
        raise UsageError(f"--scenario: {spec!r} is neither a preset nor a .json file")
    return io.scenario_from_dict(io.read_json(spec)).with_(n=n, seed=seed), [spec]


def cmd_simulate(args, argv):
    sc, inputs = load_scenario(args.scenario, args.n, args.seed)
    io.write_dataset(args.out, sim.generate(sc))
    write_manifest(args.out, args, argv, inputs=inputs, seed=args.seed,
                   config=io.scenario_to_dict(sc))


def _load_fit(path) -> ParametricFit:
    d = io.read_json(path)
    try:
        return ParametricFit.from_dict(d)
    except (KeyError, ValueError, TypeError) as exc:
        raise io.DataFormatError(f"{path} is not a parametric fit: {exc}") from exc


def cmd_fit(args, argv):
    data = io.read_dataset(args.data)
    init, inputs = None, [args.data]
    if args.init:
        d = io.read_json(args.init)
        if "theta" not in d:
            raise io.DataFormatError(f"{args.init} needs a 'theta' entry")
        init = (tuple(d["theta"]), d.get("eta"))
        inputs.append(args.init)
    fit = fit_mle(data, args.kind, init, compute_se=not args.no_se)
    io.write_json(args.out, fit.to_dict())
    write_manifest(args.out, args, argv, inputs=inputs)


def cmd_npfit(args, argv):
    data = io.read_dataset(args.data)
    fit = npm.fit_amle(data, args.knots, binary=args.kind == "binary")
    io.write_json(args.out, fit.to_dict())
    if args.cdf_out:
        io.write_rows(args.cdf_out, ("t", "F"), fit.cdf.table())
    write_manifest(args.out, args, argv, inputs=[args.data])


def cmd_gof(args, argv):
    data = io.read_dataset(args.data)
    res = dg.gof_chisq(data, _load_fit(args.fit))
    io.write_json(args.out, res.to_dict())
    write_manifest(args.out, args, argv, inputs=[args.data, args.fit])


TYPE_NAMES = ("exact", "month", "year", "none")


def recall_check_rows(data, fit: ParametricFit, knots):
    f, r = fit.event_model(), fit.recall_model()
    b = dg.conditional_piecewise_recall(data, f, knots)
    logistic = dg.logistic_segment_average(r, f, knots, data.s)
    edges = list(knots) + [float("inf")]
    rows = []
    for j in range(len(knots)):
        for k, name in enumerate(TYPE_NAMES):
            rows.append({"segment": j + 1, "lo": edges[j], "hi": edges[j + 1], "type": name,
                         "piecewise": b[k, j], "logistic": logistic[k, j]})
    return rows


RECALL_COLUMNS = ("segment", "lo", "hi", "type", "piecewise", "logistic")


def cmd_recallcheck(args, argv):
    data = io.read_dataset(args.data)
    fit = _load_fit(args.fit)
    io.write_rows(args.out, RECALL_COLUMNS, recall_check_rows(data, fit, args.knots))
    write_manifest(args.out, args, argv, inputs=[args.data, args.fit])


PARAMETRIC_COLUMNS = ("case", "param", "estimator", "truth", "bias", "stdev", "mse",
                      "reps_used", "failures")
CURVE_COLUMNS = ("case", "age", "estimator", "truth", "bias", "variance", "mse",
                 "reps_used", "failures")


def summary_rows(summary: mc.McSummary):
    case = summary.config.scenario
    if summary.config.parametric:
        # one block per quantity, estimators in column order
        order = {q: i for i, q in enumerate(mc.QUANTITIES)}
        rows = sorted(summary.rows, key=lambda r: order[r["quantity"]])
        return PARAMETRIC_COLUMNS, [dict(r, case=case, param=r["quantity"]) for r in rows]
    return CURVE_COLUMNS, [dict(r, case=case, age=r["quantity"], variance=r["stdev"] ** 2)
                           for r in summary.rows]


def raw_rows(summary: mc.McSummary):
    rows = []
    for est, vals in summary.raw.items():
        labels = mc.QUANTITIES if summary.config.parametric else summary.config.ages
        for rep, row in enumerate(vals):
            for lab, x in zip(labels, row):
                rows.append({"rep": rep, "estimator": est, "quantity": lab, "value": x})
    return rows


def cmd_mc(args, argv):
    cfg_dict = io.read_json(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    elif "seed" not in cfg_dict:
        raise UsageError("mc needs --seed or a 'seed' entry in the config")
    if args.workers is not None:
        cfg_dict["workers"] = args.workers
    try:
        cfg = mc.McConfig.from_dict(cfg_dict)
    except TypeError as exc:
        raise io.DataFormatError(f"{args.config}: {exc}") from exc
    summary = mc.run(cfg)
    cols, rows = summary_rows(summary)
    io.write_rows(args.out, cols, rows)
    if args.raw:
        io.write_rows(args.raw, ("rep", "estimator", "quantity", "value"), raw_rows(summary))
    write_manifest(args.out, args, argv, inputs=[args.config], seed=cfg.seed,
                   config=cfg.to_dict())


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

FULL = {"table1": 300, "table_s2": 100, "sensitivity": 100, "fig2": 200, "gof_n": 300}
QUICK = {"table1": 6, "table_s2": 3, "sensitivity": 3, "fig2": 10, "gof_n": 300}


def report_configs(seed, scale):
    """The reduced-scale reproduction runs as ``(file stem, McConfig)``."""
    return [
        ("table1_case_i", mc.McConfig("case_i", 100, scale["table1"], seed=seed)),
        ("table_s2_case_ii", mc.McConfig("case_ii", 1000, scale["table_s2"],
                                         estimators=("partial",), seed=seed)),
        ("table_s4_mixture_g05", mc.McConfig("mixture_g05", 300, scale["sensitivity"],
                                             estimators=("partial",), seed=seed)),
        ("fig2_case_a", mc.McConfig("case_a", 100, scale["fig2"],
                                    estimators=mc.NONPARAMETRIC, seed=seed)),
    ]


def cmd_report(args, argv):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scale = QUICK if args.quick else FULL
    for stem, cfg in report_configs(args.seed, scale):
        log.info("running %s", stem)
        summary = mc.run(cfg)
        cols, rows = summary_rows(summary)
        if not cfg.parametric:
            cols = ("age", "estimator", "bias", "variance", "mse")
        io.write_rows(out / f"{stem}.csv", cols, rows)

    # one simulated dataset stands in for survey data in the per-dataset outputs
    data = sim.generate(sim.preset("case_i", scale["gof_n"], args.seed))
    io.write_dataset(out / "data_case_i.csv", data)
    curves = dg.cumulative_recall_curves(data)
    io.write_rows(out / "fig1_curves.csv",
                  ("age_lo", "age_hi", "age_mid", "n_events", "cum_exact", "cum_month",
                   "cum_year", "cum_none"), curves)

    fits = {k.value: fit_mle(data, k) for k in LikelihoodKind}
    ages = np.round(np.arange(8.0, 21.001, 0.25), 6)
    rows = []
    for kind, fit in fits.items():
        surv, half = survival_curve(fit, ages)
        rows += [{"age": a, "estimator": kind, "survival": s_, "halfwidth": h}
                 for a, s_, h in zip(ages, surv, half)]
    for kind in ("partial", "binary"):
        amle = npm.fit_amle(data, sim.KNOTS, binary=kind == "binary")
        surv = 1.0 - amle.cdf(ages)
        rows += [{"age": a, "estimator": f"amle_{kind}", "survival": s_, "halfwidth": np.nan}
                 for a, s_ in zip(ages, surv)]
    io.write_rows(out / "fig3_survival.csv", ("age", "estimator", "survival", "halfwidth"), rows)

    partial = fits["partial"]
    io.write_json(out / "fits.json", {k: f.to_dict() for k, f in fits.items()})
    io.write_rows(out / "fig4_recall_check.csv", RECALL_COLUMNS,
                  recall_check_rows(data, partial, sim.KNOTS))
    mids = [row[2] for row in curves]
    model = dg.model_recall_curves(partial.event_model(), partial.recall_model(), mids)
    io.write_rows(out / "fig5_model_curves.csv",
                  ("age", "cum_exact", "cum_month", "cum_year", "cum_none"),
                  [(a, *row) for a, row in zip(mids, model)])
    io.write_json(out / "gof.json", dg.gof_chisq(data, partial).to_dict())
    write_manifest(out, args, argv, seed=args.seed)


def cmd_rerun(args, argv):
    manifest = io.read_json(args.manifest)
    if "argv" not in manifest:
        raise io.DataFormatError(f"{args.manifest} has no argument list")
    cwd = os.getcwd()
    os.chdir(manifest.get("cwd", cwd))
    try:
        return main(manifest["argv"])
    finally:
        os.chdir(cwd)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="recallsurv",
                                description="Event-time estimation from recall data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic dataset")
    s.add_argument("--scenario", required=True,
                   help=f"preset ({', '.join(sim.PRESETS)}) or scenario JSON file")
    s.add_argument("--n", required=True, type=_positive_int)
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="parametric maximum likelihood fit")
    s.add_argument("--data", required=True)
    s.add_argument("--kind", required=True, choices=[k.value for k in LikelihoodKind])
    s.add_argument("--out", required=True)
    s.add_argument("--init", help="JSON with starting 'theta' (and optional 'eta')")
    s.add_argument("--no-se", action="store_true", help="skip the covariance computation")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("npfit", help="nonparametric AMLE fit")
    s.add_argument("--data", required=True)
    s.add_argument("--knots", type=_knots, default=sim.KNOTS)
    s.add_argument("--kind", choices=("partial", "binary"), default="partial")
    s.add_argument("--out", required=True)
    s.add_argument("--cdf-out", help="also write the step function as (t, F) CSV")
    s.set_defaults(func=cmd_npfit)

    s = sub.add_parser("gof", help="chi-square goodness of fit of a partial-recall fit")
    s.add_argument("--data", required=True)
    s.add_argument("--fit", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gof)

    s = sub.add_parser("recallcheck", help="piecewise versus logistic recall probabilities")
    s.add_argument("--data", required=True)
    s.add_argument("--fit", required=True)
    s.add_argument("--knots", type=_knots, default=sim.KNOTS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_recallcheck)

    s = sub.add_parser("mc", help="Monte Carlo study from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="overrides the config seed")
    s.add_argument("--raw", help="also write per-replication estimates")
    s.add_argument("--workers", type=_positive_int)
    s.set_defaults(func=cmd_mc)

    s = sub.add_parser("report", help="reduced-scale reproduction of all tables and figures")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=20240607)
    s.add_argument("--quick", action="store_true", help="few replications, for smoke tests")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args, argv)
    except UsageError as exc:
        print(f"recallsurv {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (io.DataFormatError, ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"recallsurv {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(result or 0)


if __name__ == "__main__":
    sys.exit(main())
