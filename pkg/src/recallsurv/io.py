"""CSV and JSON readers/writers for datasets, fits and summaries.

Floats are written with ``repr``, the shortest string that parses back to
the same double, so a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .model import Dataset, DomainError

DATA_COLUMNS = ("id", "s", "delta", "epsilon", "v", "m", "d")


class DataFormatError(ValueError):
    pass


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def write_dataset(path, data: Dataset):
    cols = list(DATA_COLUMNS) + (["t"] if data.t is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(data)):
            row = [data.ids[i], data.s[i], data.delta[i], data.epsilon[i], data.v[i],
                   data.m[i], data.d[i]]
            if data.t is not None:
                row.append(data.t[i])
            w.writerow([_fmt(x) for x in row])


def read_dataset(path) -> Dataset:
    """Load a dataset CSV; the ``id`` and ``t`` columns are optional."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise DataFormatError(f"{path} has no data rows")
    missing = set(DATA_COLUMNS[1:]) - set(rows[0])
    if missing:
        raise DataFormatError(f"{path} lacks columns {sorted(missing)}")
    try:
        cols = {c: [r[c] for r in rows] for c in rows[0]}
        data = Dataset(
            s=np.array(cols["s"], float), delta=np.array(cols["delta"], int),
            epsilon=np.array(cols["epsilon"], int), v=np.array(cols["v"], float),
            m=np.array(cols["m"], int), d=np.array(cols["d"], float),
            t=np.array(cols["t"], float) if "t" in cols else None,
            ids=np.array(cols["id"], int) if "id" in cols else None,
        )
        data.validate()
    except (ValueError, DomainError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    return data


def jsonable(obj):
    """Recursively convert numpy values and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path} is not valid JSON: {exc}") from exc


def write_rows(path, columns, rows):
    """Write dict rows (or sequences) as CSV with the given header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else list(r)
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in vals])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Model and scenario codecs
# ---------------------------------------------------------------------------


def event_to_dict(ev):
    from .model import Mixture, TruncatedWeibull, Weibull

    if isinstance(ev, Weibull):
        return {"kind": "weibull", "shape": ev.shape, "scale": ev.scale}
    if isinstance(ev, TruncatedWeibull):
        return {"kind": "truncated_weibull", "shape": ev.shape, "scale": ev.scale,
                "lower": ev.lower, "upper": ev.upper}
    if isinstance(ev, Mixture):
        return {"kind": "mixture", "gamma": ev.gamma, "mu": ev.mu, "sigma2": ev.sigma2,
                "shape": ev.shape, "scale": ev.scale}
    raise TypeError(f"cannot encode {type(ev).__name__}")


def event_from_dict(d):
    from .model import Mixture, TruncatedWeibull, Weibull

    kinds = {"weibull": Weibull, "truncated_weibull": TruncatedWeibull, "mixture": Mixture}
    d = dict(d)
    kind = d.pop("kind")
    if kind not in kinds:
        raise DataFormatError(f"unknown event model kind {kind!r}")
    return kinds[kind](**d)


def recall_to_dict(r):
    from .model import LogisticRecall

    if isinstance(r, LogisticRecall):
        return {"kind": "logistic", "eta": list(r.eta)}
    return {"kind": "piecewise", "knots": r.knots.tolist(), "b": r.b.tolist()}


def recall_from_dict(d):
    from .model import LogisticRecall, PiecewiseRecall

    if d["kind"] == "logistic":
        return LogisticRecall(tuple(d["eta"]))
    if d["kind"] == "piecewise":
        return PiecewiseRecall(d["knots"], d["b"])
    raise DataFormatError(f"unknown recall model kind {d['kind']!r}")


def scenario_to_dict(sc):
    from dataclasses import asdict

    return {"n": sc.n, "seed": sc.seed, "event": event_to_dict(sc.event),
            "recall": recall_to_dict(sc.recall), "interview": asdict(sc.interview),
            "birth_month": asdict(sc.birth_month), "birth_offset": asdict(sc.birth_offset)}


def scenario_from_dict(d):
    """Scenario from JSON; missing sampling laws take their defaults."""
    from .simulate import Distribution, Scenario

    try:
        kw = {"n": int(d.get("n", 1)), "seed": int(d.get("seed", 0)),
              "event": event_from_dict(d["event"]), "recall": recall_from_dict(d["recall"])}
        for name in ("interview", "birth_month", "birth_offset"):
            if name in d:
                kw[name] = Distribution(**d[name])
        return Scenario(**kw)
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"malformed scenario: {exc}") from exc
