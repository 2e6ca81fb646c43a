"""CSV datasets and JSON reports.

CSV schemas
-----------
* exclusive: ``y``, ``t`` (0 = untreated, 1..T = the treatment received)
* general:   ``y``, ``x1`` .. ``xT`` (0/1 each)

plus the control, either a single ``v`` column (string label, discrete) or
``v1`` .. ``vd`` (reals). The ``x`` schema can also be read in exclusive mode,
in which case rows with more than one treatment are rejected.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .estimation import AsfEstimate, CellEstimate, Dataset, IdentificationReport

JSON_DIGITS = 12


class InputError(ValueError):
    """Bad input file; ``code`` is machine readable, ``line`` 1-based (header = 1)."""

    def __init__(self, code: str, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{code}: {message}{where}")
        self.code = code
        self.line = line


def atomic_write(path, data: str | bytes) -> None:
    """Write the whole file to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _numbered(prefix: str, header: list[str]) -> list[str]:
    pat = re.compile(rf"^{prefix}(\d+)$")
    found = sorted((int(m.group(1)), h) for h in header if (m := pat.match(h)))
    idx = [i for i, _ in found]
    if idx and idx != list(range(1, len(idx) + 1)):
        raise InputError("MISSING_COLUMN", f"columns {prefix}1..{prefix}{max(idx)} must be contiguous", 1)
    return [h for _, h in found]


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InputError("BAD_VALUE", f"column {column!r}: {text!r} is not a number", line) from None
    if not math.isfinite(value):
        raise InputError("BAD_VALUE", f"column {column!r}: {text!r} is not finite", line)
    return value


def read_csv_text(text: str, mode: str = "exclusive", treatments: int | None = None) -> Dataset:
    """Parse CSV text into a Dataset; see module docstring for the schemas.

    For the ``t`` schema the number of treatments is ``treatments`` when given,
    else the largest ``t`` observed.
    """
    if mode not in ("exclusive", "general"):
        raise InputError("BAD_CONFIG", f"mode must be exclusive or general, got {mode!r}")
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputError("EMPTY_DATASET", "file has no header row") from None
    rows = [(i + 2, r) for i, r in enumerate(reader) if any(c.strip() for c in r)]

    if "y" not in header:
        raise InputError("MISSING_COLUMN", "column 'y' is required", 1)
    xcols = _numbered("x", header)
    vcols = _numbered("v", header)
    if "t" in header and xcols:
        raise InputError("BAD_HEADER", "use either a 't' column or x1..xT columns, not both", 1)
    if "t" not in header and not xcols:
        raise InputError("MISSING_COLUMN", "need a 't' column or x1..xT columns", 1)
    if "v" in header and vcols:
        raise InputError("BAD_HEADER", "use either a 'v' column or v1..vd columns, not both", 1)
    if "v" not in header and not vcols:
        raise InputError("MISSING_COLUMN", "need a 'v' column or v1..vd columns", 1)
    if "t" in header and mode != "exclusive":
        raise InputError("BAD_HEADER", "the 't' schema describes mutually exclusive treatments", 1)
    if not rows:
        raise InputError("EMPTY_DATASET", "no data rows")

    col = {h: i for i, h in enumerate(header)}
    n = len(rows)
    y = np.empty(n)
    discrete = "v" in header
    v = np.empty(n, dtype=object) if discrete else np.empty((n, len(vcols)))
    tvals = np.empty(n, dtype=int)
    T = len(xcols) if xcols else None
    x = np.zeros((n, T), dtype=np.int8) if T else None

    for i, (line, r) in enumerate(rows):
        if len(r) != len(header):
            raise InputError("BAD_ROW", f"expected {len(header)} fields, got {len(r)}", line)
        y[i] = _parse_float(r[col["y"]].strip(), "y", line)
        if discrete:
            v[i] = r[col["v"]].strip()
            if v[i] == "":
                raise InputError("BAD_VALUE", "column 'v': empty control label", line)
        else:
            for j, c in enumerate(vcols):
                v[i, j] = _parse_float(r[col[c]].strip(), c, line)
        if xcols:
            for j, c in enumerate(xcols):
                s = r[col[c]].strip()
                if s not in ("0", "1"):
                    raise InputError("BAD_INDICATOR", f"column {c!r}: {s!r} is not 0 or 1", line)
                x[i, j] = int(s)
            if mode == "exclusive" and x[i].sum() > 1:
                raise InputError(
                    "EXCLUSIVITY_VIOLATION", "more than one treatment in exclusive mode", line
                )
        else:
            s = r[col["t"]].strip()
            if not re.fullmatch(r"\d+", s):
                raise InputError("T_OUT_OF_RANGE", f"column 't': {s!r} is not an integer >= 0", line)
            tvals[i] = int(s)
            if treatments is not None and tvals[i] > treatments:
                raise InputError("T_OUT_OF_RANGE", f"t={s} exceeds T={treatments}", line)

    if x is None:
        T = treatments if treatments is not None else int(tvals.max())
        if T < 1:
            raise InputError("T_OUT_OF_RANGE", "no treated rows and T not given")
        x = np.zeros((n, T), dtype=np.int8)
        on = tvals > 0
        x[np.flatnonzero(on), tvals[on] - 1] = 1
    return Dataset(y=y, x=x, v=v, mode=mode)


def load_csv(path, mode: str = "exclusive", treatments: int | None = None) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError("FILE_NOT_FOUND", f"no such file: {path}") from None
    except UnicodeDecodeError:
        raise InputError("BAD_ENCODING", f"{path} is not UTF-8") from None
    return read_csv_text(text, mode, treatments)


def csv_text(data: Dataset, schema: str = "x") -> str:
    """Serialize a dataset. Reals use repr so reading back is exact.

    ``schema="x"`` always works and keeps T even when some treatment never
    occurs; ``schema="t"`` needs exclusive data.
    """
    if schema not in ("x", "t"):
        raise ValueError("schema must be 'x' or 't'")
    if schema == "t" and data.mode != "exclusive":
        raise ValueError("the 't' schema needs mutually exclusive treatments")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    tcols = ["t"] if schema == "t" else [f"x{j + 1}" for j in range(data.T)]
    vcols = ["v"] if data.discrete else [f"v{j + 1}" for j in range(data.control_dim)]
    w.writerow(["y", *tcols, *vcols])
    for i in range(data.n):
        xi = data.x[i]
        tpart = [int(np.argmax(xi)) + 1 if xi.any() else 0] if schema == "t" else [int(b) for b in xi]
        vpart = [data.v[i]] if data.discrete else [repr(float(a)) for a in data.v[i]]
        w.writerow([repr(float(data.y[i])), *tpart, *vpart])
    return buf.getvalue()


def write_csv(data: Dataset, path, schema: str = "x") -> None:
    atomic_write(path, csv_text(data, schema))


# ---------------------------------------------------------------------------
# JSON


def _round(obj):
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if not math.isfinite(f):
            return None
        return float(f"{f:.{JSON_DIGITS}g}") + 0.0  # +0.0 folds -0.0
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_round(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: floats at 12 significant digits, insertion key order."""
    return json.dumps(_round(obj), indent=2, ensure_ascii=False) + "\n"


def write_json(obj, path) -> None:
    atomic_write(path, dumps(obj))


def report_to_dict(report: IdentificationReport) -> dict:
    return {
        "verdict": report.verdict,
        "mode": report.mode,
        "T": report.T,
        "overlap_delta": report.overlap_delta,
        "min_cell_size": report.min_cell_size,
        "lambda_threshold": report.lambda_threshold,
        "n_cells": len(report.cells),
        "n_failing": len(report.failing_cells),
        "cells": [
            {
                "cell_id": c.cell_id,
                "n_obs": c.n_obs,
                "gps": list(c.gps) if c.gps is not None else None,
                "gps_sum": c.gps_sum,
                "lambda_min": c.lambda_min,
                "verdict": c.verdict,
                "reason": c.reason.value if c.reason is not None else None,
            }
            for c in report.cells
        ],
    }


def _cell_estimate_dict(e: CellEstimate) -> dict:
    return {
        "cell_id": e.cell_id,
        "n_obs": e.n_obs,
        "retained": e.retained,
        "reason": e.reason.value if e.reason is not None else None,
        "lambda_min": e.lambda_min_hat,
        "gps": list(e.gps_hat.probs) if e.gps_hat is not None else None,
        "q_hat": e.q_hat,
        "moment_hat": e.moment_hat.values,
        "cross_moment_hat": e.cross_moment_hat,
    }


def estimate_to_dict(est: AsfEstimate) -> dict:
    return {
        "status": "ESTIMATED",
        "eq_mean": est.eq_mean,
        "ate": est.ate,
        "trimmed_mass": est.trimmed_mass,
        "warnings": list(est.warnings),
        "cells": [_cell_estimate_dict(e) for e in est.cell_estimates],
    }
