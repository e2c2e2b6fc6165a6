"""Report export to plot-ready CSV or a JSON field dump.

Rate report CSV columns: ``n, sup_raw, sup_normalized, slope_so_far``, one row per
``n``, plus a ``<name>.meta.json`` sidecar with every other report field.
Suite report CSV columns: ``module, name, passed, measured, threshold, detail``.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .experiments import RateReport
from .suite import SuiteReport

RATE_COLUMNS = ("n", "sup_raw", "sup_normalized", "slope_so_far")
SUITE_COLUMNS = ("module", "name", "passed", "measured", "threshold", "detail")


class ExportError(OSError):
    pass


def _kind(report) -> str:
    if isinstance(report, RateReport):
        return "rate"
    if isinstance(report, SuiteReport):
        return "suite"
    raise TypeError(f"cannot export {type(report).__name__}")


def _cell(v):
    return "" if v is None else repr(v) if isinstance(v, float) else v


def _write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def export(report, format: str, path) -> Path:
    """Write ``report`` to ``path``; returns the path written."""
    path = Path(path)
    kind = _kind(report)
    if format == "json":
        payload = {"kind": kind, "report": report.to_dict()}
        _write_text(path, json.dumps(payload, indent=1))
        return path
    if format != "csv":
        raise ValueError(f"unknown export format {format!r}")
    if kind == "rate":
        rows = [(r.n, r.sup_raw, r.sup_normalized, r.slope_so_far) for r in report.rows]
        _write_text(path, _csv_text(RATE_COLUMNS, rows))
        meta = report.to_dict()
        meta["rows"] = [{k: v for k, v in r.items() if k not in RATE_COLUMNS} | {"n": r["n"]}
                        for r in meta["rows"]]
        _write_text(sidecar_path(path), json.dumps(meta, indent=1))
    else:
        rows = [(c.module, c.name, c.passed, c.measured, c.threshold, c.detail) for c in report.results]
        _write_text(path, _csv_text(SUITE_COLUMNS, rows))
    return path


def load_report(path):
    """Re-import a JSON export."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ExportError(f"{path}: not a report export ({exc})") from exc
    cls = {"rate": RateReport, "suite": SuiteReport}.get(payload.get("kind"))
    if cls is None:
        raise ExportError(f"{path}: unknown report kind {payload.get('kind')!r}")
    return cls.from_dict(payload["report"])
