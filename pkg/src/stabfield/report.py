"""Report emission: JSON with sorted keys and CSV with 17 significant digits.

Nothing time- or host-dependent is written, so identical inputs give
identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["format_real", "to_jsonable", "dumps_report", "csv_text", "read_csv", "write_outputs", "write_error"]


def format_real(x: float) -> str:
    return format(float(x), ".17g")


def to_jsonable(obj):
    """Plain JSON types; non-finite reals become the strings "nan", "inf", "-inf"."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_report(report: dict) -> str:
    return json.dumps(to_jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_real(v)
    return "" if v is None else str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def read_csv(text: str) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_outputs(out_dir, command: str, report: dict, csv_body: str | None, echo: str) -> list[Path]:
    """Write ``report.json``, ``<command>.csv`` and ``config.echo`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = [out / "report.json", out / "config.echo"]
    _write(paths[0], dumps_report(report))
    _write(paths[1], echo)
    if csv_body is not None:
        paths.append(out / f"{command}.csv")
        _write(paths[-1], csv_body)
    return paths


def write_error(out_dir, command: str, code: str, message: str, exit_code: int) -> Path:
    """Error-only report; no other files are produced."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    report = {"command": command, "status": "error", "exit_code": exit_code, "error": {"code": code, "message": message}, "results": []}
    _write(path, dumps_report(report))
    return path
