"""CSV datasets, CSV/JSON reports and run manifests.

Dataset columns: ``area_id``, ``y``, covariates, then either ``D`` or
replicate columns ``z1..zk``.  Any column that is not one of those is a
covariate.  Floats are written with ``repr`` so values round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import platform
import re
from importlib import metadata
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .data import AreaData
from .errors import DataError

_REPLICATE = re.compile(r"^z(\d+)$")
_RESERVED = {"area_id", "y", "D"}


def _read_text(source) -> str:
    if hasattr(source, "read"):
        text = source.read()
        return text.decode("utf-8") if isinstance(text, bytes) else text
    try:
        return Path(source).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{source}: not valid UTF-8") from exc


def _number(text: str, row: int, col: str) -> float:
    if text.strip() == "":
        raise DataError(f"row {row}, column {col!r}: missing value")
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {col!r}: value must be finite")
    return value


def parse_dataset(source) -> AreaData:
    """Read and validate a dataset from a path or text stream.

    Error messages cite data rows counted from 1 (the header is row 0).
    """
    rows = list(csv.reader(_io.StringIO(_read_text(source))))
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    if not rows:
        raise DataError("empty file")
    header = [h.strip() for h in rows[0]]
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise DataError(f"duplicate column names: {', '.join(dupes)}")
    for need in ("area_id", "y"):
        if need not in header:
            raise DataError(f"missing required column {need!r}")
    rep_cols = sorted((h for h in header if _REPLICATE.match(h)),
                      key=lambda h: int(_REPLICATE.match(h).group(1)))
    has_d = "D" in header
    if has_d and rep_cols:
        raise DataError(f"columns 'D' and {', '.join(repr(c) for c in rep_cols)} are both "
                        "present; supply either known variances or replicates")
    if not has_d and not rep_cols:
        raise DataError("need a 'D' column or replicate columns z1..zk")
    if len(rep_cols) == 1:
        raise DataError("at least two replicate columns are needed")
    cov_cols = [h for h in header if h not in _RESERVED and h not in rep_cols]
    body = rows[1:]
    if not body:
        raise DataError("no data rows")

    idx = {h: k for k, h in enumerate(header)}
    ids, y, X, D, Z = [], [], [], [], []
    for r, cells in enumerate(body, start=1):
        if len(cells) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, found {len(cells)}")
        area = cells[idx["area_id"]].strip()
        if not area:
            raise DataError(f"row {r}, column 'area_id': missing value")
        yi = _number(cells[idx["y"]], r, "y")
        if yi <= 0:
            raise DataError(f"row {r}, column 'y': must be > 0, got {yi!r}")
        ids.append(area)
        y.append(yi)
        X.append([1.0] + [_number(cells[idx[c]], r, c) for c in cov_cols])
        if has_d:
            di = _number(cells[idx["D"]], r, "D")
            if di <= 0:
                raise DataError(f"row {r}, column 'D': must be > 0, got {di!r}")
            D.append(di)
        else:
            zs = []
            for c in rep_cols:
                zi = _number(cells[idx[c]], r, c)
                if zi <= 0:
                    raise DataError(f"row {r}, column {c!r}: must be > 0, got {zi!r}")
                zs.append(zi)
            Z.append(zs)
    if len(set(ids)) != len(ids):
        raise DataError("area_id values must be unique")
    return AreaData(ids, np.array(y), np.array(X), D=np.array(D) if has_d else None,
                    Z=None if has_d else np.array(Z), covariate_names=cov_cols)


def fmt(value) -> str:
    """Full-precision text for CSV cells."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def write_dataset(data: AreaData, target) -> None:
    header = ["area_id", "y", *data.covariate_names]
    header += ["D"] if data.D is not None else [f"z{k + 1}" for k in range(data.Z.shape[1])]
    rows = []
    for i in range(data.m):
        row = [data.area_id[i], data.y[i], *data.X[i, 1:]]
        row += [data.D[i]] if data.D is not None else list(data.Z[i])
        rows.append(row)
    _write_rows(target, header, rows)


def _write_rows(target, header: list[str], rows: Iterable[list]) -> None:
    def emit(fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])

    if hasattr(target, "write"):
        emit(target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            emit(fh)


def write_csv(path, records: list[dict]) -> None:
    """Write dict rows; the first row's keys fix the column order."""
    if not records:
        _write_rows(path, [], [])
        return
    header = list(records[0])
    _write_rows(path, header, ([r[h] for h in header] for r in records))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, obj) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict[str, str]:
    import scipy

    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"ptfh": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def manifest(command: str, config: dict, seed: int | None, inputs: dict[str, str] | None = None,
             extra: dict | None = None) -> dict:
    """Run manifest.  Deliberately free of timings, paths of outputs and
    worker counts so that repeated runs produce identical bytes."""
    out = {"command": command, "config": config, "seed": seed, "versions": versions(),
           "inputs": {name: {"sha256": sha256_file(p), "name": Path(p).name}
                      for name, p in (inputs or {}).items()}}
    if extra:
        out.update(extra)
    return out
