"""Fit documents (JSON) and CSV input/output.

Fit documents carry a ``kind`` tag (density, regression, classifier), the
resolved config and every array of the fit with its shape. Floats are written
with ``repr`` precision, so a reloaded fit evaluates bit-identically.
"""
from __future__ import annotations

import csv
import json
from dataclasses import fields

import numpy as np

from .config import CopulaConfig
from .density import FitState
from .regression import ClassifierFit, RegressionFit

FORMAT = "martpost-fit"
VERSION = 1
_KINDS = {"density": FitState, "regression": RegressionFit, "classifier": ClassifierFit}


class DataError(ValueError):
    """Malformed or non-finite input data."""


def _kind_of(fit) -> str:
    for kind, cls in _KINDS.items():
        if isinstance(fit, cls):
            return kind
    raise TypeError(f"cannot serialize {type(fit).__name__}")


def _encode(value):
    if isinstance(value, CopulaConfig):
        return value.to_dict()
    if isinstance(value, np.ndarray):
        return {"shape": list(value.shape), "dtype": "int" if value.dtype.kind in "iu" else "float",
                "data": value.ravel().tolist()}
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, np.generic):
        return value.item()
    return value


def fit_to_dict(fit, columns=None) -> dict:
    doc = {"format": FORMAT, "version": VERSION, "kind": _kind_of(fit), "columns": columns}
    for f in fields(fit):
        doc[f.name] = _encode(getattr(fit, f.name))
    return doc


def fit_from_dict(doc: dict):
    if doc.get("format") != FORMAT:
        raise DataError("not a fit document")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported fit document version {doc.get('version')!r}")
    cls = _KINDS.get(doc.get("kind"))
    if cls is None:
        raise DataError(f"unknown fit kind {doc.get('kind')!r}")
    kw = {}
    for f in fields(cls):
        if f.name not in doc:
            raise DataError(f"fit document lacks field {f.name!r}")
        v = doc[f.name]
        if f.name == "config":
            v = CopulaConfig.from_dict(v)
        elif isinstance(v, dict) and "shape" in v:
            v = np.asarray(v["data"], dtype=int if v["dtype"] == "int" else float).reshape(v["shape"])
        elif f.name == "perm_seeds":
            v = tuple(v)
        kw[f.name] = v
    return cls(**kw)


def save_fit(path, fit, columns=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_to_dict(fit, columns), fh)
        fh.write("\n")


def load_fit(path):
    """Returns (fit, columns)."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: invalid JSON ({err})") from None
    return fit_from_dict(doc), doc.get("columns")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a headed numeric CSV. Errors name the 1-based file line and column."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file (a header row is required)")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(not h for h in header):
        raise DataError(f"{path}: line 1: header has empty or duplicate column names")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, found {len(row)}")
        vals = []
        for name, cell in zip(header, row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {lineno}, column {name!r}: non-numeric value {cell!r}") from None
            if not np.isfinite(v):
                raise DataError(f"{path}: line {lineno}, column {name!r}: non-finite value {cell!r}")
            vals.append(v)
        out.append(vals)
    return header, np.array(out, dtype=float).reshape(len(out), len(header))


def select_columns(header, data, names) -> np.ndarray:
    missing = [c for c in names if c not in header]
    if missing:
        raise DataError(f"unknown column(s): {', '.join(missing)}")
    return data[:, [header.index(c) for c in names]]


def format_float(x) -> str:
    return "%.17g" % x


def write_csv(path, header, rows) -> None:
    """Write rows; floats at 17 significant digits, ints verbatim."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) if isinstance(v, (int, np.integer, str)) else format_float(v) for v in row) + "\n")
