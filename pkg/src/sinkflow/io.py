"""Plain-text problem files and CSV output.

Problem file::

    # n m
    mu_1 ... mu_n
    nu_1 ... nu_m
    c_11 ... c_1m
    ...
    c_n1 ... c_nm

Measure file: ``# n`` then one line of weights. Cost file: ``# n m`` then
``n`` rows. Blank lines and further ``#`` lines after the header are ignored.
Weights are renormalized only if they already sum to one within 1e-9.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .measures import CostMatrix, DiscreteMeasure, ParameterError, StructureError

WEIGHT_SUM_TOL = 1e-9


def _lines(path) -> tuple[list[int], list[list[float]]]:
    text = Path(path).read_text()
    rows = [ln.strip() for ln in text.splitlines()]
    header_idx = next((i for i, ln in enumerate(rows) if ln), None)
    if header_idx is None or not rows[header_idx].startswith("#"):
        raise StructureError(f"{path}: missing '# ...' header line")
    try:
        header = [int(tok) for tok in rows[header_idx][1:].split()]
        body = [[float(tok) for tok in ln.split()] for ln in rows[header_idx + 1:] if ln and not ln.startswith("#")]
    except ValueError as exc:
        raise StructureError(f"{path}: {exc}") from None
    return header, body


def _measure(values, what: str) -> DiscreteMeasure:
    w = np.asarray(values, dtype=np.float64)
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise ParameterError(f"{what} weights sum to {w.sum()!r}")
    return DiscreteMeasure(w / w.sum())


def read_problem(path) -> tuple[DiscreteMeasure, DiscreteMeasure, CostMatrix]:
    header, body = _lines(path)
    if len(header) != 2:
        raise StructureError(f"{path}: header must be '# n m'")
    n, m = header
    if len(body) != n + 2 or len(body[0]) != n or len(body[1]) != m or any(len(r) != m for r in body[2:]):
        raise StructureError(f"{path}: expected a {n}-vector, an {m}-vector and {n} rows of {m} costs")
    return _measure(body[0], "mu"), _measure(body[1], "nu"), CostMatrix(np.array(body[2:]))


def read_measure(path) -> DiscreteMeasure:
    header, body = _lines(path)
    flat = [v for row in body for v in row]
    if len(header) != 1 or len(flat) != header[0]:
        raise StructureError(f"{path}: expected '# n' and {header[0] if header else '?'} weights")
    return _measure(flat, str(path))


def read_cost(path) -> CostMatrix:
    header, body = _lines(path)
    if len(header) != 2 or len(body) != header[0] or any(len(r) != header[1] for r in body):
        raise StructureError(f"{path}: expected '# n m' and n rows of m costs")
    return CostMatrix(np.array(body))


def write_problem(path, mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostMatrix) -> None:
    n, m = cost.shape
    lines = [f"# {n} {m}", fmt_row(mu.weights), fmt_row(nu.weights)]
    lines += [fmt_row(r) for r in cost.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def fmt_row(values) -> str:
    return " ".join(fmt(v) for v in values)


def write_csv(path, columns, rows) -> Path:
    """Write rows with floats at 17 significant digits and ``\\n`` line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise StructureError(f"{path}: empty file")
    return rows[0], rows[1:]
