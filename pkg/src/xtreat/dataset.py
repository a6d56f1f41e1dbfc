"""Observational records ``(x, t, y)`` and their CSV representation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InvalidArgumentError, ParseError


@dataclass(frozen=True)
class CausalRecord:
    x: tuple[float, ...]
    t: int
    y: float


class CausalDataset:
    """Column-oriented collection of records with covariate dimension ``d``.

    Arrays are copied on construction and marked read-only.
    """

    def __init__(self, X, t, y):
        X = np.array(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        t = np.array(t)
        y = np.array(y, dtype=float)
        if X.ndim != 2 or t.ndim != 1 or y.ndim != 1:
            raise InvalidArgumentError("expected X of shape (n, d) and 1-d t, y")
        if not (X.shape[0] == t.shape[0] == y.shape[0]):
            raise InvalidArgumentError(
                f"length mismatch: X has {X.shape[0]} rows, t {t.shape[0]}, y {y.shape[0]}"
            )
        if t.size and not np.all((t == 0) | (t == 1)):
            raise InvalidArgumentError("treatment must be binary (0/1)")
        t = t.astype(np.int64)
        for a in (X, t, y):
            a.setflags(write=False)
        self.X, self.t, self.y = X, t, y

    @classmethod
    def from_records(cls, records) -> "CausalDataset":
        records = list(records)
        if not records:
            raise InvalidArgumentError("no records")
        d = len(records[0].x)
        if any(len(r.x) != d for r in records):
            raise InvalidArgumentError("covariate dimension differs across records")
        return cls([r.x for r in records], [r.t for r in records], [r.y for r in records])

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def __iter__(self) -> Iterator[CausalRecord]:
        for i in range(self.n):
            yield self.record(i)

    def record(self, i: int) -> CausalRecord:
        return CausalRecord(tuple(float(v) for v in self.X[i]), int(self.t[i]), float(self.y[i]))

    def subset(self, idx) -> "CausalDataset":
        idx = np.asarray(idx)
        return CausalDataset(self.X[idx], self.t[idx], self.y[idx])

    def with_outcomes(self, y) -> "CausalDataset":
        return CausalDataset(self.X, self.t, y)

    def __eq__(self, other):
        if not isinstance(other, CausalDataset):
            return NotImplemented
        return (
            self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.y, other.y, equal_nan=True)
        )

    def __repr__(self):
        return f"CausalDataset(n={self.n}, d={self.d}, treated={int(self.t.sum())})"


def _format(v: float) -> str:
    # repr round-trips doubles exactly
    return repr(float(v))


def save_csv(data: CausalDataset, path) -> None:
    path = Path(path)
    header = [f"x{j + 1}" for j in range(data.d)] + ["t", "y"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            w.writerow([_format(v) for v in data.X[i]] + [str(int(data.t[i])), _format(data.y[i])])


def load_csv(path, require_y: bool = True) -> CausalDataset:
    """Read a ``x1..xd,t,y`` CSV.

    With ``require_y=False`` the ``y`` column may be absent (covariate tables);
    outcomes are then NaN.
    """
    path = Path(path)
    try:
        fh = path.open("r", newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path} is empty", row=1) from None
        xcols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
        xcols.sort(key=lambda h: int(h[1:]))
        if not xcols:
            raise ParseError("no covariate columns x1..xd", row=1)
        expected = [f"x{j + 1}" for j in range(len(xcols))]
        if xcols != expected:
            missing = sorted(set(expected) - set(xcols), key=lambda h: int(h[1:]))
            raise ParseError("covariate columns are not contiguous", row=1, column=missing[0])
        if "t" not in header:
            raise ParseError("missing column", row=1, column="t")
        has_y = "y" in header
        if require_y and not has_y:
            raise ParseError("missing column", row=1, column="y")
        xi = [header.index(c) for c in expected]
        ti = header.index("t")
        yi = header.index("y") if has_y else None

        X, T, Y = [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=rownum)
            xs = []
            for j, c in zip(xi, expected):
                xs.append(_parse_real(row[j], rownum, c))
            tcell = row[ti].strip()
            if tcell not in ("0", "1"):
                raise ParseError(f"treatment must be 0 or 1, got {tcell!r}", row=rownum, column="t")
            X.append(xs)
            T.append(int(tcell))
            Y.append(_parse_real(row[yi], rownum, "y") if has_y else math.nan)
    if not X:
        raise ParseError(f"{path} has no data rows", row=2)
    return CausalDataset(np.array(X), np.array(T), np.array(Y))


def _parse_real(cell: str, row: int, column: str) -> float:
    try:
        return float(cell.strip())
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r}", row=row, column=column) from None


def load_values(path) -> np.ndarray:
    """Read a one-column (optionally headed) file of reals for GEV fitting."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    vals = []
    for rownum, line in enumerate(text.splitlines(), start=1):
        cell = line.split(",")[0].strip()
        if not cell:
            continue
        try:
            vals.append(float(cell))
        except ValueError:
            if rownum == 1 and not vals:
                continue  # header
            raise ParseError(f"non-numeric value {cell!r}", row=rownum) from None
    if not vals:
        raise ParseError(f"{path} contains no values")
    arr = np.array(vals)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ParseError("non-finite value", row=bad + 1)
    return arr
