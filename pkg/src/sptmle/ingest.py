"""CSV ingestion with per-column transforms for the analysis command."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .design import Dataset
from .exceptions import InputDataError

MISSING = frozenset({"", "na", "nan", "null", "."})


def _center(x: np.ndarray) -> np.ndarray:
    return x - x.mean()


def _log1p(x: np.ndarray) -> np.ndarray:
    if np.any(x <= -1):
        raise ValueError("log1p needs values above -1")
    return np.log1p(x)


TRANSFORMS = {
    "identity": lambda x: x,
    "asinh": np.arcsinh,
    "log1p": _log1p,
    "center": _center,
}


@dataclass(frozen=True)
class IngestReport:
    rows_read: int
    rows_kept: int
    dropped_rows: tuple

    @property
    def rows_dropped(self) -> int:
        return len(self.dropped_rows)

    def to_dict(self) -> dict:
        return {"rows_read": self.rows_read, "rows_kept": self.rows_kept,
                "rows_dropped": self.rows_dropped}


def load_csv(
    path,
    outcome: str,
    treatment: str,
    covariates: Sequence[str],
    transforms: Optional[Mapping[str, str]] = None,
) -> tuple[Dataset, IngestReport]:
    """Read the role columns of a headed CSV into a :class:`Dataset`.

    Rows with a missing role value are dropped and counted. Transforms are
    applied after the drops, so ``center`` uses the retained rows.
    """
    transforms = dict(transforms or {})
    roles = [outcome, treatment, *covariates]
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputDataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputDataError(f"{path} is empty") from None
        missing = [c for c in roles if c not in header]
        if missing:
            raise InputDataError(f"columns not found in header: {', '.join(missing)}")
        pos = [header.index(c) for c in roles]
        values, kept_lines, dropped = [], [], []
        n_read = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            n_read += 1
            if len(row) < len(header):
                raise InputDataError(f"expected {len(header)} fields, found {len(row)}", lineno)
            cells = [row[p].strip() for p in pos]
            if any(c.lower() in MISSING for c in cells):
                dropped.append(lineno)
                continue
            parsed = []
            for name, cell in zip(roles, cells):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise InputDataError(f"cannot parse {cell!r} as a number", lineno, name) from None
            values.append(parsed)
            kept_lines.append(lineno)
    if not values:
        raise InputDataError(f"no complete rows in {path} after dropping {len(dropped)} incomplete rows")
    M = np.asarray(values, dtype=float)
    bad = ~np.isfinite(M)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise InputDataError("non-finite value", kept_lines[i], roles[j])
    for j, name in enumerate(roles):
        tr = transforms.get(name, "identity")
        if name == treatment and tr != "identity":
            raise InputDataError("the treatment column cannot be transformed", None, name)
        if tr not in TRANSFORMS:
            raise InputDataError(f"unknown transform {tr!r}", None, name)
        try:
            M[:, j] = TRANSFORMS[tr](M[:, j])
        except ValueError as exc:
            raise InputDataError(str(exc), None, name) from None
    A = M[:, 1]
    if not np.all((A == 0) | (A == 1)):
        raise InputDataError("treatment must be coded 0/1", None, treatment)
    if A.min() == A.max():
        raise InputDataError(f"all retained rows have {treatment}={int(A[0])}; both arms are needed",
                             None, treatment)
    data = Dataset(M[:, 2:], A.astype(int), M[:, 0], tuple(covariates))
    return data, IngestReport(n_read, data.n, tuple(dropped))


def write_dataset_csv(path, data: Dataset, outcome: str = "Y", treatment: str = "A") -> None:
    """Inverse of :func:`load_csv` for untransformed columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([outcome, treatment, *data.columns])
        for y, a, row in zip(data.Y, data.A, data.W):
            w.writerow([repr(float(y)), int(a), *(repr(float(v)) for v in row)])
