"""Composite index + external datasets: data model, CSV I/O and stratification."""

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BadValue, DataError, MissingColumn

MISSING_TOKENS = {"", "NA"}


@dataclass(frozen=True)
class TreatmentCoding:
    """Map arbitrary integer treatment codes onto the three roles.

    ``index_only`` is the arm only randomized in the index trial (S=1),
    ``external_only`` the arm only available externally (S=0) and
    ``shared_arm`` the common comparator present in both sources.
    """

    index_arms: frozenset
    external_arms: frozenset
    index_only: int
    external_only: int
    shared_arm: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "index_arms", frozenset(int(a) for a in self.index_arms))
        object.__setattr__(self, "external_arms", frozenset(int(a) for a in self.external_arms))
        if self.index_only not in self.index_arms or self.index_only in self.external_arms:
            raise DataError(f"index_only arm {self.index_only} must be an index-only code")
        if self.external_only not in self.external_arms or self.external_only in self.index_arms:
            raise DataError(f"external_only arm {self.external_only} must be an external-only code")
        if self.shared_arm is not None and self.shared_arm not in self.shared_arms:
            raise DataError(f"shared arm {self.shared_arm} must be available in both sources")
        roles = [self.index_only, self.external_only]
        if self.shared_arm is not None:
            roles.append(self.shared_arm)
        if len(set(roles)) != len(roles):
            raise DataError("treatment role codes must be distinct")

    @classmethod
    def standard(cls, index_only=1, external_only=2, shared_arm=0):
        """The two-arm-per-source layout: {1, 0} in the index trial, {2, 0} externally."""
        shared = set() if shared_arm is None else {shared_arm}
        return cls(frozenset({index_only} | shared), frozenset({external_only} | shared),
                   index_only, external_only, shared_arm)

    @property
    def shared_arms(self):
        return self.index_arms & self.external_arms

    def arms(self, s):
        return self.index_arms if s == 1 else self.external_arms

    def is_legal(self, s, a):
        return s in (0, 1) and a in self.arms(s)


class Observation(NamedTuple):
    x: np.ndarray
    s: int
    a: int
    y: float


@dataclass(frozen=True, eq=False)
class CompositeDataset:
    """Rows of (X, S, A, Y) stored column-wise.

    Arrays are marked read-only; build a new dataset instead of mutating.
    """

    x: np.ndarray
    s: np.ndarray
    a: np.ndarray
    y: np.ndarray
    coding: TreatmentCoding
    covariate_names: tuple

    def __post_init__(self):
        x = np.array(self.x, dtype=float, copy=True)
        n = len(self.s)
        if x.ndim == 1:
            x = x.reshape(n, -1)
        s = np.array(self.s, dtype=int, copy=True)
        a = np.array(self.a, dtype=int, copy=True)
        y = np.array(self.y, dtype=float, copy=True)
        names = tuple(self.covariate_names)
        if x.shape != (n, len(names)) or a.shape != (n,) or y.shape != (n,):
            raise DataError("column lengths disagree with the number of rows")
        for arr in (x, s, a, y):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariate_names", names)
        _validate(self)

    @property
    def n(self):
        return len(self.s)

    @property
    def n1(self):
        return int(np.sum(self.s == 1))

    @property
    def n0(self):
        return int(np.sum(self.s == 0))

    def __len__(self):
        return self.n

    def observation(self, i):
        return Observation(self.x[i], int(self.s[i]), int(self.a[i]), float(self.y[i]))

    def __iter__(self):
        return (self.observation(i) for i in range(self.n))

    def columns(self, names):
        """Covariate submatrix for ``names`` (in the given order)."""
        idx = []
        for name in names:
            if name not in self.covariate_names:
                raise MissingColumn(f"unknown covariate {name!r}")
            idx.append(self.covariate_names.index(name))
        return self.x[:, idx]

    def take(self, rows):
        rows = np.asarray(rows, dtype=int)
        return CompositeDataset(self.x[rows], self.s[rows], self.a[rows], self.y[rows],
                                self.coding, self.covariate_names)


def _validate(ds):
    if not np.all(np.isin(ds.s, (0, 1))):
        bad = int(np.flatnonzero(~np.isin(ds.s, (0, 1)))[0])
        raise BadValue("source indicator must be 0 or 1", row=bad, column="s")
    legal = np.where(ds.s == 1, np.isin(ds.a, list(ds.coding.index_arms)),
                     np.isin(ds.a, list(ds.coding.external_arms)))
    if not np.all(legal):
        i = int(np.flatnonzero(~legal)[0])
        raise BadValue(f"treatment {ds.a[i]} is not available in source S={ds.s[i]}",
                       row=i, column="a")
    if not np.all(np.isfinite(ds.y)):
        raise BadValue("non-finite outcome", row=int(np.flatnonzero(~np.isfinite(ds.y))[0]), column="y")
    if not np.all(np.isfinite(ds.x)):
        i, j = np.argwhere(~np.isfinite(ds.x))[0]
        raise BadValue("non-finite covariate", row=int(i), column=ds.covariate_names[j])
    if ds.n1 < 1 or ds.n0 < 1:
        raise DataError(f"need rows from both sources (n1={ds.n1}, n0={ds.n0})")


def stratify(ds, s, a=None):
    """Positions of rows with S == s (and A == a when given), in original order."""
    mask = ds.s == s
    if a is not None:
        mask &= ds.a == a
    return np.flatnonzero(mask)


# ---------------------------------------------------------------------------
# CSV


def _parse_number(text, row, column, integer=False):
    text = text.strip()
    if text in MISSING_TOKENS:
        raise BadValue("missing value", row=row, column=column)
    try:
        value = float(text)
    except ValueError:
        raise BadValue(f"non-numeric value {text!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise BadValue(f"non-finite value {text!r}", row=row, column=column)
    if integer:
        if value != int(value):
            raise BadValue(f"expected an integer code, got {text!r}", row=row, column=column)
        return int(value)
    return value


def load_csv(path, coding, covariate_columns):
    """Read a composite dataset from CSV, rejecting any incomplete row.

    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    return read_csv(path, coding, covariate_columns)[0]


def read_csv(path, coding, covariate_columns, drop_incomplete=False):
    """Like :func:`load_csv` but optionally drops incomplete rows.

    With ``drop_incomplete=True`` rows holding a missing cell (empty or
    ``NA``) in any used column are removed listwise. Other malformed values
    always raise.

    Returns
    -------
    (CompositeDataset, int)
        The dataset and the number of dropped rows.
    """
    covariate_columns = list(covariate_columns)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file, header row required") from None
        needed = ["s", "a", "y"] + covariate_columns
        for col in needed:
            if col not in header:
                raise MissingColumn(f"{path}: column {col!r} not found in header")
        pos = {col: header.index(col) for col in needed}

        xs, ss, as_, ys = [], [], [], []
        dropped = 0
        for rownum, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise BadValue(f"expected {len(header)} fields, found {len(record)}", row=rownum)
            cells = {col: record[pos[col]] for col in needed}
            if drop_incomplete and any(v.strip() in MISSING_TOKENS for v in cells.values()):
                dropped += 1
                continue
            s = _parse_number(cells["s"], rownum, "s", integer=True)
            a = _parse_number(cells["a"], rownum, "a", integer=True)
            if s not in (0, 1):
                raise BadValue(f"source indicator must be 0 or 1, got {s}", row=rownum, column="s")
            if not coding.is_legal(s, a):
                raise BadValue(f"treatment {a} is not available in source S={s}", row=rownum, column="a")
            ys.append(_parse_number(cells["y"], rownum, "y"))
            xs.append([_parse_number(cells[c], rownum, c) for c in covariate_columns])
            ss.append(s)
            as_.append(a)
    x = np.array(xs, dtype=float).reshape(len(ss), len(covariate_columns))
    return CompositeDataset(x, ss, as_, ys, coding, tuple(covariate_columns)), dropped


def write_csv(ds, path):
    """Write ``ds`` using shortest round-trip float text, so reloading is exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["s", "a", "y", *ds.covariate_names])
        for i in range(ds.n):
            writer.writerow([int(ds.s[i]), int(ds.a[i]), repr(float(ds.y[i])),
                             *(repr(float(v)) for v in ds.x[i])])
