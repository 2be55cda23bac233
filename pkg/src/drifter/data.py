"""Time-indexed regression datasets, CSV ingestion and segmentation layouts."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from drifter._atomic import atomic_write_text


class DataError(ValueError):
    """Raised for malformed input data or invalid segment layouts."""


@dataclass(frozen=True)
class Sample:
    index: int
    covariates: np.ndarray
    response: Optional[float] = None


@dataclass(frozen=True)
class Segment:
    """Inclusive index interval ``[start, end]``."""

    start: int
    end: int

    def __post_init__(self):
        if self.start < 1 or self.end < self.start:
            raise DataError(f"invalid segment ({self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "Segment") -> bool:
        return self.start <= other.end and other.start <= self.end

    def as_tuple(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class SegmentationPlan:
    segments: tuple[Segment, ...]
    n: int

    def __post_init__(self):
        for s in self.segments:
            if s.end > self.n:
                raise DataError(f"segment {s.as_tuple()} lies outside [1, {self.n}]")

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __getitem__(self, i: int) -> Segment:
        return self.segments[i]

    def covers(self) -> bool:
        """True when the union of segments is exactly ``[1, n]``."""
        hit = np.zeros(self.n, dtype=bool)
        for s in self.segments:
            hit[s.start - 1 : s.end] = True
        return bool(hit.all())

    @property
    def nominal_length(self) -> int:
        """Length of the first segment (the layout's ``l_tr``)."""
        return len(self.segments[0]) if self.segments else 0

    def to_dict(self) -> dict:
        return {"n": self.n, "segments": [list(s.as_tuple()) for s in self.segments]}

    @classmethod
    def from_dict(cls, payload: dict) -> "SegmentationPlan":
        return cls(tuple(Segment(int(a), int(b)) for a, b in payload["segments"]), int(payload["n"]))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered samples with covariate matrix ``X`` (n x m) and optional responses ``y``.

    ``index`` holds the 1-based time indices, strictly increasing. Arrays are
    made read-only on construction so a dataset can be shared freely.
    """

    index: np.ndarray
    X: np.ndarray
    y: Optional[np.ndarray] = None
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        index = np.asarray(self.index, dtype=np.int64)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError("covariates must be a 2-d array")
        if index.shape != (X.shape[0],):
            raise DataError("index length does not match number of covariate rows")
        if index.size and (index[0] < 1 or np.any(np.diff(index) <= 0)):
            raise DataError("time indices must be positive and strictly increasing")
        y = None
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.float64).reshape(-1)
            if y.shape[0] != X.shape[0]:
                raise DataError("response length does not match number of covariate rows")
        columns = tuple(self.columns) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(columns) != X.shape[1]:
            raise DataError("column names do not match covariate dimension")
        for arr in (index, X, y):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", columns)

    @classmethod
    def from_arrays(cls, X, y=None, columns: Sequence[str] = ()) -> "Dataset":
        """Build a dataset indexed ``1..n`` in row order."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        return cls(np.arange(1, X.shape[0] + 1), X, y, tuple(columns))

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def m(self) -> int:
        return int(self.X.shape[1])

    @property
    def has_response(self) -> bool:
        return self.y is not None

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Sample]:
        for r in range(self.n):
            resp = None if self.y is None else float(self.y[r])
            yield Sample(int(self.index[r]), self.X[r], resp)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.y is None) != (other.y is None):
            return False
        return (
            np.array_equal(self.index, other.index)
            and np.array_equal(self.X, other.X)
            and (self.y is None or np.array_equal(self.y, other.y))
        )

    __hash__ = None

    def reduced(self) -> "Dataset":
        """Drop the responses (the unlabeled view used at test time)."""
        return Dataset(self.index, self.X, None, self.columns)

    def reindex(self) -> "Dataset":
        """Return a copy indexed ``1..n``."""
        return Dataset(np.arange(1, self.n + 1), self.X, self.y, self.columns)

    def rows(self, lo: int, hi: int) -> "Dataset":
        """Positional row range ``[lo, hi)``, indices kept."""
        y = None if self.y is None else self.y[lo:hi]
        return Dataset(self.index[lo:hi], self.X[lo:hi], y, self.columns)

    def with_response(self, y) -> "Dataset":
        return Dataset(self.index, self.X, y, self.columns)


def slice(d: Dataset, s: Segment) -> Dataset:  # noqa: A001 - mirrors D|s notation
    """Samples of ``d`` whose time index falls inside ``s``."""
    if d.n == 0 or s.start < d.index[0] or s.end > d.index[-1]:
        lo_idx = int(d.index[0]) if d.n else None
        hi_idx = int(d.index[-1]) if d.n else None
        raise DataError(f"segment {s.as_tuple()} out of range [{lo_idx}, {hi_idx}]")
    lo = int(np.searchsorted(d.index, s.start, side="left"))
    hi = int(np.searchsorted(d.index, s.end, side="right"))
    return d.rows(lo, hi)


def split_train_test(d: Dataset, fraction: float = 0.5) -> tuple[Dataset, Dataset]:
    """First ``floor(fraction * n)`` rows train, the rest test; both re-indexed from 1."""
    n_tr = int(np.floor(fraction * d.n))
    if n_tr < 1 or n_tr >= d.n:
        raise DataError(f"split fraction {fraction} leaves an empty part for n={d.n}")
    return d.rows(0, n_tr).reindex(), d.rows(n_tr, d.n).reindex()


def overlapping_plan(n: int, k: int) -> SegmentationPlan:
    """``2k - 1`` segments of length ``floor(n/k)`` with 50% overlap.

    Segment starts advance by ``floor(l_tr / 2)``; the last segment is
    stretched or cut to end at ``n`` so the layout covers ``[1, n]``.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if 2 * k > n:
        raise DataError(f"k={k} larger than n/2 for n={n}")
    l_tr = n // k
    stride = l_tr // 2
    count = 2 * k - 1
    segments = []
    for j in range(count):
        start = 1 + j * stride
        end = start + l_tr - 1
        if j == count - 1:
            end = n
        segments.append(Segment(start, end))
    return SegmentationPlan(tuple(segments), n)


def test_plan(n: int, l_te: int) -> SegmentationPlan:
    """Consecutive disjoint segments of length ``l_te``; a short tail is dropped."""
    if l_te < 1:
        raise DataError(f"test segment length must be >= 1, got {l_te}")
    count = n // l_te
    return SegmentationPlan(tuple(Segment(1 + j * l_te, (j + 1) * l_te) for j in range(count)), n)


test_plan.__test__ = False  # keep pytest from collecting it


def load_csv(path, response_column: Optional[str] = None) -> Dataset:
    """Read a headed, comma-separated numeric file; row order is time order."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        return _parse_csv(fh, response_column, str(path))


def read_csv_text(text: str, response_column: Optional[str] = None) -> Dataset:
    return _parse_csv(io.StringIO(text), response_column, "<string>")


def _parse_csv(fh, response_column, source) -> Dataset:
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{source}: empty file, expected a header row") from None
    if response_column is not None and response_column not in header:
        raise DataError(f"{source}: response column {response_column!r} not in header {header}")
    resp_pos = header.index(response_column) if response_column is not None else None
    cov_pos = [j for j in range(len(header)) if j != resp_pos]

    rows = []
    for r, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{source}: row {r} has {len(row)} fields, expected {len(header)}")
        values = []
        for j, cell in enumerate(row):
            try:
                values.append(float(cell))
            except ValueError:
                raise DataError(
                    f"{source}: row {r}, column {header[j]!r}: cannot parse {cell!r} as a number"
                ) from None
            if not np.isfinite(values[-1]):
                raise DataError(f"{source}: row {r}, column {header[j]!r}: missing or non-finite value")
        rows.append(values)
    if not rows:
        raise DataError(f"{source}: no data rows")

    table = np.array(rows, dtype=np.float64)
    X = table[:, cov_pos]
    y = table[:, resp_pos] if resp_pos is not None else None
    return Dataset.from_arrays(X, y, [header[j] for j in cov_pos])


def format_float(v: float) -> str:
    return repr(float(v))


def dataset_to_csv(d: Dataset, response_name: str = "y") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(d.columns) + ([response_name] if d.has_response else [])
    writer.writerow(header)
    for r in range(d.n):
        row = [format_float(v) for v in d.X[r]]
        if d.has_response:
            row.append(format_float(d.y[r]))
        writer.writerow(row)
    return buf.getvalue()


def write_csv(d: Dataset, path, response_name: str = "y") -> None:
    """Write ``d`` in the format accepted by :func:`load_csv` (shortest round-trip floats)."""
    atomic_write_text(path, dataset_to_csv(d, response_name))
