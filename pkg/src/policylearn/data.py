"""Datasets, seeded random streams, splits, and on-disk formats.

Dataset CSV layout: a header ``x0,...,x{d-1},t,y`` followed by one row per
observation. Floats are written with ``repr`` (shortest round-trip form) and
treatments as the integers ``-1``/``1``.

Random streams: every draw in the package comes from
``rng_stream(seed, label)``, a numpy ``Philox4x32-10`` counter-based
generator whose 128-bit key is the first 16 bytes of
``sha256(f"{seed}:{label}")`` read little-endian as two uint64 words.
"""
import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np


class DataFormatError(ValueError):
    """Malformed dataset file; ``row`` is 1-based over data rows when known."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def rng_stream(seed: int, label: str = "") -> np.random.Generator:
    """Generator for the stream named ``label`` under master ``seed``."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype="<u8").astype(np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, label: str) -> int:
    """A 63-bit child seed, for handing streams to worker processes."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[16:24], "little") >> 1


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        T = np.asarray(self.T, dtype=np.float64).reshape(-1)
        Y = np.asarray(self.Y, dtype=np.float64).reshape(-1)
        if not (X.shape[0] == T.size == Y.size):
            raise ValueError(f"inconsistent lengths: X {X.shape[0]}, T {T.size}, Y {Y.size}")
        if not np.all(np.isin(T, (-1.0, 1.0))):
            raise ValueError("treatments must be -1 or +1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("non-finite values in dataset")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "T", _frozen(T))
        object.__setattr__(self, "Y", _frozen(Y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.T[idx], self.Y[idx])


SCORE_KINDS = ("IPS", "DM", "DR", "GIVEN")


@dataclass(frozen=True)
class ScoredDataset:
    X: np.ndarray
    psi: np.ndarray
    kind: str = "GIVEN"
    T: Optional[np.ndarray] = None
    Y: Optional[np.ndarray] = None
    clip_binding: int = 0  # rows whose propensity hit the clip floor

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        psi = np.asarray(self.psi, dtype=np.float64).reshape(-1)
        if psi.size != X.shape[0]:
            raise ValueError(f"psi has {psi.size} entries for {X.shape[0]} rows")
        if not np.all(np.isfinite(psi)):
            raise ValueError("non-finite scores")
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "psi", _frozen(psi))
        if self.T is not None:
            object.__setattr__(self, "T", _frozen(self.T))
        if self.Y is not None:
            object.__setattr__(self, "Y", _frozen(self.Y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "ScoredDataset":
        return ScoredDataset(
            self.X[idx], self.psi[idx], self.kind,
            None if self.T is None else self.T[idx],
            None if self.Y is None else self.Y[idx],
        )


@dataclass(frozen=True)
class SplitPlan:
    parts: Tuple[np.ndarray, ...]
    seed: int

    @property
    def train(self) -> np.ndarray:
        return self.parts[0]

    @property
    def tuning(self) -> np.ndarray:
        return self.parts[1] if len(self.parts) > 1 else np.array([], dtype=int)

    @property
    def validation(self) -> np.ndarray:
        return self.parts[2] if len(self.parts) > 2 else np.array([], dtype=int)


def split(n_or_dataset, fractions: Sequence[float], seed: int) -> SplitPlan:
    """Partition ``range(n)`` into disjoint index sets of the given fractions.

    Sizes are ``floor(f * n)``; leftover rows are left unassigned.
    """
    n = n_or_dataset if isinstance(n_or_dataset, (int, np.integer)) else n_or_dataset.n
    fractions = [float(f) for f in fractions]
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"fraction {f} outside [0, 1]")
    if sum(fractions) > 1.0 + 1e-12:
        raise ValueError(f"fractions sum to {sum(fractions)} > 1")
    perm = rng_stream(seed, "split").permutation(int(n))
    parts = []
    pos = 0
    for f in fractions:
        size = int(np.floor(f * n + 1e-9))
        parts.append(np.sort(perm[pos:pos + size]))
        pos += size
    return SplitPlan(tuple(parts), int(seed))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    header = [f"x{j}" for j in range(dataset.d)] + ["t", "y"]
    lines = [",".join(header)]
    for x, t, y in zip(dataset.X, dataset.T, dataset.Y):
        lines.append(",".join([*(_fmt(v) for v in x), str(int(t)), _fmt(y)]))
    path.write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    """Read a dataset CSV; errors cite the 1-based data row."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataFormatError("no rows")
    header = [h.strip() for h in rows[0]]
    xcols = [h for h in header if h.startswith("x")]
    expected = [f"x{j}" for j in range(len(xcols))]
    if xcols != expected or not xcols:
        raise DataFormatError(f"context columns must be {expected or ['x0', '...']}, got {xcols}")
    for col in ("t", "y"):
        if col not in header:
            raise DataFormatError(f"missing column {col!r}")
    ix = [header.index(c) for c in expected]
    it, iy = header.index("t"), header.index("y")
    body = rows[1:]
    if not body:
        raise DataFormatError("no rows")
    X = np.empty((len(body), len(ix)))
    T = np.empty(len(body))
    Y = np.empty(len(body))
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DataFormatError(f"expected {len(header)} cells, got {len(row)}", row=r)
        try:
            vals = [float(row[i]) for i in ix]
            t = float(row[it])
            y = float(row[iy])
        except ValueError as exc:
            raise DataFormatError(f"non-numeric cell ({exc})", row=r) from None
        if not (np.all(np.isfinite(vals)) and np.isfinite(y)):
            raise DataFormatError("non-finite value", row=r)
        if t not in (-1.0, 1.0):
            raise DataFormatError(f"treatment must be -1 or 1, got {row[it]!r}", row=r)
        X[r - 1], T[r - 1], Y[r - 1] = vals, t, y
    return Dataset(X, T, Y)


def write_scored_dataset(data: ScoredDataset, path) -> None:
    """Scored CSV: header ``x0,...,x{d-1},psi``."""
    header = [f"x{j}" for j in range(data.X.shape[1])] + ["psi"]
    lines = [",".join(header)]
    lines += [",".join([*(_fmt(v) for v in x), _fmt(p)]) for x, p in zip(data.X, data.psi)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_scored_dataset(path) -> ScoredDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise DataFormatError("no rows")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if header != [f"x{j}" for j in range(d)] + ["psi"] or d < 1:
        raise DataFormatError(f"scored header must be x0,...,psi; got {header}")
    values = np.empty((len(rows) - 1, d + 1))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != d + 1:
            raise DataFormatError(f"expected {d + 1} cells, got {len(row)}", row=r)
        try:
            values[r - 1] = [float(v) for v in row]
        except ValueError as exc:
            raise DataFormatError(f"non-numeric cell ({exc})", row=r) from None
    return ScoredDataset(values[:, :d], values[:, d], "GIVEN")


def dump_json(obj, path=None) -> str:
    """Canonical JSON (sorted keys, 2-space indent, trailing newline)."""
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())
