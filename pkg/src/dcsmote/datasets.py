"""Datasets, normalization and the (c, d) horizontal/vertical partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import ParameterError, ShapeError, as_matrix


class IngestionError(ValueError):
    """A CSV file could not be turned into a dataset."""


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    class_count: int
    col_names: list[str] | None = None
    class_names: list[str] | None = None

    def __post_init__(self):
        X = as_matrix(self.X, "X")
        y = np.asarray(self.y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ShapeError(f"X has {X.shape[0]} rows but y has shape {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        if self.col_names is not None and len(self.col_names) != X.shape[1]:
            raise ShapeError("col_names length differs from column count")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset(self.X[rows], self.y[rows], self.class_count,
                              self.col_names, self.class_names)


# ---------------------------------------------------------------------------
# artificial data
# ---------------------------------------------------------------------------

N_FEATURES = 20
N_ESSENTIAL = 3
# essential features: tight low cluster and a wider high cluster
LOW_CENTER, LOW_SPREAD = -1.0, 0.25
HIGH_CENTER, HIGH_SPREAD = 2.5, 0.6
ESSENTIAL_CUT = 0.5 * (LOW_CENTER + HIGH_CENTER)
# noise features are U(-w, w); features 6-9 (1-based) get the wider range
NOISE_HALF_WIDTH = np.full(N_FEATURES - N_ESSENTIAL, 1.5)
NOISE_HALF_WIDTH[2:6] = 3.25


def _artificial_block(rng, n):
    high = rng.random((n, N_ESSENTIAL)) < 0.5
    essential = np.where(
        high,
        HIGH_CENTER + HIGH_SPREAD * rng.standard_normal((n, N_ESSENTIAL)),
        LOW_CENTER + LOW_SPREAD * rng.standard_normal((n, N_ESSENTIAL)),
    )
    noise = rng.uniform(-1.0, 1.0, size=(n, N_FEATURES - N_ESSENTIAL)) * NOISE_HALF_WIDTH
    X = np.hstack([essential, noise])
    y = ((essential > ESSENTIAL_CUT).sum(axis=1) >= 2).astype(np.int64)
    return X, y


def generate_artificial(n_train=1000, n_test=1000, p=100, seed=0):
    """Two-class, 20-feature problem where only features 1-3 matter.

    Each essential feature falls in a tight cluster around -1 or a wider one
    around 2.5, and the class is the majority vote over the three features
    of "which cluster". Any two essential features alone leave a quarter of
    the samples undecided, so a party holding only part of them tops out
    near 75% accuracy while a tree on all three can reach 100%. Features
    4-20 are uniform noise; four of them (6-9) have a wider range than the
    rest, which makes low-rank approximations of a party's block compete
    with the essential features.

    Returns ``(train, test, public)``; ``public`` is an unlabeled array.
    """
    for name, v in (("n_train", n_train), ("n_test", n_test), ("p", p)):
        if v < 1:
            raise ParameterError(f"{name} must be >= 1, got {v}")
    rng = np.random.default_rng(seed)
    names = [f"x{j + 1}" for j in range(N_FEATURES)]
    Xtr, ytr = _artificial_block(rng, n_train)
    Xte, yte = _artificial_block(rng, n_test)
    Xpub, _ = _artificial_block(rng, p)
    return (LabeledDataset(Xtr, ytr, 2, names), LabeledDataset(Xte, yte, 2, names), Xpub)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv(path, label_column, categorical_columns=()) -> LabeledDataset:
    """Read a headed, comma-separated UTF-8 file.

    Categorical columns become one indicator column per level (levels in
    first-appearance order, named ``col=level``); every other non-label
    column must parse as a float. Missing values are rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, [cell.strip() for cell in row]))

    categorical = list(categorical_columns)
    for col in [label_column, *categorical]:
        if col not in header:
            raise IngestionError(f"{path}: unknown column {col!r}")
    if not rows:
        raise IngestionError(f"{path}: no data rows")

    label_idx = header.index(label_column)
    class_names: list[str] = []
    levels: dict[str, list[str]] = {c: [] for c in categorical}
    for lineno, row in rows:
        for col_idx, col in enumerate(header):
            if row[col_idx] == "":
                raise IngestionError(f"{path}:{lineno}: missing value in column {col!r}")
        lab = row[label_idx]
        if lab not in class_names:
            class_names.append(lab)
        for c in categorical:
            v = row[header.index(c)]
            if v not in levels[c]:
                levels[c].append(v)

    col_names: list[str] = []
    for col in header:
        if col == label_column:
            continue
        if col in levels:
            col_names.extend(f"{col}={lv}" for lv in levels[col])
        else:
            col_names.append(col)

    X = np.zeros((len(rows), len(col_names)))
    y = np.empty(len(rows), dtype=np.int64)
    for r, (lineno, row) in enumerate(rows):
        out = 0
        for col_idx, col in enumerate(header):
            cell = row[col_idx]
            if col == label_column:
                y[r] = class_names.index(cell)
            elif col in levels:
                X[r, out + levels[col].index(cell)] = 1.0
                out += len(levels[col])
            else:
                try:
                    X[r, out] = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}:{lineno}: column {col!r} value {cell!r} is not numeric"
                    ) from None
                if not np.isfinite(X[r, out]):
                    raise IngestionError(f"{path}:{lineno}: column {col!r} is not finite")
                out += 1
    return LabeledDataset(X, y, len(class_names), col_names, class_names)


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------

ROW_SCHEMES = ("random-equal", "contiguous")
COL_SCHEMES = ("interleaved", "by-index-list")


@dataclass(frozen=True)
class PartitionPlan:
    """Which rows (``c`` groups) and columns (``d`` groups) party (i, j) holds."""

    row_groups: tuple[np.ndarray, ...]
    col_groups: tuple[np.ndarray, ...]
    n: int = field(default=0)
    m: int = field(default=0)

    def __post_init__(self):
        rows = tuple(np.asarray(g, dtype=np.int64) for g in self.row_groups)
        cols = tuple(np.asarray(g, dtype=np.int64) for g in self.col_groups)
        n = self.n or sum(g.size for g in rows)
        m = self.m or sum(g.size for g in cols)
        for kind, groups, total in (("row", rows, n), ("column", cols, m)):
            if any(g.size == 0 for g in groups):
                raise ParameterError(f"empty {kind} group")
            flat = np.concatenate(groups)
            if flat.size != total or not np.array_equal(np.sort(flat), np.arange(total)):
                raise ParameterError(f"{kind} groups must cover 0..{total - 1} exactly once")
        object.__setattr__(self, "row_groups", rows)
        object.__setattr__(self, "col_groups", cols)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)

    @property
    def c(self) -> int:
        return len(self.row_groups)

    @property
    def d(self) -> int:
        return len(self.col_groups)

    def parties(self):
        return [(i, j) for i in range(self.c) for j in range(self.d)]

    def block(self, X, i, j):
        return X[np.ix_(self.row_groups[i], self.col_groups[j])]


def make_partition(n, m, c, d, row_scheme="random-equal", col_scheme="interleaved",
                   seed=0, col_groups=None) -> PartitionPlan:
    if not 1 <= c <= n:
        raise ParameterError(f"cannot split {n} rows into {c} groups")
    if not 1 <= d <= m:
        raise ParameterError(f"cannot split {m} columns into {d} groups")
    if row_scheme == "random-equal":
        perm = np.random.default_rng(seed).permutation(n)
        rows = [np.sort(g) for g in np.array_split(perm, c)]
    elif row_scheme == "contiguous":
        rows = np.array_split(np.arange(n), c)
    else:
        raise ParameterError(f"unknown row scheme {row_scheme!r}")
    if col_scheme == "interleaved":
        cols = [np.arange(j, m, d) for j in range(d)]
    elif col_scheme == "by-index-list":
        if col_groups is None or len(col_groups) != d:
            raise ParameterError(f"by-index-list needs exactly {d} column groups")
        cols = [np.asarray(g) for g in col_groups]
    else:
        raise ParameterError(f"unknown column scheme {col_scheme!r}")
    return PartitionPlan(tuple(rows), tuple(cols), n, m)


def holdout_split(n, test_fraction, public_size, seed):
    """Disjoint (train, test, public) row indices drawn from one permutation."""
    n_test = int(round(n * test_fraction))
    if n_test < 1 or public_size < 0 or n - n_test - public_size < 2:
        raise ParameterError(
            f"cannot carve test={n_test}, public={public_size} from {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    test = np.sort(perm[:n_test])
    public = np.sort(perm[n_test:n_test + public_size])
    train = np.sort(perm[n_test + public_size:])
    return train, test, public


def kfold_split(n, folds, fold, public_size, seed):
    """Fold ``fold`` of a seeded ``folds``-way split; public rows come out of the train side."""
    if not 2 <= folds <= n:
        raise ParameterError(f"folds must be in [2, {n}], got {folds}")
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, folds)
    test = parts[fold % folds]
    rest = np.concatenate([p for k, p in enumerate(parts) if k != fold % folds])
    if rest.size - public_size < 2:
        raise ParameterError("public set leaves no training rows")
    return np.sort(rest[public_size:]), np.sort(test), np.sort(rest[:public_size])


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    center: np.ndarray
    scale: np.ndarray
    scheme: str = "zscore"


def fit_norm(A, scheme="zscore") -> NormStats:
    A = as_matrix(A)
    if scheme == "zscore":
        center = A.mean(axis=0)
        scale = A.std(axis=0)
    elif scheme == "minmax":
        center = A.min(axis=0)
        scale = A.max(axis=0) - center
    else:
        raise ParameterError(f"unknown normalization scheme {scheme!r}")
    scale = np.where(scale > 0, scale, 1.0)
    return NormStats(center, scale, scheme)


def _check_width(stats, A):
    A = as_matrix(A)
    if A.shape[1] != stats.center.shape[0]:
        raise ShapeError(f"expected {stats.center.shape[0]} columns, got {A.shape[1]}")
    return A


def apply_norm(stats: NormStats, A) -> np.ndarray:
    return (_check_width(stats, A) - stats.center) / stats.scale


def invert_norm(stats: NormStats, A) -> np.ndarray:
    return _check_width(stats, A) * stats.scale + stats.center
