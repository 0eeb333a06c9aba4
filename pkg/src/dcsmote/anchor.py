"""Anchor-data constructors: random, TSVD-based, SMOTE-based and raw.

Every constructor owns a fresh ``numpy.random.Generator`` built from the
seed it is given, so two parties calling with the same inputs and seed get
bit-identical anchors without exchanging them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datasets import PartitionPlan, apply_norm, fit_norm, invert_norm
from .linalg import ParameterError, as_matrix, knn_table, low_rank_approx

log = logging.getLogger(__name__)

METHODS = ("random", "tsvd", "smote", "raw")


@dataclass(frozen=True)
class AnchorSpec:
    method: str
    r: int = 1000
    tsvd_rank: int = 3
    delta: float = 0.05
    k: int = 25
    alpha: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown anchor method {self.method!r}")
        if self.r < 1:
            raise ParameterError(f"r must be >= 1, got {self.r}")
        if self.method == "smote" and (self.alpha <= 0 or self.k < 1):
            raise ParameterError("smote needs alpha > 0 and k >= 1")
        if self.method == "tsvd" and (self.tsvd_rank < 1 or self.delta < 0):
            raise ParameterError("tsvd needs rank >= 1 and delta >= 0")


def random_anchor(x_min, x_max, r, seed=0) -> np.ndarray:
    """``r`` rows drawn uniformly inside per-feature ``[x_min, x_max]``."""
    lo = np.asarray(x_min, dtype=np.float64)
    hi = np.asarray(x_max, dtype=np.float64)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ParameterError("x_min and x_max must be 1-D of equal length")
    if np.any(lo > hi):
        raise ParameterError("x_min exceeds x_max for some feature")
    if r < 1:
        raise ParameterError(f"r must be >= 1, got {r}")
    rng = np.random.default_rng(seed)
    return lo + (hi - lo) * rng.random((r, lo.size))


def merged_bounds(blocks_by_col):
    """Per-feature min/max from each party's own block, merged by union.

    ``blocks_by_col[j]`` is the list of blocks (one per row-party) holding
    column group ``j``; results are concatenated in column-group order.
    """
    lo = [np.min([b.min(axis=0) for b in blocks], axis=0) for blocks in blocks_by_col]
    hi = [np.max([b.max(axis=0) for b in blocks], axis=0) for blocks in blocks_by_col]
    return np.concatenate(lo), np.concatenate(hi)


def tsvd_party_approx(block, rank, delta, rng) -> np.ndarray:
    """One party's shareable ``TSVD(block) + delta * E``.

    ``E`` is standard normal, scaled per column by the block's standard
    deviation so ``delta`` is in normalized units.
    """
    block = as_matrix(block)
    if not 1 <= rank <= min(block.shape):
        raise ParameterError(f"tsvd rank {rank} exceeds block shape {block.shape}")
    approx = low_rank_approx(block, rank)
    if delta > 0:
        scale = block.std(axis=0)
        approx = approx + delta * scale * rng.standard_normal(block.shape)
    return approx


def tsvd_anchor(X, plan: PartitionPlan, rank, delta, r, seed=0) -> np.ndarray:
    """TSVD-based anchors from the parties' perturbed low-rank blocks.

    ``X`` is only read block by block through ``plan``; each block is
    approximated independently and the pieces are reassembled in the
    original row/column positions. ``r <= n`` subsamples rows; ``r > n``
    appends random two-row convex combinations.
    """
    X = as_matrix(X)
    rng = np.random.default_rng(seed)
    approx = np.empty_like(X)
    for i, j in plan.parties():
        rows, cols = plan.row_groups[i], plan.col_groups[j]
        approx[np.ix_(rows, cols)] = tsvd_party_approx(plan.block(X, i, j), rank, delta, rng)
    return resize_rows(approx, r, rng)


def resize_rows(A, r, rng) -> np.ndarray:
    n = A.shape[0]
    if r <= n:
        return A[np.sort(rng.choice(n, size=r, replace=False))]
    extra = r - n
    pairs = np.vstack([rng.choice(n, size=2, replace=False) for _ in range(extra)])
    w = rng.random((extra, 2))
    w /= w.sum(axis=1, keepdims=True)
    combos = w[:, :1] * A[pairs[:, 0]] + w[:, 1:] * A[pairs[:, 1]]
    return np.vstack([A, combos])


def replicate_counts(p, r) -> np.ndarray:
    """How many anchors each public row emits; the first ``r % p`` get one extra."""
    counts = np.full(p, r // p, dtype=np.int64)
    counts[: r % p] += 1
    return counts


def smote_draws(n_pub, neighbors, r, alpha, rng):
    """Source row, chosen neighbor and coefficient for each of the ``r`` anchors."""
    counts = replicate_counts(n_pub, r)
    src = np.repeat(np.arange(n_pub), counts)
    k = neighbors.shape[1]
    pick = rng.integers(0, k, size=r)
    nbr = neighbors[src, pick]
    coef = rng.uniform(0.0, alpha, size=r)
    return src, nbr, coef


def smote_anchor(X_pub, r, k=25, alpha=1.5, seed=0, scheme="zscore") -> np.ndarray:
    """Extended SMOTE over the whole public set.

    Normalize, then for each public row emit ``~r/p`` points
    ``x + c (x_nb - x)`` with ``x_nb`` one of its ``k`` nearest neighbors
    (picked with replacement) and ``c ~ U(0, alpha)``; ``alpha > 1``
    extrapolates past the neighbor. Denormalize at the end.
    """
    X_pub = as_matrix(X_pub, "X_pub")
    p = X_pub.shape[0]
    if p < 2:
        raise ParameterError("smote needs at least 2 public rows")
    if r < 1:
        raise ParameterError(f"r must be >= 1, got {r}")
    if alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    if k > p - 1:
        log.warning("k=%d exceeds p-1=%d; clamping", k, p - 1)
        k = p - 1
    stats = fit_norm(X_pub, scheme)
    Z = apply_norm(stats, X_pub)
    neighbors = knn_table(Z, k)
    rng = np.random.default_rng(seed)
    src, nbr, coef = smote_draws(p, neighbors, r, alpha, rng)
    out = Z[src] + coef[:, None] * (Z[nbr] - Z[src])
    return invert_norm(stats, out)


def raw_anchor(X, r, seed=0) -> np.ndarray:
    """Uniform subsample of ``r`` raw rows, in shuffled order."""
    X = as_matrix(X)
    if not 1 <= r <= X.shape[0]:
        raise ParameterError(f"r must be in [1, {X.shape[0]}], got {r}")
    rng = np.random.default_rng(seed)
    return X[rng.permutation(X.shape[0])[:r]]


def build_anchor(spec: AnchorSpec, X=None, plan=None, X_pub=None) -> np.ndarray:
    """Dispatch on ``spec.method``; only the inputs that method needs are read."""
    if spec.method == "smote":
        if X_pub is None:
            raise ParameterError("smote anchors need public data")
        return smote_anchor(X_pub, spec.r, spec.k, spec.alpha, spec.seed)
    if X is None or plan is None:
        raise ParameterError(f"{spec.method} anchors need the partitioned data")
    if spec.method == "random":
        blocks = [[plan.block(X, i, j) for i in range(plan.c)] for j in range(plan.d)]
        lo, hi = merged_bounds(blocks)
        order = np.argsort(np.concatenate(plan.col_groups), kind="stable")
        return random_anchor(lo[order], hi[order], spec.r, spec.seed)
    if spec.method == "tsvd":
        return tsvd_anchor(X, plan, spec.tsvd_rank, spec.delta, spec.r, spec.seed)
    return raw_anchor(X, spec.r, spec.seed)
