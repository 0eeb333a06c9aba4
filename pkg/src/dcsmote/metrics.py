"""Recognition and confidentiality metrics plus trial aggregation."""

from __future__ import annotations

import logging
import math

import numpy as np

from .linalg import ShapeError, as_matrix, min_cost_assignment, pairwise_distances

log = logging.getLogger(__name__)


def _labels(a, b):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty label vector")
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = _labels(y_true, y_pred)
    return float(np.mean(y_true == y_pred))


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(y_pred, y_true) -> float:
    """I(pred; true) / sqrt(H(pred) H(true)), natural logs."""
    y_pred, y_true = _labels(y_pred, y_true)
    _, a = np.unique(y_pred, return_inverse=True)
    _, b = np.unique(y_true, return_inverse=True)
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    ha = _entropy(joint.sum(axis=1))
    hb = _entropy(joint.sum(axis=0))
    if ha == 0.0 or hb == 0.0:
        # identical partitions (both a single cluster) count as perfect
        return 1.0 if ha == hb == 0.0 else 0.0
    pj = joint / joint.sum()
    pa = pj.sum(axis=1, keepdims=True)
    pb = pj.sum(axis=0, keepdims=True)
    nz = pj > 0
    mi = float(np.sum(pj[nz] * np.log(pj[nz] / (pa @ pb)[nz])))
    return float(min(1.0, max(0.0, mi / math.sqrt(ha * hb))))


def dice_t(F_star, F_pred, t) -> float:
    F_star, F_pred = set(F_star), set(F_pred)
    if len(F_star) != t or len(F_pred) != t:
        raise ValueError(f"both feature sets must have exactly t={t} members")
    return len(F_star & F_pred) / t


def emd(X, X_anc, seed=0) -> float:
    """Assignment-based earth mover's distance (unnormalized total).

    With unequal row counts the larger set is subsampled to the smaller size
    using ``seed``, since a one-to-one transport needs equal counts.
    """
    X = as_matrix(X, "X")
    X_anc = as_matrix(X_anc, "X_anc")
    if X.shape[1] != X_anc.shape[1]:
        raise ShapeError(f"column mismatch: {X.shape[1]} vs {X_anc.shape[1]}")
    if X.shape[0] != X_anc.shape[0]:
        q = min(X.shape[0], X_anc.shape[0])
        rng = np.random.default_rng(seed)
        log.info("emd: subsampling %d/%d rows to %d (seed %d)",
                 X.shape[0], X_anc.shape[0], q, seed)
        if X.shape[0] > q:
            X = X[np.sort(rng.choice(X.shape[0], q, replace=False))]
        else:
            X_anc = X_anc[np.sort(rng.choice(X_anc.shape[0], q, replace=False))]
    _, total = min_cost_assignment(pairwise_distances(X, X_anc))
    return total


def amd(A, B, chunk=2048) -> float:
    """Mean over rows of ``A`` of the distance to the nearest row of ``B``."""
    A = as_matrix(A)
    B = as_matrix(B, "B")
    if B.shape[0] == 0 or A.shape[0] == 0:
        raise ValueError("amd needs non-empty inputs")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    mins = np.empty(A.shape[0])
    for s in range(0, A.shape[0], chunk):
        d = pairwise_distances(A[s:s + chunk], B)
        mins[s:s + chunk] = d.min(axis=1)
    return float(mins.mean())


def aggregate(values) -> tuple[float, float]:
    """Mean and standard error (sample std / sqrt(T); 0 for one trial)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
