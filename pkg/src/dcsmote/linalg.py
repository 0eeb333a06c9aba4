"""Dense numerical kernels shared by the rest of the package.

Everything here is a pure function of its inputs. Matrices are plain
``numpy.ndarray`` objects of shape ``(rows, cols)``; constructors reject
NaN/Inf so downstream code never has to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist


class ParameterError(ValueError):
    """A numeric parameter (rank, k, lambda, ...) is out of range."""


class ShapeError(ValueError):
    """Matrix dimensions are inconsistent."""


class DegenerateInputError(ValueError):
    """Input has no usable variance or structure."""


def as_matrix(A, name="A") -> np.ndarray:
    """Return ``A`` as a finite 2-D float64 array."""
    arr = np.asarray(A, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def _fix_signs(U, Vt):
    # first nonzero entry of each right-singular vector made nonnegative
    for i in range(Vt.shape[0]):
        nz = np.flatnonzero(np.abs(Vt[i]) > 1e-12)
        if nz.size and Vt[i, nz[0]] < 0:
            Vt[i] *= -1.0
            U[:, i] *= -1.0
    return U, Vt


@dataclass(frozen=True)
class TruncatedSVDResult:
    U: np.ndarray
    singular_values: np.ndarray
    Vt: np.ndarray

    @property
    def rank(self) -> int:
        return self.singular_values.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.Vt


def truncated_svd(A, rank: int) -> TruncatedSVDResult:
    """Best rank-``rank`` approximation factors of ``A`` (Eckart-Young)."""
    A = as_matrix(A)
    if not 1 <= rank <= min(A.shape):
        raise ParameterError(f"rank must be in [1, {min(A.shape)}], got {rank}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    U, Vt = _fix_signs(U[:, :rank].copy(), Vt[:rank].copy())
    return TruncatedSVDResult(U, s[:rank].copy(), Vt)


def low_rank_approx(A, rank: int) -> np.ndarray:
    return truncated_svd(A, rank).reconstruct()


@dataclass(frozen=True)
class PcaMap:
    """Fitted PCA projection: ``scores = (A - mean) @ components``."""

    mean: np.ndarray
    components: np.ndarray  # (m_j, m_tilde), orthonormal columns
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[1]


def fit_pca(A, n_components: int) -> PcaMap:
    A = as_matrix(A)
    rows, cols = A.shape
    if not 1 <= n_components < cols:
        raise ParameterError(
            f"n_components must be in [1, {cols - 1}] for {cols} features, got {n_components}"
        )
    if rows < 2:
        raise ParameterError("PCA needs at least 2 rows")
    mean = A.mean(axis=0)
    centered = A - mean
    if not np.any(np.abs(centered) > 0):
        raise DegenerateInputError("input has zero variance")
    _, s, Vt = np.linalg.svd(centered, full_matrices=False)
    _, Vt = _fix_signs(np.zeros((1, Vt.shape[0])), Vt.copy())
    components = Vt[:n_components].T.copy()
    variance = s[:n_components] ** 2 / (rows - 1)
    return PcaMap(mean, components, variance)


def apply_pca(pca: PcaMap, A) -> np.ndarray:
    A = as_matrix(A)
    if A.shape[1] != pca.mean.shape[0]:
        raise ShapeError(f"expected {pca.mean.shape[0]} columns, got {A.shape[1]}")
    return (A - pca.mean) @ pca.components


def ridge_solve(A, B, lam: float = 1.0) -> np.ndarray:
    """W minimizing ||A W - B||_F^2 + lam ||W||_F^2."""
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    A = as_matrix(A)
    B = as_matrix(B, "B")
    if A.shape[0] != B.shape[0]:
        raise ShapeError(f"row mismatch: {A.shape[0]} vs {B.shape[0]}")
    if lam == 0:
        return np.linalg.lstsq(A, B, rcond=None)[0]
    gram = A.T @ A
    gram[np.diag_indices_from(gram)] += lam
    return np.linalg.solve(gram, A.T @ B)


def pairwise_distances(A, B) -> np.ndarray:
    """Euclidean distances between rows of ``A`` and rows of ``B``."""
    A = as_matrix(A)
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    return cdist(A, B)


def _exact_sq_dist(A, row):
    diff = A - A[row]
    return np.einsum("ij,ij->i", diff, diff)


def knn_indices(A, query_row: int, k: int) -> np.ndarray:
    """The ``k`` rows nearest to ``A[query_row]``, excluding itself.

    Ties in distance go to the lower row index.
    """
    A = as_matrix(A)
    n = A.shape[0]
    if not 1 <= k <= n - 1:
        raise ParameterError(f"k must be in [1, {n - 1}], got {k}")
    if not 0 <= query_row < n:
        raise ParameterError(f"query_row {query_row} out of range")
    d = _exact_sq_dist(A, query_row)
    order = np.lexsort((np.arange(n), d))
    order = order[order != query_row]
    return order[:k]


def knn_table(A, k: int) -> np.ndarray:
    """``knn_indices`` for every row, stacked into an ``(n, k)`` array."""
    A = as_matrix(A)
    return np.vstack([knn_indices(A, i, k) for i in range(A.shape[0])])


def min_cost_assignment(cost) -> tuple[np.ndarray, float]:
    """Permutation ``sigma`` minimizing ``sum_i cost[i, sigma[i]]``."""
    cost = as_matrix(cost, "cost")
    if cost.shape[0] != cost.shape[1]:
        raise ShapeError(f"cost must be square, got {cost.shape}")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm, float(cost[rows, cols].sum())
