"""Ridge one-hot classifier and a split-budgeted CART tree."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .linalg import ParameterError, ShapeError, as_matrix, ridge_solve


def one_hot(y, class_count) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    Y = np.zeros((y.size, class_count))
    Y[np.arange(y.size), y] = 1.0
    return Y


# ---------------------------------------------------------------------------
# ridge
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RidgeClassifier:
    """Least-squares fit to one-hot targets; scores are not probabilities."""

    weights: np.ndarray  # (features, classes)
    intercept: np.ndarray
    lam: float

    def scores(self, X) -> np.ndarray:
        X = as_matrix(X)
        if X.shape[1] != self.weights.shape[0]:
            raise ShapeError(f"expected {self.weights.shape[0]} columns, got {X.shape[1]}")
        return X @ self.weights + self.intercept

    def predict(self, X) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.scores(X), axis=1)

    def feature_importances(self) -> np.ndarray:
        imp = np.abs(self.weights).sum(axis=1)
        total = imp.sum()
        return imp / total if total > 0 else imp


def ridge_fit(X, y, class_count=None, lam=1.0) -> RidgeClassifier:
    if lam <= 0:
        raise ParameterError(f"ridge lambda must be > 0, got {lam}")
    X = as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise ShapeError("label count differs from row count")
    class_count = class_count or int(y.max()) + 1
    Y = one_hot(y, class_count)
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    W = ridge_solve(X - x_mean, Y - y_mean, lam)
    return RidgeClassifier(W, y_mean - x_mean @ W, lam)


# ---------------------------------------------------------------------------
# decision tree
# ---------------------------------------------------------------------------

@dataclass
class Node:
    counts: np.ndarray  # class counts of training rows reaching this node
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.counts))


@dataclass
class DecisionTree:
    nodes: list[Node]
    n_features: int
    class_count: int
    max_splits: int
    importances: np.ndarray = field(repr=False)

    @property
    def n_splits(self) -> int:
        return sum(not nd.is_leaf for nd in self.nodes)

    def apply(self, X) -> np.ndarray:
        """Index of the leaf each row lands in."""
        X = as_matrix(X)
        if X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} columns, got {X.shape[1]}")
        out = np.zeros(X.shape[0], dtype=np.int64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            idx, rows = stack.pop()
            nd = self.nodes[idx]
            if nd.is_leaf:
                out[rows] = idx
                continue
            go_left = X[rows, nd.feature] <= nd.threshold
            stack.append((nd.left, rows[go_left]))
            stack.append((nd.right, rows[~go_left]))
        return out

    def predict(self, X) -> np.ndarray:
        leaves = self.apply(X)
        preds = np.array([nd.prediction for nd in self.nodes])
        return preds[leaves]

    def feature_importances(self) -> np.ndarray:
        return self.importances.copy()

    def export_text(self, feature_names=None) -> str:
        names = feature_names or [f"x{j + 1}" for j in range(self.n_features)]
        lines: list[str] = []

        def walk(idx, depth):
            nd = self.nodes[idx]
            pad = "|   " * depth
            if nd.is_leaf:
                lines.append(f"{pad}class {nd.prediction}  counts={nd.counts.astype(int).tolist()}")
                return
            lines.append(f"{pad}{names[nd.feature]} <= {nd.threshold:.6g}")
            walk(nd.left, depth + 1)
            lines.append(f"{pad}{names[nd.feature]} >  {nd.threshold:.6g}")
            walk(nd.right, depth + 1)

        walk(0, 0)
        return "\n".join(lines)

    def export_dot(self, feature_names=None) -> str:
        names = feature_names or [f"x{j + 1}" for j in range(self.n_features)]
        out = ["digraph tree {", "  node [shape=box];"]
        for idx, nd in enumerate(self.nodes):
            if nd.is_leaf:
                out.append(f'  n{idx} [label="class {nd.prediction}\\n{nd.counts.astype(int).tolist()}"];')
            else:
                out.append(f'  n{idx} [label="{names[nd.feature]} <= {nd.threshold:.6g}"];')
                out.append(f'  n{idx} -> n{nd.left} [label="yes"];')
                out.append(f'  n{idx} -> n{nd.right} [label="no"];')
        out.append("}")
        return "\n".join(out)


def gini(counts) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _best_split(X, Y, rows):
    """Best (gain, feature, threshold) for a node, or None if nothing splits.

    ``gain`` is the unweighted Gini decrease of the node. Ties go to the lowest
    feature, then the smallest threshold.
    """
    n = rows.size
    counts = Y[rows].sum(axis=0)
    parent = gini(counts)
    if n < 2 or parent == 0.0:
        return None
    best = None
    for f in range(X.shape[1]):
        col = X[rows, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        valid = np.flatnonzero(xs[1:] > xs[:-1])  # split after position i
        if valid.size == 0:
            continue
        left = np.cumsum(Y[rows[order]], axis=0)[valid]
        right = counts - left
        nl = left.sum(axis=1)
        nr = right.sum(axis=1)
        gl = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
        gr = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
        gain = parent - (nl * gl + nr * gr) / n
        k = int(np.argmax(gain))  # first max = smallest threshold
        if best is None or gain[k] > best[0] + 1e-12:
            thr = 0.5 * (xs[valid[k]] + xs[valid[k] + 1])
            best = (float(gain[k]), f, float(thr))
    if best is None or best[0] <= 1e-12:
        return None
    return best


def tree_fit(X, y, max_splits=5, class_count=None) -> DecisionTree:
    """Greedy Gini CART grown best-first until ``max_splits`` internal nodes.

    The leaf whose split gives the largest weighted impurity decrease is
    expanded next, so the budget behaves like a split count, not a depth.
    """
    if max_splits < 0:
        raise ParameterError(f"max_splits must be >= 0, got {max_splits}")
    X = as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise ShapeError("label count differs from row count")
    if X.shape[0] == 0:
        raise ShapeError("cannot fit a tree on zero rows")
    class_count = class_count or int(y.max()) + 1
    Y = one_hot(y, class_count)
    n_total = X.shape[0]

    nodes = [Node(Y.sum(axis=0))]
    node_rows = {0: np.arange(n_total)}
    importances = np.zeros(X.shape[1])
    heap = []

    def push(idx):
        split = _best_split(X, Y, node_rows[idx])
        if split is not None:
            gain, f, thr = split
            weighted = gain * node_rows[idx].size / n_total
            heapq.heappush(heap, (-weighted, idx, f, thr))

    push(0)
    splits = 0
    while heap and splits < max_splits:
        neg_gain, idx, f, thr = heapq.heappop(heap)
        rows = node_rows.pop(idx)
        go_left = X[rows, f] <= thr
        nd = nodes[idx]
        nd.feature, nd.threshold = f, thr
        for child_rows in (rows[go_left], rows[~go_left]):
            nodes.append(Node(Y[child_rows].sum(axis=0)))
            node_rows[len(nodes) - 1] = child_rows
        nd.left, nd.right = len(nodes) - 2, len(nodes) - 1
        importances[f] += -neg_gain
        splits += 1
        push(nd.left)
        push(nd.right)

    total = importances.sum()
    if total > 0:
        importances = importances / total
    return DecisionTree(nodes, X.shape[1], class_count, max_splits, importances)


def top_features(importances, t) -> list[int]:
    """Indices of the ``t`` largest importances, lower index first on ties."""
    imp = np.asarray(importances)
    order = np.lexsort((np.arange(imp.size), -imp))
    return sorted(int(i) for i in order[:t])
