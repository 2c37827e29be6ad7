"""Gradient-boosted regression trees under squared loss.

Trees use exact greedy splits: every midpoint between consecutive distinct
sorted values of every feature is scored by variance reduction. No feature or
row subsampling, so fitting is fully deterministic; ties prefer the
lowest-index feature and the earliest split position.
"""

from __future__ import annotations

import numpy as np


class TreeNode:
    """Binary regression tree node; ``x[feature] <= threshold`` goes left."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value: float, feature: int | None = None,
                 threshold: float = 0.0, left: "TreeNode | None" = None,
                 right: "TreeNode | None" = None):
        self.value = value
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"v": self.value}
        return {"f": self.feature, "t": self.threshold,
                "l": self.left.to_dict(), "r": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "v" in d:
            return cls(value=float(d["v"]))
        return cls(value=0.0, feature=int(d["f"]), threshold=float(d["t"]),
                   left=cls.from_dict(d["l"]), right=cls.from_dict(d["r"]))


def _find_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best (feature, threshold) by variance reduction, or None."""
    n, d = X.shape
    total = y.sum()
    parent_score = total * total / n
    best = None
    # relative epsilon: reject split "gains" that are pure float roundoff
    # without stalling once boosting residuals become tiny
    best_score = parent_score * (1.0 + 1e-12)
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cum = np.cumsum(y[order])
        # candidate boundaries: first index of each new distinct value
        cuts = np.nonzero(xs[1:] > xs[:-1])[0] + 1
        cuts = cuts[(cuts >= min_leaf) & (cuts <= n - min_leaf)]
        if cuts.size == 0:
            continue
        left_sum = cum[cuts - 1]
        right_sum = total - left_sum
        scores = left_sum ** 2 / cuts + right_sum ** 2 / (n - cuts)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score = scores[k]
            i = cuts[k]
            best = (j, 0.5 * (xs[i - 1] + xs[i]))
    return best


def build_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int,
               depth: int = 0) -> TreeNode:
    node_value = float(y.mean())
    if depth >= max_depth or len(y) < 2 * min_leaf:
        return TreeNode(value=node_value)
    found = _find_split(X, y, min_leaf)
    if found is None:
        return TreeNode(value=node_value)
    j, thresh = found
    mask = X[:, j] <= thresh
    return TreeNode(
        value=node_value,
        feature=j,
        threshold=float(thresh),
        left=build_tree(X[mask], y[mask], max_depth, min_leaf, depth + 1),
        right=build_tree(X[~mask], y[~mask], max_depth, min_leaf, depth + 1),
    )


def tree_predict(node: TreeNode, x: np.ndarray) -> float:
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


def tree_predict_batch(node: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X), dtype=float)
    idx = np.arange(len(X))

    def walk(nd: TreeNode, rows: np.ndarray) -> None:
        if rows.size == 0:
            return
        if nd.is_leaf:
            out[rows] = nd.value
            return
        mask = X[rows, nd.feature] <= nd.threshold
        walk(nd.left, rows[mask])
        walk(nd.right, rows[~mask])

    walk(node, idx)
    return out


def fit_gbrt(X: np.ndarray, y: np.ndarray, n_trees: int, max_depth: int,
             shrinkage: float, min_leaf: int):
    """Boost depth-limited trees on residuals.

    Returns (base_score, trees, loss_curve) where loss_curve[i] is the mean
    squared training loss after i trees (index 0 = base score only). The curve
    is non-increasing by construction.
    """
    base = float(y.mean())
    pred = np.full(len(y), base)
    trees: list[TreeNode] = []
    losses = [float(np.mean((y - pred) ** 2))]
    for _ in range(n_trees):
        residual = y - pred
        tree = build_tree(X, residual, max_depth=max_depth, min_leaf=min_leaf)
        pred = pred + shrinkage * tree_predict_batch(tree, X)
        trees.append(tree)
        losses.append(float(np.mean((y - pred) ** 2)))
    return base, trees, losses


def gbrt_predict(base: float, trees: list[TreeNode], shrinkage: float,
                 x: np.ndarray) -> float:
    acc = base
    for tree in trees:
        acc += shrinkage * tree_predict(tree, x)
    return acc


def gbrt_predict_batch(base: float, trees: list[TreeNode], shrinkage: float,
                       X: np.ndarray) -> np.ndarray:
    acc = np.full(len(X), base)
    for tree in trees:
        acc += shrinkage * tree_predict_batch(tree, X)
    return acc
