"""Bagged CART regression forest on one-hot encoded cube coordinates.

Trees are grown greedily by variance reduction. The forest regresses the
log-measure, so predictions are exponentiated back to the measure scale.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence, Union

import numpy as np

from rodd.cube import DataCube, Dimension
from rodd.errors import ValidationError
from rodd.estimators.anova import _log_measures

MaxFeatures = Union[str, int]

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: int = 60
    min_samples_split: int = 5
    min_samples_leaf: int = 1
    max_features: MaxFeatures = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValidationError("n_trees, max_depth and min_samples_leaf must be positive")
        if self.min_samples_split < 2:
            raise ValidationError("min_samples_split must be at least 2")
        if self.min_samples_leaf > self.min_samples_split:
            raise ValidationError("min_samples_leaf may not exceed min_samples_split")
        mf = self.max_features
        if isinstance(mf, bool) or not (mf in ("sqrt", "all") or (isinstance(mf, int) and mf >= 1)):
            raise ValidationError(f"max_features must be 'sqrt', 'all' or a positive int, got {mf!r}")

    @classmethod
    def paper(cls, seed: int = 0) -> ForestParams:
        """The tuned configuration of the original study (1500 deep trees)."""
        return cls(n_trees=1500, max_depth=60, min_samples_split=5, min_samples_leaf=1,
                   max_features="sqrt", bootstrap=True, seed=seed)

    def with_seed(self, seed: int) -> ForestParams:
        return replace(self, seed=seed)

    def n_candidates(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        if self.max_features == "all":
            return n_features
        return min(int(self.max_features), n_features)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ForestParams:
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True)
class RegressionTree:
    """Array-encoded binary tree; ``left == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    depth: int

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.left == -1))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.left[node] != -1)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.left[node[active]] != -1]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _is_binary(X: np.ndarray) -> bool:
    return bool(np.all((X == 0) | (X == 1)))


def _best_split_binary(Xn, yn, cands, min_leaf):
    """Best split among 0/1 candidate features (threshold 0.5)."""
    n = yn.size
    sub = Xn[:, cands]
    n1 = sub.sum(axis=0)
    s1 = yn @ sub
    n0 = n - n1
    s0 = yn.sum() - s1
    ok = (n0 >= min_leaf) & (n1 >= min_leaf)
    if not ok.any():
        return None
    # minimising child SSE is maximising sum of s^2/n over children
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(ok, s0 * s0 / n0 + s1 * s1 / n1, -np.inf)
    best = gain.max()
    f = int(cands[gain == best].min())
    return f, 0.5, float(best)


def _best_split_sorted(Xn, yn, cands, min_leaf):
    """Best split among real-valued candidate features, any threshold."""
    n = yn.size
    total = yn.sum()
    best = None
    for f in sorted(int(c) for c in cands):
        xs = Xn[:, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        cs = np.cumsum(yn[order])[:-1]
        nl = np.arange(1, n)
        valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        gain = np.where(valid, cs * cs / nl + (total - cs) ** 2 / (n - nl), -np.inf)
        i = int(np.argmax(gain))
        if best is None or gain[i] > best[2]:
            best = (f, float((xs[i] + xs[i + 1]) / 2.0), float(gain[i]))
    return best


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    params: ForestParams,
    rng: np.random.Generator,
) -> RegressionTree:
    """Grow one CART regression tree.

    At each node the features are visited in a random order and the first
    ``params.n_candidates`` non-constant ones are evaluated. Ties go to the
    lowest feature index, then the lowest threshold.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise ValidationError("build_tree needs a non-empty (rows, features) matrix and matching targets")
    n_features = X.shape[1]
    k = params.n_candidates(n_features)
    splitter = _best_split_binary if _is_binary(X) else _best_split_sorted

    feature, threshold, left, right, value, count = [], [], [], [], [], []
    max_seen = 0
    # (row indices, depth, parent slot, is_left)
    stack = [(np.arange(y.size), 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = len(value)
        yn = y[idx]
        mean = yn.mean()
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(float(mean))
        count.append(idx.size)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        max_seen = max(max_seen, depth)

        if depth >= params.max_depth or idx.size < params.min_samples_split or yn.min() == yn.max():
            continue
        Xn = X[idx]
        nonconst = np.flatnonzero(Xn.min(axis=0) != Xn.max(axis=0))
        if nonconst.size == 0:
            continue
        perm = rng.permutation(n_features)
        keep = np.isin(perm, nonconst)
        cands = perm[keep][:k]
        split = splitter(Xn, yn - mean, cands, params.min_samples_leaf)
        if split is None:
            continue
        f, thr, _ = split
        go_left = Xn[:, f] <= thr
        feature[node] = f
        threshold[node] = thr
        # right child pushed first so the left subtree is grown first
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))

    return RegressionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        n_samples=np.array(count, dtype=np.int64),
        depth=max_seen,
    )


def one_hot_layout(dims: Sequence[Dimension]) -> list[tuple[int, int]]:
    """Feature index -> (dimension position, category index)."""
    return [(p, i) for p, d in enumerate(dims) for i in range(len(d))]


def one_hot(coords: np.ndarray, dims: Sequence[Dimension]) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, len(dims))
    offsets = np.cumsum([0] + [len(d) for d in dims])[:-1]
    X = np.zeros((coords.shape[0], int(sum(len(d) for d in dims))), dtype=np.float64)
    rows = np.arange(coords.shape[0])
    for p, off in enumerate(offsets):
        X[rows, off + coords[:, p]] = 1.0
    return X


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng([seed & _SEED_MASK, tree_index])


@dataclass(frozen=True)
class Forest:
    trees: tuple[RegressionTree, ...]
    dimensions: tuple[Dimension, ...]
    params: ForestParams

    @property
    def encoding(self) -> list[tuple[int, int]]:
        return one_hot_layout(self.dimensions)

    def tree_outputs(self, coords: np.ndarray) -> np.ndarray:
        """Log-scale output of every tree, shape (n_trees, n_rows)."""
        X = one_hot(coords, self.dimensions)
        return np.stack([t.predict(X) for t in self.trees])

    def predict_log(self, coords: np.ndarray) -> np.ndarray:
        out = self.tree_outputs(coords)
        # sorting first makes the mean independent of tree order
        return np.sort(out, axis=0).sum(axis=0) / len(self.trees)

    def predict(self, coord: Sequence[int]) -> float:
        return predict_forest(self, coord)

    def predict_cells(self, cube: DataCube) -> np.ndarray:
        return np.exp(self.predict_log(cube.coords))


def _fit_one(X, y, params: ForestParams, t: int) -> RegressionTree:
    rng = tree_rng(params.seed, t)
    if params.bootstrap:
        idx = rng.integers(0, y.size, size=y.size)
        return build_tree(X[idx], y[idx], params, rng)
    return build_tree(X, y, params, rng)


def default_threads() -> int:
    env = os.environ.get("RODD_THREADS")
    if env:
        return max(1, int(env))
    return 1


def fit_forest(cube: DataCube, params: ForestParams, threads: int | None = None) -> Forest:
    """Fit ``params.n_trees`` trees to the log-measures of ``cube``.

    Each tree draws from its own stream derived from ``(seed, tree index)``,
    so the result does not depend on ``threads``.
    """
    y = _log_measures(cube)
    X = one_hot(cube.coords, cube.dimensions)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1:
        trees = [_fit_one(X, y, params, t) for t in range(params.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(lambda t: _fit_one(X, y, params, t), range(params.n_trees)))
    return Forest(tuple(trees), cube.dimensions, params)


def predict_forest(forest: Forest, coord: Sequence[int]) -> float:
    return float(np.exp(forest.predict_log(np.asarray([coord]))[0]))
