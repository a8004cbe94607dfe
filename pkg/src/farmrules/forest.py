"""Random-forest regression built from scratch on flat node arrays.

The estimator maps factor-presence vectors to simulation error and keeps
enough per-node metadata (split feature, threshold, node mean, weighted
impurity decrease, sample count) for all three interpretability measures
in :mod:`farmrules.importance`: impurity-based scores, permutation
scores, and path-contribution decompositions.

Numerical policy: every reduction is a numpy elementwise/cumulative op,
never a BLAS call, so fitted trees and predictions are reproducible for
a given numpy version regardless of the BLAS numpy was linked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed
from .validation import NotFittedError, check_matrix, check_same_length, check_vector

__all__ = [
    "Dataset",
    "Tree",
    "RandomForestRegressor",
    "fit_forest",
]

LEAF = -1


@dataclass(frozen=True)
class Dataset:
    """A design matrix, target vector, and column names, validated together."""

    X: np.ndarray
    y: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        X = check_matrix(self.X)
        y = check_vector(self.y)
        check_same_length(X, y, "X rows, y")
        if len(self.column_names) != X.shape[1]:
            raise ValueError(
                f"{len(self.column_names)} column names for {X.shape[1]} columns"
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.X[indices], self.y[indices], self.column_names)


@dataclass
class Tree:
    """One fitted CART regression tree over flat, index-linked node arrays.

    ``feature[i] == LEAF`` marks node ``i`` as a leaf; internal nodes send
    rows with ``x[feature] <= threshold`` left. ``value`` holds the mean
    training target of every node (not just leaves) so prediction paths can
    be decomposed step by step, and ``impurity_decrease`` holds each split's
    variance reduction weighted by its share of the tree's training sample.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity_decrease: np.ndarray
    oob_indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.nonzero(active)[0]
            at = node[idx]
            go_left = X[idx, self.feature[at]] <= self.threshold[at]
            node[idx] = np.where(go_left, self.left[at], self.right[at])
            active = self.feature[node] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


class _TreeBuilder:
    """Grows one tree depth-first; collects nodes into flat lists."""

    def __init__(self, X, y, max_features, min_samples_leaf, rng):
        self.X = X
        self.y = y
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.rng = rng
        self.n_total = len(y)
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.n_samples: list[int] = []
        self.impurity_decrease: list[float] = []

    def _new_node(self, mean: float, n: int) -> int:
        self.feature.append(LEAF)
        self.threshold.append(np.nan)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(mean)
        self.n_samples.append(n)
        self.impurity_decrease.append(0.0)
        return len(self.feature) - 1

    def build(self, indices: np.ndarray) -> None:
        # Explicit stack, left child first, so node numbering is a
        # deterministic preorder regardless of recursion limits.
        y0 = self.y[indices]
        root = self._new_node(float(np.add.reduce(y0) / len(y0)), len(indices))
        stack = [(root, indices)]
        while stack:
            node, idx = stack.pop()
            split = self._best_split(idx)
            if split is None:
                continue
            f, thr, left_idx, right_idx, decrease = split
            self.feature[node] = f
            self.threshold[node] = thr
            self.impurity_decrease[node] = decrease
            yl = self.y[left_idx]
            yr = self.y[right_idx]
            left_node = self._new_node(float(np.add.reduce(yl) / len(yl)), len(left_idx))
            right_node = self._new_node(float(np.add.reduce(yr) / len(yr)), len(right_idx))
            self.left[node] = left_node
            self.right[node] = right_node
            # Right pushed first so the left subtree is numbered next.
            stack.append((right_node, right_idx))
            stack.append((left_node, left_idx))

    def _best_split(self, idx: np.ndarray):
        n = len(idx)
        if n < 2 * self.min_samples_leaf:
            return None
        y = self.y[idx]
        total = float(np.add.reduce(y))
        total_sq = float(np.add.reduce(y * y))
        sse_node = max(total_sq - total * total / n, 0.0)
        if sse_node <= 0.0:
            return None  # pure node
        d = self.X.shape[1]
        k = min(self.max_features, d)
        candidates = np.sort(self.rng.choice(d, size=k, replace=False))
        best = None  # (sse_total, feature, threshold, split_pos, order)
        for f in candidates:
            col = self.X[idx, f]
            order = np.argsort(col, kind="stable")
            xs = col[order]
            ys = y[order]
            csum = np.cumsum(ys)
            csq = np.cumsum(ys * ys)
            lo = self.min_samples_leaf - 1
            hi = n - self.min_samples_leaf  # exclusive upper bound on split position
            if lo >= hi:
                continue
            pos = np.arange(lo, hi)
            valid = xs[pos] < xs[pos + 1]
            if not valid.any():
                continue
            pos = pos[valid]
            nl = (pos + 1).astype(np.float64)
            nr = n - nl
            sl = csum[pos]
            sql = csq[pos]
            sse = np.maximum(sql - sl * sl / nl, 0.0) + np.maximum(
                (total_sq - sql) - (total - sl) ** 2 / nr, 0.0
            )
            j = int(np.argmin(sse))  # first minimum: lowest threshold wins ties
            cand = (float(sse[j]), int(f), int(pos[j]), order)
            # Strict < keeps the lowest feature index on equal error.
            if best is None or cand[0] < best[0]:
                best = cand
        if best is None:
            return None
        sse_total, f, p, order = best
        # A zero-gain split is still taken on an impure node: interaction
        # effects (e.g. XOR-like sign structure) have no first-split gain
        # and would otherwise never be discovered.
        col = self.X[idx, f]
        xs = col[order]
        thr = float((xs[p] + xs[p + 1]) / 2.0)
        left_idx = idx[order[: p + 1]]
        right_idx = idx[order[p + 1 :]]
        decrease = (sse_node - sse_total) / self.n_total
        return f, thr, left_idx, right_idx, max(decrease, 0.0)

    def to_tree(self, oob_indices: np.ndarray) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=np.float64),
            n_samples=np.asarray(self.n_samples, dtype=np.int64),
            impurity_decrease=np.asarray(self.impurity_decrease, dtype=np.float64),
            oob_indices=oob_indices,
        )


class RandomForestRegressor:
    """Bagged CART regression with a fit/predict/get_params estimator API.

    Parameters
    ----------
    n_estimators:
        Number of trees.
    max_features:
        Features considered per split: ``"third"`` for ``max(1, d // 3)``
        (the regression default here), ``"all"`` / ``None`` for every
        feature, or an explicit positive integer.
    min_samples_leaf:
        Minimum training rows in each child of a split.
    bootstrap:
        Draw a with-replacement resample per tree when true; train every
        tree on the full sample when false.
    random_state:
        Integer seed; the single source of all fitting randomness.
    """

    def __init__(
        self,
        n_estimators: int = 520,
        *,
        max_features: int | str | None = "third",
        min_samples_leaf: int = 5,
        bootstrap: bool = True,
        random_state: int = 0,
    ):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.bootstrap = bootstrap
        self.random_state = random_state

    # -- estimator plumbing ------------------------------------------------

    _param_names = (
        "n_estimators",
        "max_features",
        "min_samples_leaf",
        "bootstrap",
        "random_state",
    )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params) -> "RandomForestRegressor":
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "trees_"):
            raise NotFittedError("forest is not fitted; call fit first")

    def _resolve_max_features(self, d: int) -> int:
        mf = self.max_features
        if mf is None or mf == "all":
            return d
        if mf == "third":
            return max(1, d // 3)
        if isinstance(mf, (int, np.integer)) and not isinstance(mf, bool) and mf >= 1:
            return min(int(mf), d)
        raise ValueError(f"invalid max_features {mf!r}")

    # -- fitting and prediction --------------------------------------------

    def fit(self, X, y) -> "RandomForestRegressor":
        X = check_matrix(X)
        y = check_vector(y)
        check_same_length(X, y, "X rows, y")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if len(y) < self.min_samples_leaf:
            raise ValueError(
                f"need at least min_samples_leaf={self.min_samples_leaf} rows, got {len(y)}"
            )
        n, d = X.shape
        max_features = self._resolve_max_features(d)
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_estimators)
        trees = []
        for seq in seeds:
            rng = np.random.default_rng(seq)
            if self.bootstrap:
                sample = rng.integers(0, n, size=n)
                oob = np.setdiff1d(np.arange(n), sample)
            else:
                sample = np.arange(n)
                oob = np.empty(0, dtype=np.int64)
            builder = _TreeBuilder(X, y, max_features, self.min_samples_leaf, rng)
            builder.build(sample)
            trees.append(builder.to_tree(oob))
        self.trees_ = trees
        self.n_features_in_ = d
        return self

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, forest was fit with {self.n_features_in_}"
            )
        acc = np.zeros(len(X), dtype=np.float64)
        for tree in self.trees_:
            acc += tree.predict(X)
        return acc / len(self.trees_)

    @property
    def feature_importances_(self) -> np.ndarray:
        """Impurity-based importance: summed weighted variance reductions
        per feature, averaged over trees, normalized to sum to 1 (all zero
        when no tree ever split)."""
        self._check_fitted()
        totals = np.zeros(self.n_features_in_, dtype=np.float64)
        for tree in self.trees_:
            split = tree.feature != LEAF
            np.add.at(totals, tree.feature[split], tree.impurity_decrease[split])
        totals /= len(self.trees_)
        s = totals.sum()
        if s > 0.0:
            totals /= s
        return totals


def train_test_split(
    data: Dataset, split_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split into (train, held_out)."""
    if not 0.0 < split_fraction < 1.0:
        raise ValueError(f"split_fraction must be in (0, 1), got {split_fraction}")
    n = data.n_rows
    n_train = int(round(n * split_fraction))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(derive_seed(seed, "split")).permutation(n)
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])


def fit_forest(
    data: Dataset,
    n_trees: int = 520,
    seed: int = 0,
    split_fraction: float = 0.9,
    *,
    min_samples_leaf: int = 5,
    max_features: int | str | None = "third",
) -> tuple[RandomForestRegressor, Dataset]:
    """Split ``data``, fit a forest on the training part, return it with
    the held-out part (used for permutation scores and tree-count picks)."""
    if data.n_rows < 2:
        raise ValueError("need at least 2 rows to hold out a test split")
    train, held_out = train_test_split(data, split_fraction, seed)
    if train.n_rows < min_samples_leaf:
        raise ValueError(
            f"training split has {train.n_rows} rows; "
            f"min_samples_leaf={min_samples_leaf} requires at least that many"
        )
    model = RandomForestRegressor(
        n_trees,
        max_features=max_features,
        min_samples_leaf=min_samples_leaf,
        bootstrap=True,
        random_state=derive_seed(seed, "forest"),
    )
    model.fit(train.X, train.y)
    return model, held_out
