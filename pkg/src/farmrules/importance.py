"""Feature-importance measures over a fitted regression forest.

Three measures, all operating on :class:`farmrules.forest.RandomForestRegressor`:

* impurity importance — summed weighted variance reductions per feature,
  averaged over trees and normalized to sum to 1;
* permutation importance — per-feature distributions of the held-out MSE
  increase after shuffling that feature's column (the full distribution is
  kept so score distributions can be compared pairwise);
* joint path contributions — each root-to-leaf step's change in node mean
  is attributed to the set of distinct features split on so far along the
  path, telescoping exactly to the tree's prediction; sets larger than a
  cutoff are pooled into an ``"other"`` bucket.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forest import LEAF, Dataset, RandomForestRegressor, Tree, fit_forest
from .seeding import derive_seed
from .validation import check_matrix, check_vector

__all__ = [
    "OTHER_KEY",
    "gini_importance",
    "permutation_importance",
    "tree_decomposition",
    "decompose_row",
    "joint_contributions",
    "select_n_trees",
    "ImportanceReport",
]

OTHER_KEY = "other"


def gini_importance(model: RandomForestRegressor) -> np.ndarray:
    """Normalized impurity-based importance per feature (sums to 1, or is
    all zero for a forest that never split)."""
    return model.feature_importances_


def _mse(pred: np.ndarray, y: np.ndarray) -> float:
    d = pred - y
    return float(np.add.reduce(d * d) / len(y))


def permutation_importance(
    model: RandomForestRegressor,
    held_out: Dataset,
    repeats: int = 30,
    seed: int = 0,
    mode: str = "shuffle",
) -> np.ndarray:
    """Held-out MSE increase per feature, as a full score distribution.

    ``mode="shuffle"`` returns shape ``(n_features, repeats)``: one score
    per independent reshuffle of each column. ``mode="per_tree"`` returns
    shape ``(n_features, n_trees)``: one score per tree, each tree scored
    against its own single reshuffle. A feature no tree ever splits on
    leaves predictions untouched, so its scores are exactly 0.
    """
    if mode not in ("shuffle", "per_tree"):
        raise ValueError(f"mode must be 'shuffle' or 'per_tree', got {mode!r}")
    if mode == "shuffle" and repeats < 2:
        raise ValueError("repeats must be >= 2 to form a score distribution")
    X, y = held_out.X.copy(), held_out.y
    n, d = X.shape
    if mode == "shuffle":
        base = _mse(model.predict(X), y)
        out = np.zeros((d, repeats), dtype=np.float64)
        for j in range(d):
            original = X[:, j].copy()
            for r in range(repeats):
                rng = np.random.default_rng(derive_seed(seed, "perm", j, r))
                X[:, j] = original[rng.permutation(n)]
                out[j, r] = _mse(model.predict(X), y) - base
            X[:, j] = original
        return out
    n_trees = len(model.trees_)
    out = np.zeros((d, n_trees), dtype=np.float64)
    for j in range(d):
        original = X[:, j].copy()
        for t, tree in enumerate(model.trees_):
            base_t = _mse(tree.predict(X), y)
            rng = np.random.default_rng(derive_seed(seed, "perm-tree", j, t))
            X[:, j] = original[rng.permutation(n)]
            out[j, t] = _mse(tree.predict(X), y) - base_t
            X[:, j] = original
    return out


def tree_decomposition(
    tree: Tree, x: np.ndarray, max_set_size: int | None = None
) -> tuple[float, dict, float]:
    """(root mean, {feature set: summed increment}, prediction) for one row.

    Walking root to leaf, each step's change in node mean is credited to
    the frozenset of distinct feature indices split on so far (including
    the feature just split). Sets larger than ``max_set_size`` are pooled
    under :data:`OTHER_KEY`. The parts telescope: root mean plus all
    increments equals the prediction.
    """
    node = 0
    seen: set[int] = set()
    contribs: dict = {}
    root_value = float(tree.value[0])
    while tree.feature[node] != LEAF:
        f = int(tree.feature[node])
        child = int(
            tree.left[node] if x[f] <= tree.threshold[node] else tree.right[node]
        )
        seen.add(f)
        if max_set_size is not None and len(seen) > max_set_size:
            key = OTHER_KEY
        else:
            key = frozenset(seen)
        contribs[key] = contribs.get(key, 0.0) + float(
            tree.value[child] - tree.value[node]
        )
        node = child
    return root_value, contribs, float(tree.value[node])


def decompose_row(
    model: RandomForestRegressor, x, max_set_size: int | None = None
) -> list[tuple[float, dict, float]]:
    """Per-tree (root mean, contributions, prediction) triples for one row."""
    model._check_fitted()
    x = check_vector(x, "x")
    if len(x) != model.n_features_in_:
        raise ValueError(
            f"x has {len(x)} entries, forest was fit with {model.n_features_in_}"
        )
    return [tree_decomposition(tree, x, max_set_size) for tree in model.trees_]


def joint_contributions(
    model: RandomForestRegressor, rows: Dataset, max_set_size: int = 3
) -> dict:
    """Normalized joint path-contribution score per feature-name set.

    For every (row, tree) pair the per-set increments are summed along the
    path; the score of a set is the mean absolute summed contribution over
    all rows and trees, normalized so the reported scores (including the
    ``"other"`` pool) sum to 1.
    """
    model._check_fitted()
    X = check_matrix(rows.X)
    if X.shape[1] != model.n_features_in_:
        raise ValueError(
            f"rows have {X.shape[1]} features, forest was fit with {model.n_features_in_}"
        )
    if max_set_size < 1:
        raise ValueError("max_set_size must be >= 1")
    names = rows.column_names
    totals: dict = {}
    for tree in model.trees_:
        for i in range(len(X)):
            _, contribs, _ = tree_decomposition(tree, X[i], max_set_size)
            for key, v in contribs.items():
                totals[key] = totals.get(key, 0.0) + abs(v)
    count = len(X) * len(model.trees_)
    named: dict = {}
    for key, v in totals.items():
        out_key = key if key == OTHER_KEY else frozenset(names[j] for j in key)
        named[out_key] = named.get(out_key, 0.0) + v / count
    total = sum(named.values())
    if total > 0.0:
        named = {k: v / total for k, v in named.items()}
    return named


def select_n_trees(
    data: Dataset,
    candidates: list[int],
    seed: int = 0,
    split_fraction: float = 0.9,
    *,
    min_samples_leaf: int = 5,
    max_features: int | str | None = "third",
) -> tuple[int, dict[int, float]]:
    """Tree count with the best held-out MSE (ties to the smaller count),
    plus every candidate's MSE. All candidates share one train/test split
    so their errors are comparable."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    mses: dict[int, float] = {}
    for n_trees in candidates:
        model, held_out = fit_forest(
            data,
            n_trees,
            seed,
            split_fraction,
            min_samples_leaf=min_samples_leaf,
            max_features=max_features,
        )
        mses[n_trees] = _mse(model.predict(held_out.X), held_out.y)
    best = min(mses, key=lambda n: (mses[n], n))
    return best, mses


@dataclass(frozen=True)
class ImportanceReport:
    """All three importance measures for one fitted forest."""

    column_names: tuple[str, ...]
    gini: np.ndarray
    permutation: np.ndarray  # (n_features, repeats or n_trees)
    joint: dict
    n_trees: int
    seed: int

    def top_factors(self, k: int) -> tuple[str, ...]:
        """The k factors with highest impurity importance, best first;
        ties broken by column order."""
        order = sorted(
            range(len(self.column_names)), key=lambda j: (-self.gini[j], j)
        )
        return tuple(self.column_names[j] for j in order[:k])
