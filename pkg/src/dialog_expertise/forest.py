"""Bagged Gini decision trees (random forest) for the Novice/Expert task."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

from .corpus import CLASS_ORDER, Label
from .errors import SchemaMismatchError, TrainingError
from .prep import Conditioner, Dataset, fit_conditioner

_EPS = 1e-12


def gini_impurity(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini impurity of an empty node")
    p = counts / total
    return float(1.0 - (p * p).sum())


@njit(cache=True)
def _weighted_gini(a0, a1, b0, b1):
    na = a0 + a1
    nb = b0 + b1
    ga = na - (a0 * a0 + a1 * a1) / na if na > 0 else 0.0
    gb = nb - (b0 * b0 + b1 * b1) / nb if nb > 0 else 0.0
    return (ga + gb) / (na + nb)


@njit(cache=True)
def _feature_split(X, y, idx, start, end, f, min_leaf):
    """Best threshold on column ``f`` for rows idx[start:end].

    Returns (weighted impurity, threshold, missing_left, found). Rows with
    ``x <= threshold`` go left; missing values follow the heavier side.
    """
    n = end - start
    vals = np.empty(n)
    labs = np.empty(n, dtype=np.int64)
    k = 0
    miss0 = 0.0
    miss1 = 0.0
    tot0 = 0.0
    tot1 = 0.0
    for p in range(start, end):
        r = idx[p]
        v = X[r, f]
        if np.isnan(v):
            if y[r] == 0:
                miss0 += 1.0
            else:
                miss1 += 1.0
        else:
            vals[k] = v
            labs[k] = y[r]
            if y[r] == 0:
                tot0 += 1.0
            else:
                tot1 += 1.0
            k += 1
    best = np.inf
    thr = 0.0
    mleft = True
    if k < 2:
        return best, thr, mleft, False
    order = np.argsort(vals[:k], kind="mergesort")
    l0 = 0.0
    l1 = 0.0
    for i in range(k - 1):
        if labs[order[i]] == 0:
            l0 += 1.0
        else:
            l1 += 1.0
        v = vals[order[i]]
        if not v < vals[order[i + 1]]:
            continue
        r0 = tot0 - l0
        r1 = tot1 - l1
        heavy_left = (l0 + l1) >= (r0 + r1)
        if heavy_left:
            a0, a1, b0, b1 = l0 + miss0, l1 + miss1, r0, r1
        else:
            a0, a1, b0, b1 = l0, l1, r0 + miss0, r1 + miss1
        if a0 + a1 < min_leaf or b0 + b1 < min_leaf:
            continue
        g = _weighted_gini(a0, a1, b0, b1)
        if g < best:
            best = g
            thr = v
            mleft = heavy_left
    return best, thr, mleft, best < np.inf


@njit(cache=True)
def _grow(X, y, boot, keys, mtry, max_depth, min_leaf):
    n = boot.shape[0]
    m = X.shape[1]
    cap = 2 * n + 1
    feat = np.full(cap, -1, dtype=np.int32)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    mleft = np.zeros(cap, dtype=np.bool_)
    counts = np.zeros((cap, 2), dtype=np.int64)

    idx = boot.copy()
    buf = np.empty(n, dtype=np.int64)
    s_node = np.empty(cap, dtype=np.int64)
    s_start = np.empty(cap, dtype=np.int64)
    s_end = np.empty(cap, dtype=np.int64)
    s_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    s_node[0] = 0
    s_start[0] = 0
    s_end[0] = n
    s_depth[0] = 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = s_node[sp]
        start = s_start[sp]
        end = s_end[sp]
        depth = s_depth[sp]
        c0 = 0
        c1 = 0
        for p in range(start, end):
            if y[idx[p]] == 0:
                c0 += 1
            else:
                c1 += 1
        counts[node, 0] = c0
        counts[node, 1] = c1
        size = end - start
        if c0 == 0 or c1 == 0 or size < 2 * min_leaf:
            continue
        if max_depth > 0 and depth >= max_depth:
            continue
        parent = (size - (c0 * c0 + c1 * c1) / size) / size
        order = np.argsort(keys[node])
        best_f = -1
        best_g = np.inf
        best_t = 0.0
        best_ml = True
        for j in range(m):
            # Look past the first mtry candidates only while nothing helps.
            if j >= mtry and best_f >= 0:
                break
            f = order[j]
            g, t, ml, ok = _feature_split(X, y, idx, start, end, f, min_leaf)
            if ok and g < parent - 1e-12 and g < best_g:
                best_f = f
                best_g = g
                best_t = t
                best_ml = ml
        if best_f < 0:
            continue
        # Stable in-place partition: left rows first.
        nl = 0
        nr = 0
        for p in range(start, end):
            r = idx[p]
            v = X[r, best_f]
            go_left = best_ml if np.isnan(v) else v <= best_t
            if go_left:
                idx[start + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for q in range(nr):
            idx[start + nl + q] = buf[q]
        feat[node] = best_f
        thr[node] = best_t
        mleft[node] = best_ml
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        s_node[sp] = rc
        s_start[sp] = start + nl
        s_end[sp] = end
        s_depth[sp] = depth + 1
        sp += 1
        s_node[sp] = lc
        s_start[sp] = start
        s_end[sp] = start + nl
        s_depth[sp] = depth + 1
        sp += 1
    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        mleft[:n_nodes].copy(),
        counts[:n_nodes].copy(),
    )


@njit(cache=True)
def _expert_votes(X, roots, feat, thr, left, right, mleft, vote):
    out = np.zeros(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        total = 0
        for t in range(roots.shape[0]):
            node = roots[t]
            while feat[node] >= 0:
                v = X[i, feat[node]]
                if np.isnan(v):
                    go_left = mleft[node]
                else:
                    go_left = v <= thr[node]
                node = left[node] if go_left else right[node]
            total += vote[node]
        out[i] = total
    return out


class Split(NamedTuple):
    feature: int
    threshold: float
    impurity: float
    missing_left: bool


def best_split(X, y, rows=None, candidates=None, min_samples_leaf: int = 1) -> Split | None:
    """Lowest weighted-Gini split of ``rows`` over the ``candidates`` columns.

    Rows go left when ``x <= threshold``; the threshold is the largest value
    on the left side, so only the order of values matters. Returns ``None``
    when no split lowers the node impurity.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.int64)
    idx = np.arange(len(y)) if rows is None else np.asarray(rows, dtype=np.int64)
    cand = range(X.shape[1]) if candidates is None else candidates
    counts = np.bincount(y[idx], minlength=2)
    if len(idx) < 2 or (counts == 0).any():
        return None
    parent = gini_impurity(counts)
    best = None
    for f in cand:
        g, t, ml, ok = _feature_split(X, y, idx, 0, len(idx), int(f), min_samples_leaf)
        if ok and g < parent - _EPS and (best is None or g < best.impurity):
            best = Split(int(f), float(t), float(g), bool(ml))
    return best


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 1000
    mtry: int | None = None  # None: floor(log2 M) + 1
    max_depth: int | None = None
    min_samples_leaf: int = 1
    master_seed: int = 1
    impute_missing: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")

    def resolve_mtry(self, n_features: int) -> int:
        mtry = self.mtry if self.mtry is not None else int(np.log2(n_features)) + 1
        if not 1 <= mtry <= n_features:
            raise ValueError(f"mtry={mtry} outside [1, {n_features}]")
        return mtry

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "mtry": self.mtry,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "master_seed": self.master_seed,
            "impute_missing": self.impute_missing,
        }


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    missing_left: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "missing_left": self.missing_left.astype(int).tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int32),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int32),
            np.asarray(d["right"], dtype=np.int32),
            np.asarray(d["missing_left"], dtype=np.bool_),
            np.asarray(d["counts"], dtype=np.int64).reshape(-1, 2),
        )


@dataclass(eq=False)
class RandomForestModel:
    trees: list[Tree]
    config: ForestConfig
    mtry: int
    features: tuple[str, ...]
    conditioner: Conditioner | None = None
    class_order: tuple[Label, Label] = CLASS_ORDER
    _packed: tuple | None = field(default=None, repr=False)

    kind = "forest"

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _pack(self):
        if self._packed is None:
            sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
            feat = np.concatenate([t.feature for t in self.trees]).astype(np.int64)
            thr = np.concatenate([t.threshold for t in self.trees])
            shift = lambda a, o: np.where(a >= 0, a + o, -1)
            left = np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)]).astype(np.int64)
            right = np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)]).astype(np.int64)
            mleft = np.concatenate([t.missing_left for t in self.trees])
            counts = np.concatenate([t.counts for t in self.trees])
            # Leaf ties vote for class_order[0].
            vote = (counts[:, 1] > counts[:, 0]).astype(np.int64)
            self._packed = (offsets.astype(np.int64), feat, thr, left, right, mleft, vote)
        return self._packed

    def _prepare(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != len(self.features):
            raise SchemaMismatchError(f"expected {len(self.features)} features, got {X.shape[1]}")
        if self.conditioner is not None:
            X = self.conditioner.transform(X)
        return np.ascontiguousarray(X)

    def expert_votes(self, X) -> np.ndarray:
        return _expert_votes(self._prepare(X), *self._pack())

    def score_matrix(self, X) -> np.ndarray:
        """Fraction of trees voting Expert, per row."""
        return self.expert_votes(X) / self.n_trees

    def predict_matrix(self, X) -> np.ndarray:
        votes = self.expert_votes(X)
        # Forest ties go to class_order[0].
        return (votes > self.n_trees - votes).astype(np.int64)

    def predict_dataset(self, data: Dataset) -> np.ndarray:
        _check_features(self.features, data.features)
        return self.predict_matrix(data.X)

    def score_dataset(self, data: Dataset) -> np.ndarray:
        _check_features(self.features, data.features)
        return self.score_matrix(data.X)


def _check_features(expected, got):
    if tuple(map(str, expected)) != tuple(map(str, got)):
        raise SchemaMismatchError(f"model expects features {list(map(str, expected))}, got {list(map(str, got))}")


def tree_rng(master_seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, tree_index]))


def bootstrap_indices(master_seed: int, tree_index: int, n: int) -> np.ndarray:
    """The with-replacement sample of size ``n`` used for one tree."""
    return tree_rng(master_seed, tree_index).integers(0, n, size=n)


def train_forest(train: Dataset, config: ForestConfig = ForestConfig()) -> RandomForestModel:
    n = len(train)
    if n < 2:
        raise TrainingError("forest training needs at least two rows")
    if (train.class_counts() == 0).any():
        raise TrainingError("forest training needs rows of both classes")
    mtry = config.resolve_mtry(len(train.features))
    conditioner = None
    X = train.X
    if config.impute_missing:
        conditioner = fit_conditioner(train, normalize=False)
        X = conditioner.transform(X)
    X = np.ascontiguousarray(X)
    y = np.ascontiguousarray(train.y)
    m = X.shape[1]
    max_depth = config.max_depth or 0
    trees = []
    for t in range(config.n_trees):
        rng = tree_rng(config.master_seed, t)
        boot = rng.integers(0, n, size=n)
        keys = rng.random((2 * n + 1, m))
        trees.append(Tree(*_grow(X, y, boot, keys, mtry, max_depth, config.min_samples_leaf)))
    return RandomForestModel(trees, config, mtry, tuple(train.features), conditioner)


def _vector_row(features, x) -> np.ndarray:
    from .features import FeatureVector

    if isinstance(x, FeatureVector):
        if set(map(str, x.values)) != set(map(str, features)):
            raise SchemaMismatchError("feature vector does not carry the model's feature list")
        lookup = {str(k): v for k, v in x.values.items()}
        return np.array([[np.nan if lookup[str(f)] is None else lookup[str(f)] for f in features]])
    row = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if row.shape[1] != len(features):
        raise SchemaMismatchError(f"expected {len(features)} features, got {row.shape[1]}")
    return row


def predict_forest(model: RandomForestModel, x) -> tuple[Label, dict[Label, float]]:
    """Majority vote of the trees plus the per-class vote fractions."""
    row = _vector_row(model.features, x)
    expert = int(model.expert_votes(row)[0])
    label = model.class_order[int(expert > model.n_trees - expert)]
    frac_e = expert / model.n_trees
    return label, {Label.NOVICE: 1.0 - frac_e, Label.EXPERT: frac_e}


def oob_predictions(model: RandomForestModel, train: Dataset) -> np.ndarray:
    """Out-of-bag label per training row (-1 when every tree saw the row).

    Bootstrap samples are regenerated from the per-tree seeds, so ``train``
    must be the exact dataset the model was fit on.
    """
    n = len(train)
    X = model._prepare(train.X)
    offsets, feat, thr, left, right, mleft, vote = model._pack()
    expert = np.zeros(n, dtype=np.int64)
    voters = np.zeros(n, dtype=np.int64)
    for t in range(model.n_trees):
        inbag = np.zeros(n, dtype=bool)
        inbag[bootstrap_indices(model.config.master_seed, t, n)] = True
        out = np.flatnonzero(~inbag)
        if len(out) == 0:
            continue
        roots = offsets[t : t + 1]
        expert[out] += _expert_votes(X[out], roots, feat, thr, left, right, mleft, vote)
        voters[out] += 1
    pred = np.where(expert > voters - expert, 1, 0)
    pred[voters == 0] = -1
    return pred
