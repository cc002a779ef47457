"""Dataset conditioning: balancing, imputation/normalization and CFS selection."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import CLASS_ORDER, Label
from .errors import SchemaMismatchError, TrainingError
from .features import ALL_FEATURES, FeatureId, FeatureSet, FeatureVector


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of feature values (NaN = missing) with 0/1 labels (Novice/Expert)."""

    X: np.ndarray
    y: np.ndarray
    features: tuple[str, ...]
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "features", tuple(self.features))
        ids = tuple(self.ids) or tuple(str(i) for i in range(len(y)))
        object.__setattr__(self, "ids", ids)
        if X.shape != (len(y), len(self.features)):
            raise SchemaMismatchError(
                f"matrix shape {X.shape} does not match {len(y)} rows x {len(self.features)} features"
            )
        if len(ids) != len(y):
            raise SchemaMismatchError("ids and labels differ in length")
        if len(y) and not np.isin(y, (0, 1)).all():
            raise SchemaMismatchError("labels must be 0 (Novice) or 1 (Expert)")

    @classmethod
    def from_vectors(
        cls, vectors: Iterable[FeatureVector], features: Sequence[FeatureId] | FeatureSet | None = None
    ) -> "Dataset":
        vectors = list(vectors)
        if isinstance(features, FeatureSet):
            features = features.features
        if features is None:
            features = vectors[0].features if vectors else ALL_FEATURES
        features = tuple(features)
        X = np.full((len(vectors), len(features)), np.nan)
        y = np.empty(len(vectors), dtype=np.int64)
        for i, v in enumerate(vectors):
            if v.label not in CLASS_ORDER:
                raise SchemaMismatchError(f"session {v.session_id!r} is unlabeled")
            y[i] = CLASS_ORDER.index(v.label)
            for j, f in enumerate(features):
                if f not in v.values:
                    raise SchemaMismatchError(f"session {v.session_id!r} lacks feature {f}")
                value = v.values[f]
                if value is not None:
                    X[i, j] = value
        return cls(X, y, features, tuple(v.session_id for v in vectors))

    def __len__(self):
        return len(self.y)

    @property
    def labels(self) -> list[Label]:
        return [CLASS_ORDER[i] for i in self.y]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=2)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.X[rows], self.y[rows], self.features, tuple(self.ids[i] for i in rows))

    def columns(self, names: Iterable[str]) -> np.ndarray:
        pos = {f: j for j, f in enumerate(self.features)}
        try:
            return np.array([pos[n] for n in names], dtype=np.int64)
        except KeyError as exc:
            raise SchemaMismatchError(f"dataset lacks feature {exc.args[0]}") from None

    def project(self, names: Iterable[str] | FeatureSet) -> "Dataset":
        if isinstance(names, FeatureSet):
            names = names.features
        names = tuple(names)
        if not names:
            raise ValueError("cannot project onto an empty feature list")
        cols = self.columns(names)
        return Dataset(self.X[:, cols], self.y, names, self.ids)

    def with_labels(self, y) -> "Dataset":
        return Dataset(self.X, y, self.features, self.ids)

    def with_columns(self, extra: np.ndarray, names: Sequence[str]) -> "Dataset":
        extra = np.asarray(extra, dtype=np.float64).reshape(len(self), -1)
        return Dataset(np.hstack([self.X, extra]), self.y, self.features + tuple(names), self.ids)


# -- balancing ----------------------------------------------------------------


def spread_subsample(dataset: Dataset, seed: int) -> Dataset:
    """Randomly drop rows until every class has the minority-class count.

    Survivors keep their original relative order.
    """
    counts = dataset.class_counts()
    if (counts == 0).any():
        raise TrainingError("spread subsample needs rows of both classes")
    target = counts.min()
    rng = np.random.default_rng(seed)
    keep = []
    for cls in (0, 1):
        rows = np.flatnonzero(dataset.y == cls)
        keep.append(rng.choice(rows, size=target, replace=False))
    return dataset.subset(np.sort(np.concatenate(keep)))


# -- conditioning -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Conditioner:
    """Training-split means for imputation and (optionally) min/max scaling."""

    features: tuple[str, ...]
    means: np.ndarray
    mins: np.ndarray | None = None
    maxs: np.ndarray | None = None

    @property
    def normalizes(self) -> bool:
        return self.mins is not None

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        holes = np.isnan(X)
        if holes.any():
            X[holes] = np.broadcast_to(self.means, X.shape)[holes]
        if self.normalizes:
            span = self.maxs - self.mins
            scale = np.where(span > 0, span, 1.0)
            X = np.where(span > 0, (X - self.mins) / scale, 0.0)
        return X

    def to_dict(self) -> dict:
        out = {"features": [str(f) for f in self.features], "means": self.means.tolist()}
        if self.normalizes:
            out["mins"] = self.mins.tolist()
            out["maxs"] = self.maxs.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Conditioner":
        arr = lambda key: np.asarray(data[key], dtype=np.float64) if key in data else None
        return cls(tuple(data["features"]), arr("means"), arr("mins"), arr("maxs"))


def fit_conditioner(train: Dataset, normalize: bool = True) -> Conditioner:
    X = train.X
    present = ~np.isnan(X)
    empty = np.flatnonzero(~present.any(axis=0))
    if len(empty):
        raise TrainingError(f"feature {train.features[empty[0]]} is missing in every training row")
    means = np.nanmean(X, axis=0)
    if not normalize:
        return Conditioner(train.features, means)
    # Means lie inside [min, max], so imputed values never widen the range.
    return Conditioner(train.features, means, np.nanmin(X, axis=0), np.nanmax(X, axis=0))


def apply_conditioner(conditioner: Conditioner, data: Dataset) -> Dataset:
    if tuple(data.features) != tuple(conditioner.features):
        raise SchemaMismatchError("dataset features differ from the conditioner's")
    return Dataset(conditioner.transform(data.X), data.y, data.features, data.ids)


# -- correlation-based feature selection ---------------------------------------

MISSING_BIN = -1


def equal_frequency_bins(values: np.ndarray, n_bins: int = 10) -> np.ndarray:
    """Cut points splitting the non-missing values into ``n_bins`` equal-count bins."""
    v = np.sort(values[~np.isnan(values)])
    if len(v) == 0:
        return np.empty(0)
    pos = (np.arange(1, n_bins) * len(v)) // n_bins
    cuts = np.unique(v[pos])
    # A cut at the minimum would leave the lowest bin empty.
    return cuts[cuts > v[0]]


def discretize(values: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    codes = np.searchsorted(cuts, values, side="right").astype(np.int64)
    codes[np.isnan(values)] = MISSING_BIN
    return codes


def _entropy(codes: np.ndarray) -> float:
    _, counts = np.unique(codes, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def symmetrical_uncertainty(x, y) -> float:
    """2 I(X;Y) / (H(X) + H(Y)) over discrete codes, natural logs."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    hx = _entropy(x)
    hy = _entropy(y)
    if hx == 0.0 or hy == 0.0:
        return 0.0
    _, joint = np.unique(np.stack([x, y]), axis=1, return_inverse=True)
    hxy = _entropy(joint.reshape(-1))
    mutual = hx + hy - hxy
    return float(min(1.0, max(0.0, 2.0 * mutual / (hx + hy))))


class CfsEvaluator:
    """Caches discretized columns and pairwise symmetrical uncertainties."""

    def __init__(self, dataset: Dataset, n_bins: int = 10):
        self.dataset = dataset
        self.codes = [
            discretize(dataset.X[:, j], equal_frequency_bins(dataset.X[:, j], n_bins))
            for j in range(len(dataset.features))
        ]
        self.class_su = np.array([symmetrical_uncertainty(c, dataset.y) for c in self.codes])
        self._pair: dict[tuple[int, int], float] = {}

    def pair_su(self, i: int, j: int) -> float:
        key = (i, j) if i < j else (j, i)
        if key not in self._pair:
            self._pair[key] = symmetrical_uncertainty(self.codes[key[0]], self.codes[key[1]])
        return self._pair[key]

    def merit(self, subset: Sequence[int]) -> float:
        subset = sorted(subset)
        k = len(subset)
        if k == 0:
            return 0.0
        r_cf = float(np.mean(self.class_su[subset]))
        if k == 1:
            return r_cf
        pairs = [self.pair_su(a, b) for n, a in enumerate(subset) for b in subset[n + 1 :]]
        r_ff = sum(pairs) / len(pairs)
        return k * r_cf / math.sqrt(k + k * (k - 1) * r_ff)


def cfs_merit(subset: Sequence[str], dataset: Dataset, n_bins: int = 10) -> float:
    if not subset:
        raise ValueError("CFS merit needs a nonempty subset")
    cols = dataset.columns(subset)
    return CfsEvaluator(dataset, n_bins).merit(cols.tolist())


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple[str, ...]
    merit: float
    search_trace: tuple[tuple[tuple[str, ...], float], ...] = field(default=(), repr=False)
    expanded: tuple[tuple[str, ...], ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {"selected": [str(f) for f in self.selected], "merit": self.merit}


_MERIT_TIE = 1e-12


def _feature_key(name) -> tuple:
    # Registered features sort by ordinal, ad-hoc columns by name after them.
    return (0, name.ordinal, "") if isinstance(name, FeatureId) else (1, 0, str(name))


def _better(merit, subset, best_merit, best_subset) -> bool:
    """Strict improvement, or an equal-merit subset that wins the tie rule.

    ``subset`` entries are feature keys (see ``_feature_key``) sorted ascending.
    """
    if best_subset is None or merit > best_merit + _MERIT_TIE:
        return True
    if merit < best_merit - _MERIT_TIE:
        return False
    # Equal merit: smaller subset, then lexicographic feature order.
    return (len(subset), subset) < (len(best_subset), best_subset)


def best_first_select(dataset: Dataset, termination: int = 5, n_bins: int = 10) -> SelectionResult:
    """Forward best-first search over feature subsets scored by CFS merit.

    Stops after ``termination`` consecutive node expansions that fail to
    improve the best subset found so far.
    """
    m = len(dataset.features)
    if m == 0:
        raise ValueError("dataset has no features")
    ev = CfsEvaluator(dataset, n_bins)
    keys = [_feature_key(f) for f in dataset.features]
    rank = lambda idx: tuple(sorted(keys[i] for i in idx))
    visited: dict[tuple[int, ...], float] = {(): 0.0}
    frontier: list[tuple[float, int, tuple[int, ...]]] = [(-0.0, 0, ())]
    best, best_merit = None, -math.inf
    trace, expanded = [], []
    stale = 0
    while frontier and stale < termination:
        _, _, subset = heapq.heappop(frontier)
        expanded.append(subset)
        improved = False
        for j in range(m):
            if j in subset:
                continue
            child = tuple(sorted(subset + (j,)))
            if child in visited:
                continue
            merit = ev.merit(child)
            visited[child] = merit
            trace.append((child, merit))
            heapq.heappush(frontier, (-merit, len(child), child))
            if _better(merit, rank(child), best_merit, None if best is None else rank(best)):
                best, best_merit = child, merit
                improved = True
        stale = 0 if improved else stale + 1

    names = lambda idx: tuple(dataset.features[i] for i in idx)
    return SelectionResult(
        names(best),
        best_merit,
        tuple((names(s), mt) for s, mt in trace),
        tuple(names(s) for s in expanded),
    )
