"""Cross-validation, cross-corpus evaluation, agreement metrics and per-turn classification."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .corpus import CLASS_ORDER, Label, Session
from .errors import EmptyCorpusError, ExpertiseError, SchemaMismatchError, TrainingError
from .features import ALL, ExtractionConfig, FeatureSet, _extract, feature_set
from .forest import ForestConfig, _vector_row, train_forest
from .modelfile import model_digest
from .prep import Dataset, best_first_select, spread_subsample
from .svm import SmoConfig, train_svm

Learner = Union[ForestConfig, SmoConfig]
PLACEMENTS = (None, "outside", "inside")

LEAKAGE_NOTE = (
    "feature selection ran on the full dataset before the folds were split; "
    "held-out rows influenced which features were kept"
)


def derive_seed(seed: int, purpose: str) -> int:
    """Independent 32-bit seed for one use of a master seed."""
    digest = hashlib.sha256(f"{seed}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


# -- metrics ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """2x2 counts indexed (actual, predicted) over (Novice, Expert)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (2, 2) or (c < 0).any():
            raise ValueError("confusion matrix must be 2x2 with nonnegative counts")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_predictions(cls, actual, predicted) -> "ConfusionMatrix":
        actual = np.asarray(actual, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        c = np.zeros((2, 2), dtype=np.int64)
        np.add.at(c, (actual, predicted), 1)
        return cls(c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def _require_total(cm: ConfusionMatrix) -> int:
    total = cm.total
    if total == 0:
        raise ValueError("metrics need a nonempty confusion matrix")
    return total


def accuracy(cm: ConfusionMatrix) -> float:
    total = _require_total(cm)
    return float(np.trace(cm.counts) / total)


def kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa; with p_e = 1 it is 1 for perfect agreement and 0 otherwise.

    Evaluated as (N*trace - sum r*c) / (N^2 - sum r*c) in integers, so the
    only rounding is the final division.
    """
    total = _require_total(cm)
    c = cm.counts.tolist()
    agree = c[0][0] + c[1][1]
    chance = sum((c[i][0] + c[i][1]) * (c[0][i] + c[1][i]) for i in range(2))
    if chance == total * total:
        return 1.0 if agree == total else 0.0
    return (total * agree - chance) / (total * total - chance)


def chance_accuracy(labels) -> float:
    """Accuracy of always predicting the majority class."""
    y = np.asarray([CLASS_ORDER.index(v) if isinstance(v, Label) else int(v) for v in labels])
    if len(y) == 0:
        raise ValueError("chance accuracy needs at least one label")
    return float(np.bincount(y, minlength=2).max() / len(y))


# -- folds -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    k: int

    def __post_init__(self):
        f = np.asarray(self.fold_of, dtype=np.int64)
        if len(f) and (f.min() < 0 or f.max() >= self.k):
            raise ValueError("fold index outside [0, k)")
        object.__setattr__(self, "fold_of", f)

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def stratified_folds(labels, k: int = 10, seed: int = 1) -> FoldAssignment:
    """Shuffle each class, then deal its rows round-robin across the folds.

    The dealing position carries over from one class to the next so that
    fold sizes stay within one of each other overall.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    y = np.asarray([CLASS_ORDER.index(v) if isinstance(v, Label) else int(v) for v in labels])
    counts = np.bincount(y, minlength=2)
    for cls, cnt in enumerate(counts):
        if cnt < k:
            raise ValueError(
                f"class {CLASS_ORDER[cls].value} has {cnt} rows, fewer than k={k}; use k <= {max(2, counts.min())}"
            )
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    start = 0
    for cls in (0, 1):
        rows = rng.permutation(np.flatnonzero(y == cls))
        fold_of[rows] = (start + np.arange(len(rows))) % k
        start = (start + len(rows)) % k
    return FoldAssignment(fold_of, k)


def leave_one_out(n: int) -> FoldAssignment:
    return FoldAssignment(np.arange(n), n)


# -- learners --------------------------------------------------------------------


def fit_learner(learner: Learner, train: Dataset):
    if isinstance(learner, ForestConfig):
        return train_forest(train, learner)
    if isinstance(learner, SmoConfig):
        return train_svm(train, learner)
    raise TypeError(f"unknown learner config {type(learner).__name__}")


def learner_name(learner: Learner) -> str:
    return "RandomForest" if isinstance(learner, ForestConfig) else "SVM"


def _resolve_set(fs: FeatureSet | str) -> FeatureSet:
    return feature_set(fs) if isinstance(fs, str) else fs


def _wants_search(fs: FeatureSet) -> bool:
    # The bare "Selected" name means: search a subset of All.
    return fs.name == "Selected" and not fs.features


# -- reports ---------------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    matrix: ConfusionMatrix
    accuracy: float
    kappa: float
    test_rows: tuple[int, ...]
    model_digest: str
    features: tuple[str, ...]


@dataclass
class EvalReport:
    feature_set: str
    learner: str
    accuracy: float
    kappa: float
    chance_accuracy: float
    aggregate_matrix: ConfusionMatrix
    per_fold: list[FoldResult] = field(default_factory=list)
    predictions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    actual: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ids: tuple[str, ...] = ()
    selected: tuple[str, ...] | None = None
    notes: tuple[str, ...] = ()
    config_echo: dict = field(default_factory=dict)

    def summary_row(self) -> dict:
        return {
            "feature_set": self.feature_set,
            "learner": self.learner,
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "chance": self.chance_accuracy,
        }

    def to_dict(self) -> dict:
        return {
            **self.summary_row(),
            "aggregate_matrix": self.aggregate_matrix.to_list(),
            "per_fold": [
                {
                    "fold": f.fold,
                    "matrix": f.matrix.to_list(),
                    "accuracy": f.accuracy,
                    "kappa": f.kappa,
                    "model_digest": f.model_digest,
                    "features": [str(x) for x in f.features],
                }
                for f in self.per_fold
            ],
            "selected": None if self.selected is None else [str(x) for x in self.selected],
            "notes": list(self.notes),
            "config": self.config_echo,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        m = self.aggregate_matrix.counts
        lines = [
            f"feature set : {self.feature_set}",
            f"learner     : {self.learner}",
            f"accuracy    : {self.accuracy:.3f}",
            f"kappa       : {self.kappa:.3f}",
            f"chance      : {self.chance_accuracy:.3f}",
            "confusion (rows actual, cols predicted; Novice, Expert):",
            f"  {m[0, 0]:5d} {m[0, 1]:5d}",
            f"  {m[1, 0]:5d} {m[1, 1]:5d}",
        ]
        if self.selected is not None:
            lines.append("selected    : " + ", ".join(map(str, self.selected)))
        lines += [f"note        : {n}" for n in self.notes]
        lines += [f"config      : {k}={v}" for k, v in sorted(self.config_echo.items())]
        return "\n".join(lines)


def format_summary_table(reports: Sequence[EvalReport]) -> str:
    rows = [f"{'Feature Set':<16} {'Accuracy':>8} {'Kappa':>7} {'Chance':>7}"]
    for r in reports:
        rows.append(f"{r.feature_set:<16} {r.accuracy:8.3f} {r.kappa:7.3f} {r.chance_accuracy:7.3f}")
    return "\n".join(rows)


def _prepare_train(train: Dataset, balance, selection, seed, termination):
    """In-loop balancing and selection on a training split only."""
    selected = None
    if balance == "inside":
        train = spread_subsample(train, derive_seed(seed, "balance"))
    if selection == "inside":
        selected = best_first_select(train, termination).selected
        train = train.project(selected)
    return train, selected


def cross_validate(
    dataset: Dataset,
    learner: Learner,
    fset: FeatureSet | str = ALL,
    k: int = 10,
    seed: int = 1,
    balance: str | None = None,
    selection: str | None = None,
    folds: FoldAssignment | None = None,
    termination: int = 5,
) -> EvalReport:
    """k-fold evaluation with pooled confusion matrix.

    ``balance`` and ``selection`` are None, "outside" (once, before folding)
    or "inside" (refit on every training split). Asking for the bare
    "Selected" set turns on selection, outside by default. With k equal to
    the row count each row is its own fold.
    """
    if balance not in PLACEMENTS or selection not in PLACEMENTS:
        raise ValueError("placement must be None, 'outside' or 'inside'")
    fs = _resolve_set(fset)
    notes = []
    if _wants_search(fs):
        data = dataset.project(ALL) if set(map(str, ALL.features)) <= set(map(str, dataset.features)) else dataset
        selection = selection or "outside"
    else:
        data = dataset.project(fs)
    if len(data) == 0:
        raise EmptyCorpusError("cannot cross-validate an empty dataset")
    if balance == "outside":
        data = spread_subsample(data, derive_seed(seed, "balance"))
    selected = None
    if selection == "outside":
        selected = best_first_select(data, termination).selected
        data = data.project(selected)
        notes.append(LEAKAGE_NOTE)

    n = len(data)
    if folds is None:
        folds = leave_one_out(n) if k == n else stratified_folds(data.y, k, derive_seed(seed, "folds"))
    elif len(folds.fold_of) != n:
        raise ValueError("fold assignment does not match the dataset size")

    predictions = np.full(n, -1, dtype=np.int64)
    scores = np.full(n, np.nan)
    per_fold = []
    for fold in range(folds.k):
        test_rows = folds.test_rows(fold)
        if len(test_rows) == 0:
            continue
        try:
            train, fold_sel = _prepare_train(
                data.subset(folds.train_rows(fold)), balance, selection, derive_seed(seed, f"fold{fold}"), termination
            )
            test = data.subset(test_rows)
            if fold_sel is not None:
                test = test.project(fold_sel)
            model = fit_learner(learner, train)
        except ExpertiseError as exc:
            exc.fold = fold
            exc.args = (f"fold {fold}: {exc}",)
            raise
        pred = model.predict_dataset(test)
        predictions[test_rows] = pred
        scores[test_rows] = model.score_dataset(test)
        cm = ConfusionMatrix.from_predictions(test.y, pred)
        per_fold.append(
            FoldResult(fold, cm, accuracy(cm), kappa(cm), tuple(test_rows.tolist()), model_digest(model), train.features)
        )

    aggregate = ConfusionMatrix(sum((f.matrix.counts for f in per_fold), np.zeros((2, 2), dtype=np.int64)))
    echo = {
        "learner": learner_name(learner),
        "learner_config": learner.to_dict(),
        "feature_set": fs.name,
        "k": folds.k,
        "seed": seed,
        "balance": balance,
        "selection": selection,
        "termination": termination,
    }
    return EvalReport(
        feature_set=fs.name,
        learner=learner_name(learner),
        accuracy=accuracy(aggregate),
        kappa=kappa(aggregate),
        chance_accuracy=chance_accuracy(data.y),
        aggregate_matrix=aggregate,
        per_fold=per_fold,
        predictions=predictions,
        scores=scores,
        actual=data.y.copy(),
        ids=data.ids,
        selected=selected,
        notes=tuple(notes),
        config_echo=echo,
    )


def cross_corpus_eval(
    train: Dataset,
    test: Dataset,
    learner: Learner,
    fset: FeatureSet | str = ALL,
    seed: int = 1,
    balance: bool = False,
    selection: bool = False,
    termination: int = 5,
) -> EvalReport:
    """Fit once on ``train`` and score ``test``; chance comes from the test labels."""
    if len(test) == 0:
        raise EmptyCorpusError("test set is empty")
    if tuple(map(str, train.features)) != tuple(map(str, test.features)):
        raise SchemaMismatchError("train and test feature schemas differ")
    fs = _resolve_set(fset)
    search = _wants_search(fs) or selection
    names = ALL.features if _wants_search(fs) else fs.features
    tr, te = train.project(names), test.project(names)
    tr, selected = _prepare_train(tr, "inside" if balance else None, "inside" if search else None, seed, termination)
    if selected is not None:
        te = te.project(selected)
    model = fit_learner(learner, tr)
    pred = model.predict_dataset(te)
    cm = ConfusionMatrix.from_predictions(te.y, pred)
    fold = FoldResult(0, cm, accuracy(cm), kappa(cm), tuple(range(len(te))), model_digest(model), tr.features)
    echo = {
        "learner": learner_name(learner),
        "learner_config": learner.to_dict(),
        "feature_set": fs.name,
        "seed": seed,
        "balance": bool(balance),
        "selection": bool(search),
        "termination": termination,
    }
    return EvalReport(
        feature_set=fs.name,
        learner=learner_name(learner),
        accuracy=accuracy(cm),
        kappa=kappa(cm),
        chance_accuracy=chance_accuracy(te.y),
        aggregate_matrix=cm,
        per_fold=[fold],
        predictions=pred,
        scores=model.score_dataset(te),
        actual=te.y.copy(),
        ids=te.ids,
        selected=selected,
        config_echo=echo,
    )


# -- incremental classification ---------------------------------------------------


@dataclass(frozen=True)
class TurnPrediction:
    turn: int
    label: Label
    score: float
    accumulated_label: Label
    accumulated_score: float


def _threshold(model) -> float:
    # Forest scores are Expert vote fractions; SVM scores are signed margins.
    return 0.5 if model.kind == "forest" else 0.0


def classify_incremental(model, session: Session, config: ExtractionConfig = ExtractionConfig()) -> list[TurnPrediction]:
    """Predict after every exchange and accumulate the mean score so far.

    Features are recomputed on each prefix, so call duration is the duration
    so far and rates use the prefix exchange count. Scores above the
    threshold mean Expert; ties go to Novice.
    """
    if not session.exchanges:
        raise EmptyCorpusError(f"session {session.session_id!r} has no exchanges")
    cut = _threshold(model)
    out = []
    total = 0.0
    for t in range(1, len(session.exchanges) + 1):
        vec = _extract(session.prefix(t), config)
        values = {str(f): v for f, v in vec.values.items()}
        row = np.array([[np.nan if values[str(f)] is None else values[str(f)] for f in model.features]])
        score = float(model.score_matrix(row)[0])
        total += score
        mean = total / t
        out.append(
            TurnPrediction(
                turn=t,
                label=CLASS_ORDER[int(model.predict_matrix(row)[0])],
                score=score,
                accumulated_label=CLASS_ORDER[int(mean > cut)],
                accumulated_score=mean,
            )
        )
    return out


def predict_vectors(model, vectors) -> tuple[list[Label], np.ndarray]:
    rows = np.vstack([_vector_row(model.features, _subvector(v, model.features)) for v in vectors])
    return [CLASS_ORDER[int(p)] for p in model.predict_matrix(rows)], model.score_matrix(rows)


def _subvector(v, features):
    from .features import FeatureVector, feature_id

    values = {str(f): x for f, x in v.values.items()}
    try:
        return FeatureVector({feature_id(str(f)): values[str(f)] for f in features}, v.session_id, v.label)
    except KeyError as exc:
        raise SchemaMismatchError(f"session {v.session_id!r} lacks feature {exc.args[0]}") from None
