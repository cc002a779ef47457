"""Novice/expert classification of spoken-dialog-system users from interaction logs."""

from .corpus import Corpus, Exchange, Label, Session, load_corpus
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    accuracy,
    chance_accuracy,
    classify_incremental,
    cross_corpus_eval,
    cross_validate,
    kappa,
    stratified_folds,
)
from .features import ExtractionConfig, FeatureId, FeatureSet, FeatureVector, extract_features, feature_set
from .forest import ForestConfig, RandomForestModel, train_forest
from .modelfile import load_model, save_model
from .prep import Dataset, best_first_select, spread_subsample
from .svm import LinearSvmModel, SmoConfig, train_svm
from .synth import GeneratorConfig, generate_corpus

__version__ = "0.1.0"
