import json

import numpy as np
import pytest

from dialog_expertise.errors import ModelFileError
from dialog_expertise.forest import ForestConfig, train_forest
from dialog_expertise.modelfile import (
    FORMAT,
    VERSION,
    canonical_json,
    dumps_model,
    load_echo,
    load_model,
    loads_model,
    model_digest,
    save_model,
)
from dialog_expertise.svm import SmoConfig, train_svm


@pytest.fixture(scope="module")
def models(balanced_dataset):
    return {
        "forest": train_forest(balanced_dataset, ForestConfig(n_trees=60, master_seed=4)),
        "svm": train_svm(balanced_dataset, SmoConfig()),
    }


@pytest.mark.parametrize("kind", ["forest", "svm"])
def test_round_trip_bit_exact(models, balanced_dataset, tmp_path, kind):
    model = models[kind]
    path = tmp_path / "m.json"
    digest = save_model(model, path, echo={"seed": 1})
    back = load_model(path)
    assert back.kind == kind
    assert back.features == model.features
    X = balanced_dataset.X
    assert np.array_equal(back.score_matrix(X), model.score_matrix(X))
    assert np.array_equal(back.predict_matrix(X), model.predict_matrix(X))
    assert model_digest(back) == model_digest(model)
    assert digest.startswith("sha256:")
    assert load_echo(path) == {"seed": 1}


def test_envelope_fields(models):
    data = json.loads(dumps_model(models["svm"]))
    assert data["format"] == FORMAT and data["version"] == VERSION
    assert data["kind"] == "svm"
    assert data["payload"]["class_map"] == {"Novice": -1, "Expert": 1}
    assert data["conditioner"]["mins"] is not None
    forest = json.loads(dumps_model(models["forest"]))
    assert forest["config"]["n_trees"] == 60 and len(forest["payload"]["trees"]) == 60


def test_serialization_is_canonical(models):
    text = dumps_model(models["forest"])
    assert text == canonical_json(json.loads(text)) + "\n"
    assert dumps_model(models["forest"]) == text


def test_tampering_detected(models):
    data = json.loads(dumps_model(models["svm"]))
    data["payload"]["bias"] += 1e-9
    with pytest.raises(ModelFileError, match="digest"):
        loads_model(json.dumps(data))


@pytest.mark.parametrize("version", [0, 2, "1", None])
def test_version_gating(models, version):
    data = json.loads(dumps_model(models["svm"]))
    data["version"] = version
    with pytest.raises(ModelFileError, match="version"):
        loads_model(json.dumps(data))


@pytest.mark.parametrize("text", ["not json", "[]", '{"format": "other"}'])
def test_garbage_rejected(text):
    with pytest.raises(ModelFileError):
        loads_model(text)


def test_missing_file(tmp_path):
    with pytest.raises(ModelFileError):
        load_model(tmp_path / "absent.json")


def test_same_fit_same_digest(balanced_dataset):
    cfg = ForestConfig(n_trees=20, master_seed=9)
    assert model_digest(train_forest(balanced_dataset, cfg)) == model_digest(train_forest(balanced_dataset, cfg))
