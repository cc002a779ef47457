"""Versioned, self-verifying JSON envelope for trained models."""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Mapping

import numpy as np

from .errors import ModelFileError
from .forest import ForestConfig, RandomForestModel, Tree
from .prep import Conditioner
from .svm import LinearSvmModel, SmoConfig

FORMAT = "dialog-expertise-model"
VERSION = 1


def canonical_json(obj: Any) -> str:
    # json renders floats with repr(), the shortest round-trip decimal.
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _digest(body: Mapping) -> str:
    return "sha256:" + hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def _payload(model) -> dict:
    if isinstance(model, RandomForestModel):
        return {
            "mtry": model.mtry,
            "class_order": [c.value for c in model.class_order],
            "trees": [t.to_dict() for t in model.trees],
        }
    if isinstance(model, LinearSvmModel):
        return {
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "alphas": model.alphas.tolist(),
            "C": model.C,
            "class_map": {"Novice": -1, "Expert": 1},
            "status": model.status,
            "iterations": model.iterations,
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_to_dict(model, echo: Mapping[str, Any] | None = None) -> dict:
    body = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "features": [str(f) for f in model.features],
        "conditioner": model.conditioner.to_dict() if model.conditioner is not None else None,
        "config": model.config.to_dict(),
        "payload": _payload(model),
        "echo": dict(echo or {}),
    }
    body["digest"] = _digest(body)
    return body


def dumps_model(model, echo: Mapping[str, Any] | None = None) -> str:
    return canonical_json(model_to_dict(model, echo)) + "\n"


def model_digest(model) -> str:
    """Digest of the model alone (no echo), stable across runs for identical fits."""
    return model_to_dict(model)["digest"]


def save_model(model, path, echo: Mapping[str, Any] | None = None) -> str:
    text = dumps_model(model, echo)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return json.loads(text)["digest"]


def loads_model(text: str):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"model file is not valid JSON: {exc.msg}") from None
    if not isinstance(data, dict) or data.get("format") != FORMAT:
        raise ModelFileError("not a model file")
    version = data.get("version")
    if version != VERSION:
        raise ModelFileError(f"unsupported model file version {version!r} (expected {VERSION})")
    stored = data.pop("digest", None)
    if stored is None or _digest(data) != stored:
        raise ModelFileError("model file digest does not match its contents")
    try:
        return _from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model payload: {exc}") from None


def load_model(path):
    if not os.path.exists(path):
        raise ModelFileError(f"no model file at {path}")
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())


def load_echo(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh).get("echo", {})


def _from_dict(data: dict):
    features = tuple(data["features"])
    cond = Conditioner.from_dict(data["conditioner"]) if data["conditioner"] is not None else None
    payload = data["payload"]
    kind = data["kind"]
    if kind == "forest":
        from .corpus import Label

        config = ForestConfig(**data["config"])
        trees = [Tree.from_dict(t) for t in payload["trees"]]
        order = tuple(Label(c) for c in payload["class_order"])
        return RandomForestModel(trees, config, int(payload["mtry"]), features, cond, order)
    if kind == "svm":
        config = SmoConfig(**data["config"])
        return LinearSvmModel(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            bias=float(payload["bias"]),
            alphas=np.asarray(payload["alphas"], dtype=np.float64),
            C=float(payload["C"]),
            features=features,
            conditioner=cond,
            config=config,
            status=payload["status"],
            iterations=int(payload["iterations"]),
        )
    raise ModelFileError(f"unknown model kind {kind!r}")
