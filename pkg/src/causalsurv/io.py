"""JSON persistence for fitted models."""
from __future__ import annotations

import json

from .csf import CsfModel


def model_to_json(model: CsfModel, compact: bool = False, feature_names=None) -> str:
    """Serialize ``model``; ``compact`` drops the stored nuisance curves.

    Floats are written with ``repr`` precision, so a reloaded model predicts
    bit-identically.
    """
    doc = model.to_dict(curves=not compact)
    if feature_names is not None:
        doc["feature_names"] = list(feature_names)
    return json.dumps(doc, sort_keys=True, separators=(",", ":") if compact else (", ", ": "))


def save_model(model: CsfModel, path, compact: bool = False, feature_names=None) -> None:
    with open(path, "w") as fh:
        fh.write(model_to_json(model, compact, feature_names))
        fh.write("\n")


def load_model_document(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def load_model(path, backend=None) -> CsfModel:
    return CsfModel.from_dict(load_model_document(path), backend=backend)
