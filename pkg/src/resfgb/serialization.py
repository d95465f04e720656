"""Versioned JSON model files.

Floats are written with 17 significant digits so every float64 reloads to the
identical bit pattern. Matrices are stored as ``{"shape": [...], "data": [...]}``
in row-major order.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np

from .boost import ResFGBModel, ResidualLayer
from .dataio import Standardizer
from .embed import Embedding
from .linopt import LinearModel
from .losses import LossKind

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _float(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"cannot serialize non-finite value {v}")
    return format(v, ".17g")


def _encode(obj: Any, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent)
    if isinstance(obj, (list, tuple)):
        if any(isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            items = [f"{pad}{_encode(v, indent + 1)}" for v in obj]
            return "[\n" + ",\n".join(items) + "\n" + "  " * indent + "]" if obj else "[]"
        return "[" + ",".join(_encode(v, indent) for v in obj) + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _matrix(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel(order="C")}


def _unmatrix(obj: dict) -> np.ndarray:
    data = np.asarray(obj["data"], dtype=np.float64)
    return data.reshape(tuple(obj["shape"]))


def model_to_dict(model: ResFGBModel) -> dict:
    layers = []
    for layer in model.layers:
        emb = layer.embedding
        if not isinstance(emb, Embedding):
            raise TypeError("only learned embeddings can be serialized")
        layers.append({
            "eta": float(layer.eta),
            "A": _matrix(layer.A),
            "embedding": {
                "dims": emb.dims,
                "activation": "relu",
                "output_activation": "identity",
                "project_unit_ball": emb.project_unit_ball,
                "weights": [_matrix(W) for W in emb.weights],
                "biases": [np.asarray(b) for b in emb.biases],
            },
        })
    st = model.standardizer
    return {
        "format_version": FORMAT_VERSION,
        "metadata": {
            **model.metadata,
            "loss": model.loss.value,
            "lambda": float(model.linear.lam),
            "label_values": list(model.label_values),
        },
        "standardizer": None if st is None else {"mean": st.mean, "scale": st.scale},
        "layers": layers,
        "linear": {"lambda": float(model.linear.lam), "w": _matrix(model.linear.w)},
    }


def dumps(model: ResFGBModel) -> str:
    return _encode(model_to_dict(model)) + "\n"


def model_from_dict(doc: dict) -> ResFGBModel:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        meta = dict(doc["metadata"])
        st = doc["standardizer"]
        standardizer = None if st is None else Standardizer(
            np.asarray(st["mean"], dtype=np.float64), np.asarray(st["scale"], dtype=np.float64))
        layers = []
        for rec in doc["layers"]:
            e = rec["embedding"]
            emb = Embedding([_unmatrix(W) for W in e["weights"]],
                            [np.asarray(b, dtype=np.float64) for b in e["biases"]],
                            bool(e["project_unit_ball"]))
            if emb.dims != list(e["dims"]):
                raise ModelFormatError(f"embedding dims {e['dims']} disagree with weights {emb.dims}")
            layers.append(ResidualLayer(_unmatrix(rec["A"]), float(rec["eta"]), emb))
        lin = doc["linear"]
        linear = LinearModel(_unmatrix(lin["w"]), float(lin["lambda"]))
        return ResFGBModel(layers, linear, LossKind.parse(meta["loss"]),
                           tuple(int(v) for v in meta["label_values"]), standardizer, meta)
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc!r}") from exc


def loads(text: str) -> ResFGBModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    return model_from_dict(doc)


def save_model(model: ResFGBModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(model))


def load_model(path) -> ResFGBModel:
    with open(path) as fh:
        return loads(fh.read())
