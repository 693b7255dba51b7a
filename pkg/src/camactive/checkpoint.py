"""Versioned JSON checkpoint container for nets and classifiers.

Float64 arrays are stored row-major as base64, so save/load round trips
are bit-exact.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .classifier import MlpClassifier
from .nn import DenseNet

FORMAT = "camactive-checkpoint"
VERSION = 1


class CheckpointError(Exception):
    pass


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    a = np.frombuffer(raw, dtype=np.float64).copy()
    return a.reshape(d["shape"])


def net_to_dict(net: DenseNet) -> dict:
    return {
        "dims": net.dims,
        "nonlinearity": "relu",
        "seed": net.seed,
        "init_scale": net.init_scale,
        "weights": [_encode_array(w) for w in net.weights],
        "biases": [_encode_array(b) for b in net.biases],
    }


def net_from_dict(d: dict) -> DenseNet:
    net = DenseNet.__new__(DenseNet)
    net.dims = [int(x) for x in d["dims"]]
    net.seed = int(d["seed"])
    net.init_scale = float(d["init_scale"])
    net.weights = [_decode_array(w) for w in d["weights"]]
    net.biases = [_decode_array(b) for b in d["biases"]]
    return net


def classifier_to_dict(clf: MlpClassifier) -> dict:
    return {
        "n_features": clf.n_features,
        "n_classes": clf.n_classes,
        "hidden_units": clf.hidden_units,
        "net": net_to_dict(clf.net),
    }


def classifier_from_dict(d: dict) -> MlpClassifier:
    clf = MlpClassifier.__new__(MlpClassifier)
    clf.n_features = int(d["n_features"])
    clf.n_classes = int(d["n_classes"])
    clf.hidden_units = int(d["hidden_units"])
    clf.net = net_from_dict(d["net"])
    return clf


def save_checkpoint(path, kind: str, payload: dict, extra: dict | None = None) -> None:
    doc = {"format": FORMAT, "version": VERSION, "kind": kind, "payload": payload}
    if extra:
        doc["extra"] = extra
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)


def load_checkpoint(path, kind: str | None = None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    if kind is not None and doc.get("kind") != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, found {doc.get('kind')}")
    return doc


def save_net(path, net: DenseNet, kind: str = "embedding", extra: dict | None = None) -> None:
    save_checkpoint(path, kind, net_to_dict(net), extra)


def load_net(path, kind: str = "embedding") -> DenseNet:
    return net_from_dict(load_checkpoint(path, kind)["payload"])


def save_classifier(path, clf: MlpClassifier, extra: dict | None = None) -> None:
    save_checkpoint(path, "classifier", classifier_to_dict(clf), extra)


def load_classifier(path) -> MlpClassifier:
    return classifier_from_dict(load_checkpoint(path, "classifier")["payload"])
