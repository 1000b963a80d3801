"""aodcnn-v1 model files: JSON text, every float written with 17 significant digits."""
from __future__ import annotations

import json
import math

import numpy as np

from .layers import LAYER_TYPES, Dense
from .model import Model, ScalingParams

FORMAT = "aodcnn-v1"

_CTOR_ARGS = {
    "conv2d": lambda h: (h["in_ch"], h["out_ch"], h["kernel"], h["stride"], h["pad"]),
    "batchnorm": lambda h: (h["channels"], h["momentum"], h["eps"]),
    "maxpool": lambda h: (h["k"], h["stride"]),
    "dense": lambda h: (h["in"], h["out"]),
    "dropout": lambda h: (h["p"],),
}


class ModelFormatError(ValueError):
    pass


def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ModelFormatError(f"non-finite value {x} cannot be serialized")
    return format(x, ".17g")


def _value(v) -> str:
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _num(v)
    if isinstance(v, np.ndarray):
        return _value({"shape": list(v.shape), "data": v.ravel().tolist()})
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_value(x)}" for k, x in v.items()) + "}"
    if hasattr(v, "__iter__"):
        return "[" + ", ".join(_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def serialize_model(model: Model) -> str:
    doc = {
        "format": FORMAT,
        "scaler": None if model.scaler is None else {"min": model.scaler.min, "max": model.scaler.max},
        "meta": model.meta,
        "layer_count": len(model.layers),
        "layers": [
            {"kind": layer.kind, "hyper": layer.hyper(),
             "params": layer.params, "buffers": layer.buffers}
            for layer in model.layers
        ],
    }
    parts = [f"  {json.dumps(k)}: {_value(v)}" for k, v in doc.items() if k != "layers"]
    layers = ",\n".join("    " + _value(layer) for layer in doc["layers"])
    return "{\n" + ",\n".join(parts) + ',\n  "layers": [\n' + layers + "\n  ]\n}\n"


def _array(obj, expected_shape, where) -> np.ndarray:
    try:
        shape = tuple(obj["shape"])
        data = np.array(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"{where}: malformed array") from e
    if shape != tuple(expected_shape) or data.size != int(np.prod(shape)):
        raise ModelFormatError(f"{where}: shape {list(shape)} inconsistent with layer {list(expected_shape)}")
    return data.reshape(shape)


def deserialize_model(text: str) -> Model:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"not JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFormatError(f"unsupported model format {doc.get('format') if isinstance(doc, dict) else doc!r}")
    specs = doc.get("layers")
    if not isinstance(specs, list) or not specs:
        raise ModelFormatError("invalid model: no layers")
    layers = []
    for i, spec in enumerate(specs):
        kind = spec.get("kind")
        if kind not in LAYER_TYPES:
            raise ModelFormatError(f"layer {i}: unknown kind {kind!r}")
        ctor = _CTOR_ARGS.get(kind)
        try:
            layer = LAYER_TYPES[kind](*ctor(spec.get("hyper", {}))) if ctor else LAYER_TYPES[kind]()
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError(f"layer {i}: bad hyperparameters") from e
        for group in ("params", "buffers"):
            stored = spec.get(group, {})
            own = getattr(layer, group)
            if set(stored) != set(own):
                raise ModelFormatError(f"layer {i}: {group} {sorted(stored)} != expected {sorted(own)}")
            for name in own:
                own[name] = _array(stored[name], own[name].shape, f"layer {i} {name}")
        layers.append(layer)
    scaler = doc.get("scaler")
    model = Model(layers, None if scaler is None else ScalingParams(float(scaler["min"]), float(scaler["max"])))
    model.meta = doc.get("meta") or {}
    if doc.get("layer_count") != len(layers):
        raise ModelFormatError(f"layer_count {doc.get('layer_count')} != {len(layers)} layers present")
    _check_chain(model)
    return model


def _check_chain(model: Model):
    """Adjacent dense layers must agree on widths; the head is a single unit."""
    dense = [layer for layer in model.layers if isinstance(layer, Dense)]
    for a, b in zip(dense, dense[1:]):
        if a.n_out != b.n_in:
            raise ModelFormatError(f"dense widths {a.n_out} -> {b.n_in} do not chain")
    if not isinstance(model.layers[-1], Dense) or model.layers[-1].n_out != 1:
        raise ModelFormatError("final layer must be Dense with one output")
