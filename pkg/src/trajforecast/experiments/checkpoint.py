"""Versioned parameter checkpoints stored as ``.npz`` archives.

Each archive holds one array per named parameter plus a ``__meta__`` entry
with JSON: format version, model name, hyperparameters, fitted statistics
and the hash of the manifest that produced it.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..models import MODELS, Forecaster, NeuralForecaster

FORMAT_VERSION = 1
META_KEY = "__meta__"


def _model_name(model: Forecaster) -> str:
    for name, cls in MODELS.items():
        if type(model) is cls:
            return name
    raise ValueError(f"{type(model).__name__} is not a registered model")


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def save_checkpoint(path: str | Path, model: Forecaster, manifest_hash: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format_version": FORMAT_VERSION, "model": _model_name(model), "manifest_hash": manifest_hash,
            "hyperparameters": {k: _jsonable(v) for k, v in model.get_params().items()}}
    arrays: dict[str, np.ndarray] = {}
    if isinstance(model, NeuralForecaster):
        arrays, fitted = model.get_state()
        meta["fitted"] = fitted
    else:
        meta["fitted"] = {"forecast_steps": getattr(model, "forecast_steps_", None)}
    if META_KEY in arrays:
        raise ValueError(f"parameter name {META_KEY!r} is reserved")
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **{META_KEY: blob}, **arrays)
    return path


def read_meta(path: str | Path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        return json.loads(bytes(z[META_KEY]).decode("utf-8"))


def load_checkpoint(path: str | Path) -> tuple[Forecaster, dict]:
    """Rebuild the fitted model stored at ``path``; returns ``(model, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z[META_KEY]).decode("utf-8"))
        arrays = {k: z[k] for k in z.files if k != META_KEY}
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
    cls = MODELS[meta["model"]]
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["hyperparameters"].items()}
    model = cls(**params)
    if isinstance(model, NeuralForecaster):
        model.set_state(arrays, meta["fitted"])
    elif meta["fitted"].get("forecast_steps") is not None:
        model.forecast_steps_ = int(meta["fitted"]["forecast_steps"])
    return model, meta
