"""JSON checkpoints: config plus ``name -> {shape, values}`` for every parameter."""

from __future__ import annotations

import json
import os

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, DataIOError
from .model import ModelConfig, ParameterSet, SMNModel, parameter_layout

FORMAT = "smn-checkpoint"
VERSION = 1


def to_dict(model: SMNModel, extra: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "params": {
            name: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()} for name, t in model.params.items()
        },
        "extra": extra or {},
    }


def save(model: SMNModel, path, extra: dict | None = None) -> None:
    """Write ``model`` to ``path``; floats keep full precision."""
    text = json.dumps(to_dict(model, extra), sort_keys=True)
    try:
        d = os.path.dirname(os.fspath(path))
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as e:
        raise DataIOError(f"cannot write checkpoint {path}: {e}") from e


def params_from_dict(doc: dict, config: ModelConfig) -> ParameterSet:
    """Parameters for ``config`` from a checkpoint document; mismatches raise listing every offender."""
    stored = doc.get("params")
    if not isinstance(stored, dict):
        raise CheckpointError("checkpoint has no parameter map")
    layout = parameter_layout(config)
    problems = []
    ps = ParameterSet()
    for name, shape, _ in layout:
        entry = stored.get(name)
        if entry is None:
            problems.append(f"{name}: missing")
            continue
        got = tuple(entry.get("shape", ()))
        vals = np.asarray(entry.get("values", []), dtype=np.float64)
        if got != tuple(shape):
            problems.append(f"{name}: shape {got} != expected {tuple(shape)}")
            continue
        if vals.size != int(np.prod(shape)):
            problems.append(f"{name}: {vals.size} values for shape {tuple(shape)}")
            continue
        ps[name] = ad.parameter(vals.reshape(shape), name=name)
    expected = {n for n, _, _ in layout}
    problems += [f"{n}: unexpected for {config.variant}" for n in sorted(stored) if n not in expected]
    if problems:
        raise CheckpointError("checkpoint does not match config:\n  " + "\n  ".join(problems))
    return ps


def load(path, config: ModelConfig | None = None) -> SMNModel:
    """Model from ``path``.  With ``config`` the shapes are validated against it instead of the stored config."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise DataIOError(f"cannot read checkpoint {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {e}") from e
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    if config is None:
        config = ModelConfig.from_dict(doc.get("config", {}))
    return SMNModel(config, params_from_dict(doc, config))
