"""Model checkpoints: versioned JSON with exact float64 round-trips.

JSON floats are emitted via ``repr`` (shortest round-trip form), so values
reload bit for bit; files are written with sorted keys and a fixed layout,
making identical models produce identical bytes.
"""

from __future__ import annotations

import json

from .errors import ShapeError
from .nn_core import ArchSpec, ModelState

FORMAT_VERSION = 1


def model_to_dict(model: ModelState) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "model-checkpoint",
        "arch": {
            "input_dim": model.arch.input_dim,
            "hidden_dims": list(model.arch.hidden_dims),
            "num_classes": model.arch.num_classes,
            "use_batchnorm_after": list(model.arch.use_batchnorm_after),
            "activation": model.arch.activation,
        },
        "bn_momentum": model.bn_momentum,
        "params": model.params.tolist(),
        "bn_stats": model.bn_stats.tolist(),
    }


def model_from_dict(payload: dict) -> ModelState:
    if payload.get("kind") != "model-checkpoint":
        raise ShapeError("not a model checkpoint payload")
    if payload.get("format_version") != FORMAT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {payload.get('format_version')!r}")
    arch = ArchSpec(
        input_dim=payload["arch"]["input_dim"],
        hidden_dims=tuple(payload["arch"]["hidden_dims"]),
        num_classes=payload["arch"]["num_classes"],
        use_batchnorm_after=tuple(payload["arch"]["use_batchnorm_after"]),
        activation=payload["arch"]["activation"],
    )
    import numpy as np

    return ModelState(
        arch,
        np.asarray(payload["params"], dtype=np.float64),
        np.asarray(payload["bn_stats"], dtype=np.float64),
        payload["bn_momentum"],
    )


def save_model(model: ModelState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> ModelState:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
