"""Versioned model container: architecture spec plus named weight arrays.

A plain JSON document with every float written at 17 significant digits,
so save -> load -> forward reproduces outputs bit-exactly and repeated
saves of the same model are byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from .network import NetworkSpec, ResampleNetwork
from .serialize import dumps_json

__all__ = ["save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

FORMAT_VERSION = 1


def _pack_arrays(arrays: dict) -> dict:
    return {
        name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
        for name, arr in arrays.items()
    }


def _unpack_arrays(packed: dict) -> dict:
    return {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in packed.items()
    }


def save_checkpoint(path, model: ResampleNetwork, extra: dict | None = None) -> None:
    """Write the model (and optional metadata) as one JSON document."""
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "params": _pack_arrays(model.params),
        "buffers": _pack_arrays(model.buffers),
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as f:
        f.write(dumps_json(doc))


def load_checkpoint(path) -> tuple[ResampleNetwork, dict]:
    """Rebuild the model; returns (model, extra metadata)."""
    with open(path) as f:
        doc = json.load(f)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    spec = NetworkSpec.from_dict(doc["spec"])
    model = ResampleNetwork(
        spec,
        params=_unpack_arrays(doc["params"]),
        buffers=_unpack_arrays(doc.get("buffers", {})),
    )
    return model, doc.get("extra", {})
