"""Precomputed-embedding adapter: ingest externally produced text/view embeddings.

File format (JSON): ``{scene_id: {"text": [d floats], "views": [[d floats] x K]}}``.
Rows are L2-normalized on read so downstream dot products stay cosine
similarities regardless of the producer's conventions.
"""

import json
from typing import Dict, Tuple

import numpy as np

from ..errors import DatasetError


def write_embedding_file(path, records: Dict[str, dict]) -> None:
    payload = {
        scene_id: {
            "text": np.asarray(rec["text"], dtype=np.float64).tolist(),
            "views": np.asarray(rec["views"], dtype=np.float64).tolist(),
        }
        for scene_id, rec in records.items()
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")


def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=-1, keepdims=True)
    if (norms < 1e-12).any():
        raise DatasetError("adapter file contains a zero embedding")
    return a / norms


def read_embedding_file(path) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read adapter embeddings {path}: {exc}") from exc
    out = {}
    for scene_id, rec in raw.items():
        text = _unit_rows(np.asarray(rec["text"], dtype=np.float64))
        views = np.asarray(rec["views"], dtype=np.float64)
        if views.ndim != 2:
            raise DatasetError(f"adapter record {scene_id}: views must be K x d")
        out[scene_id] = (text, _unit_rows(views))
    return out
