"""Scene-embedding export and 2D principal-component projection."""

from pathlib import Path
from typing import List, Tuple

import numpy as np
import torch

from ..errors import InputError
from ..scene_encoder import SceneEncoder


def export_embeddings(scenes, scene_encoder: SceneEncoder) -> List[Tuple[str, str, np.ndarray]]:
    """One (scene_id, scene_type, unit vector) row per scene, canonical clouds."""
    rows = []
    with torch.no_grad():
        for scene in scenes:
            _, _, _, z = scene_encoder.encode_cloud(scene.cloud)
            rows.append((scene.scene_id, scene.scene_type, z.cpu().numpy().astype(np.float64)))
    return rows


def write_embedding_table(path, rows) -> None:
    with open(path, "w") as f:
        for scene_id, scene_type, vec in rows:
            f.write("\t".join([scene_id, scene_type] + [repr(float(x)) for x in vec]) + "\n")


def read_embedding_table(path):
    ids, types, vecs = [], [], []
    with open(Path(path)) as f:
        for line in f:
            parts = line.rstrip("\n").split("\t")
            ids.append(parts[0])
            types.append(parts[1])
            vecs.append(np.array([float(x) for x in parts[2:]]))
    return ids, types, np.stack(vecs)


def project_2d(matrix: np.ndarray) -> np.ndarray:
    """Mean-centered projection onto the top-2 principal directions.

    Sign convention: each direction is flipped so its largest-magnitude
    loading is positive, making the output deterministic.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError(f"projection needs >= 2 rows, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] < 1e-12:
        raise InputError("projection input has rank 0 (all rows identical)")
    comps = vt[:2]
    if comps.shape[0] < 2:  # fewer than 2 dims; pad a zero direction
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    for k in range(2):
        j = int(np.argmax(np.abs(comps[k])))
        if comps[k, j] < 0:
            comps[k] = -comps[k]
    return centered @ comps.T


def type_cosine_separation(rows) -> Tuple[float, float]:
    """(mean intra-type cosine, mean inter-type cosine) over exported rows."""
    types = [t for _, t, _ in rows]
    vecs = np.stack([v for _, _, v in rows])
    sims = vecs @ vecs.T
    intra, inter = [], []
    n = len(rows)
    for i in range(n):
        for j in range(i + 1, n):
            (intra if types[i] == types[j] else inter).append(sims[i, j])
    if not intra or not inter:
        raise InputError("need at least two scene types with two members to compare")
    return float(np.mean(intra)), float(np.mean(inter))
