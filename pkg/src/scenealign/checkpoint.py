"""Versioned, byte-deterministic checkpoint container.

A checkpoint is a single file: magic + format version + a JSON header naming
every tensor (dtype, shape, offset) plus a config fingerprint, followed by the
raw little-endian tensor payload. Loading verifies the fingerprint when the
caller supplies an expected one.
"""

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"SA3D"
FORMAT_VERSION = 1


def fingerprint_config(obj) -> str:
    """sha256 over the canonical JSON encoding of a config-like object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, tensors: Dict[str, np.ndarray], fingerprint: str, meta: Optional[dict] = None) -> None:
    names = sorted(tensors)
    entries = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": np.dtype(arr.dtype).newbyteorder("<").str,
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    header = json.dumps(
        {"fingerprint": fingerprint, "meta": meta or {}, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        f.write(header)
        f.write(bytes(payload))


def load_checkpoint(path, expected_fingerprint: Optional[str] = None) -> Tuple[Dict[str, np.ndarray], dict, str]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<IQ", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header_start = 4 + struct.calcsize("<IQ")
    try:
        header = json.loads(blob[header_start : header_start + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    fingerprint = header["fingerprint"]
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise CheckpointError(
            f"{path}: config fingerprint mismatch "
            f"(checkpoint {fingerprint[:12]}..., expected {expected_fingerprint[:12]}...)"
        )
    base = header_start + header_len
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = blob[start : start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
    return tensors, header.get("meta", {}), fingerprint


def module_tensors(module: torch.nn.Module, prefix: str = "") -> Dict[str, np.ndarray]:
    """State dict of a module as float64-preserving numpy arrays."""
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_module_tensors(module: torch.nn.Module, tensors: Dict[str, np.ndarray], prefix: str = "") -> None:
    state = {}
    for key, ref in module.state_dict().items():
        name = prefix + key
        if name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {name}")
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(f"tensor {name}: shape {arr.shape} != module shape {tuple(ref.shape)}")
        state[key] = torch.as_tensor(arr, dtype=ref.dtype)
    module.load_state_dict(state)
