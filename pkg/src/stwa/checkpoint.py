"""Checkpoint files: magic, header length, JSON header, raw little-endian f64 arrays.

The header lists every array's name and shape, echoes the model config and
seed, and carries a SHA-256 over the header (minus the digest field) and the
payload so that edits to either are detected on load.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"STWACKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _digest(header: dict, payload: bytes) -> str:
    body = json.dumps({k: v for k, v in header.items() if k != "sha256"}, sort_keys=True)
    return hashlib.sha256(body.encode("utf-8") + payload).hexdigest()


def save(path, arrays: dict[str, np.ndarray], config: dict, seed: int, extra: dict | None = None) -> None:
    names = list(arrays)
    payload = b"".join(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in names)
    header = {
        "version": VERSION,
        "names": names,
        "shapes": [list(np.shape(arrays[n])) for n in names],
        "config": config,
        "seed": seed,
        "extra": extra or {},
    }
    header["sha256"] = _digest(header, payload)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(payload)


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC) or len(blob) < len(MAGIC) + 8:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checksum/shape mismatch: unreadable header ({exc})") from None
    payload = blob[start + hlen:]
    try:
        sizes = [int(np.prod(s, dtype=np.int64)) for s in header["shapes"]]
        names = header["names"]
    except (KeyError, TypeError, ValueError):
        raise CheckpointError("checksum/shape mismatch: malformed header") from None
    if len(names) != len(sizes) or 8 * sum(sizes) != len(payload):
        raise CheckpointError("checksum/shape mismatch: payload size disagrees with header shapes")
    if header.get("sha256") != _digest(header, payload):
        raise CheckpointError("checksum/shape mismatch: digest does not match contents")
    arrays, off = {}, 0
    for name, shape, n in zip(names, header["shapes"], sizes):
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 8 * n
    return header, arrays


def save_model(path, model, normalizer=None, extra: dict | None = None) -> None:
    arrays = {name: p.data for name, p in model.named_parameters()}
    if normalizer is not None:
        arrays["normalizer.mean"] = normalizer.mean
        arrays["normalizer.std"] = normalizer.std
    save(path, arrays, model.config.to_dict(), model.config.seed, extra)


def load_model(path):
    """Rebuild a model (and normalizer, when stored) from a checkpoint."""
    from .data import Normalizer
    from .model import ModelConfig, STWAModel

    header, arrays = load(path)
    cfg = ModelConfig.from_dict(header["config"])
    model = STWAModel(cfg)
    params = dict(model.named_parameters())
    expected = set(params) | {"normalizer.mean", "normalizer.std"}
    if set(arrays) - expected or set(params) - set(arrays):
        raise CheckpointError("checksum/shape mismatch: parameter names differ from the config's model")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise CheckpointError(f"checksum/shape mismatch: {name} has shape {arrays[name].shape}, model needs {p.shape}")
        p.data[...] = arrays[name]
    norm = None
    if "normalizer.mean" in arrays:
        norm = Normalizer(arrays["normalizer.mean"].copy(), arrays["normalizer.std"].copy())
    return model, norm, header
