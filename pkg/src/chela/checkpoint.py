"""Checkpoint persistence.

File layout: 6-byte magic ``CHELA1``, a little-endian uint32 header length, a
JSON manifest (tensor names/shapes/dtype/byte offsets, config echo, rng state,
step counter), then the payload of raw little-endian float32 values. Offsets
are relative to the payload start. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from chela.layer import ModelConfig

MAGIC = b"CHELA1"


class CheckpointError(Exception):
    """Base class for checkpoint failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class ManifestError(CheckpointError):
    """Header JSON is malformed or internally inconsistent."""


class TruncatedPayloadError(CheckpointError):
    """Payload is shorter than the manifest promises."""


def _tensor_entries(params: dict[str, np.ndarray], opt_state) -> dict[str, np.ndarray]:
    tensors = dict(params)
    if opt_state is not None:
        for k, v in opt_state.m.items():
            tensors[f"opt.m.{k}"] = v
        for k, v in opt_state.v.items():
            tensors[f"opt.v.{k}"] = v
    return tensors


def save_checkpoint(path: str, params: dict[str, np.ndarray], opt_state,
                    cfg: ModelConfig, rng_state: int = 0, step: int = 0) -> None:
    tensors = _tensor_entries(params, opt_state)
    manifest: dict = {
        "config": cfg.to_dict(),
        "rng_state": int(rng_state),
        "step": int(step),
        "opt_step": int(opt_state.step) if opt_state is not None else 0,
        "tensors": [],
    }
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nbytes = arr.nbytes
        manifest["tensors"].append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": nbytes,
        })
        blobs.append(arr.tobytes())
        offset += nbytes
    header = json.dumps(manifest).encode("utf-8")

    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str):
    """Returns (params, opt_moments, cfg, rng_state, step).

    opt_moments is {"m": {...}, "v": {...}, "step": int}; arrays come back as
    float64 holding exactly the stored float32 values.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != MAGIC:
        raise BadMagicError(f"bad magic in {path}: {raw[:6]!r}")
    if len(raw) < 10:
        raise ManifestError(f"{path}: file too short for a header")
    (hlen,) = struct.unpack("<I", raw[6:10])
    header_end = 10 + hlen
    if len(raw) < header_end:
        raise ManifestError(f"{path}: header length {hlen} exceeds file size")
    try:
        manifest = json.loads(raw[10:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: malformed manifest: {exc}") from exc

    entries = manifest.get("tensors")
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: manifest missing tensor table")
    last_end = 0
    for e in sorted(entries, key=lambda e: e["offset"]):
        size = max(1, int(np.prod(e["shape"]))) * 4
        if e["nbytes"] != size:
            raise ManifestError(f"{path}: tensor {e['name']} shape {e['shape']} "
                                f"does not match nbytes {e['nbytes']}")
        if e["offset"] < last_end:
            raise ManifestError(f"{path}: overlapping offsets at {e['name']}")
        last_end = e["offset"] + e["nbytes"]
    payload = raw[header_end:]
    if len(payload) < last_end:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, manifest needs {last_end}")

    params: dict[str, np.ndarray] = {}
    moments = {"m": {}, "v": {}, "step": int(manifest.get("opt_step", 0))}
    for e in entries:
        arr = np.frombuffer(payload, dtype="<f4", count=max(1, int(np.prod(e["shape"]))),
                            offset=e["offset"]).reshape(e["shape"]).astype(np.float64)
        name = e["name"]
        if name.startswith("opt.m."):
            moments["m"][name[6:]] = arr
        elif name.startswith("opt.v."):
            moments["v"][name[6:]] = arr
        else:
            params[name] = arr
    cfg = ModelConfig.from_dict(manifest["config"])
    return params, moments, cfg, int(manifest.get("rng_state", 0)), int(manifest.get("step", 0))


def load_optim_state(moments: dict):
    from chela.training import OptimState
    return OptimState(m=moments["m"], v=moments["v"], step=moments["step"])
