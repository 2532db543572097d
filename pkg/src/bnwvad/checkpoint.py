"""Model checkpoints.

Binary layout (all little-endian)::

    b"BNWVCKPT" | uint32 version | uint64 header length | JSON header | float64 blobs

The header lists every array with its shape and byte offset into the blob
section, plus the model config and optimizer hyperparameters. Headers are
dumped with sorted keys so identical states produce identical files. A
``.json`` path selects a human-readable form with the same content (not
bit-exact for floats that do not survive ``repr``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams
from .optim import AdamState
from .stats import RunningStats

MAGIC = b"BNWVCKPT"
VERSION = 1


def _collect(params: ModelParams, opt: AdamState | None) -> tuple[dict, dict[str, np.ndarray]]:
    arrays: dict[str, np.ndarray] = {}
    for name in params.names():
        arrays[f"w/{name}"] = params.weights[name]
    for tag, rs in (("rs1", params.rs1), ("rs2", params.rs2)):
        arrays[f"{tag}/mean"] = rs.mean
        arrays[f"{tag}/var"] = rs.var
    meta = {
        "config": asdict(params.config),
        "running": {tag: {"momentum": rs.momentum, "eps": rs.eps} for tag, rs in (("rs1", params.rs1), ("rs2", params.rs2))},
    }
    if opt is not None:
        meta["optimizer"] = {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "weight_decay": opt.weight_decay, "t": opt.t,
        }
        for k in sorted(opt.m):
            arrays[f"adam_m/{k}"] = opt.m[k]
            arrays[f"adam_v/{k}"] = opt.v[k]
    return meta, arrays


def _rebuild(meta: dict, arrays: dict[str, np.ndarray]):
    cfg = ModelConfig(**meta["config"])
    weights = {k[2:]: v for k, v in arrays.items() if k.startswith("w/")}
    rs = {
        tag: RunningStats(arrays[f"{tag}/mean"], arrays[f"{tag}/var"], **meta["running"][tag])
        for tag in ("rs1", "rs2")
    }
    params = ModelParams(cfg, weights, rs["rs1"], rs["rs2"])
    opt = None
    if "optimizer" in meta:
        opt = AdamState(**meta["optimizer"])
        opt.m = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")}
        opt.v = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")}
    return params, opt, meta.get("extra", {})


def save_checkpoint(path: str | Path, params: ModelParams, opt: AdamState | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta, arrays = _collect(params, opt)
    if extra:
        meta["extra"] = extra

    if path.suffix == ".json":
        meta["arrays"] = {k: {"shape": list(v.shape), "data": np.asarray(v, dtype=np.float64).ravel().tolist()} for k, v in arrays.items()}
        meta["format_version"] = VERSION
        path.write_text(json.dumps(meta, sort_keys=True))
        return path

    index, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    meta["arrays"] = index
    header = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelParams, AdamState | None, dict]:
    path = Path(path)
    if path.suffix == ".json":
        meta = json.loads(path.read_text())
        arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in meta["arrays"].items()}
        return _rebuild(meta, arrays)

    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", raw, pos)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    meta = json.loads(raw[pos : pos + hlen])
    body = pos + hlen
    arrays = {}
    for entry in meta["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=body + entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return _rebuild(meta, arrays)
