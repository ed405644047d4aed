"""Versioned, byte-deterministic checkpoint container.

Layout:
    bytes 0..7    magic ``SDCKPT01``
    bytes 8..15   little-endian u64: JSON header length H
    bytes 16..16+H  UTF-8 JSON header (sorted keys)
    remainder     raw little-endian C-order array payloads

The header records the model config, normalization statistics, training
counters, the run seed, and an array manifest (name, dtype, shape, offset)
covering the full model state dict, prototype banks included.  Identical
training state always serializes to identical bytes, and a load/save
round trip is bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .errors import MalformedFileError
from .fileio import atomic_write_bytes
from .models import MultiExitEncoder, init_model

MAGIC = b"SDCKPT01"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "int64": "<i8",
    "int32": "<i4",
    "uint8": "|u1",
    "bool": "|b1",
}


@dataclass
class CheckpointState:
    model: MultiExitEncoder
    model_config: ModelConfig
    channel_mean: np.ndarray
    channel_std: np.ndarray
    global_step: int
    epoch: int
    seed: int


def _array_payload(state_dict: dict) -> tuple[list[dict], bytes]:
    manifest = []
    chunks = []
    offset = 0
    for name, tensor in state_dict.items():
        arr = tensor.detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise MalformedFileError(f"unsupported dtype {dtype} for array {name}")
        raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    return manifest, b"".join(chunks)


def serialize_checkpoint(
    model: MultiExitEncoder,
    channel_mean: np.ndarray,
    channel_std: np.ndarray,
    global_step: int,
    epoch: int,
    seed: int,
) -> bytes:
    manifest, payload = _array_payload(model.state_dict())
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": dataclasses.asdict(model.config),
        "normalization": {
            "mean": [float(v) for v in np.asarray(channel_mean).ravel()],
            "std": [float(v) for v in np.asarray(channel_std).ravel()],
        },
        "global_step": int(global_step),
        "epoch": int(epoch),
        "seed": int(seed),
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + len(header_bytes).to_bytes(8, "little") + header_bytes + payload


def save_checkpoint(
    path: str | Path,
    model: MultiExitEncoder,
    channel_mean: np.ndarray,
    channel_std: np.ndarray,
    global_step: int,
    epoch: int,
    seed: int,
) -> None:
    atomic_write_bytes(path, serialize_checkpoint(model, channel_mean, channel_std, global_step, epoch, seed))


def load_checkpoint(path: str | Path) -> CheckpointState:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise MalformedFileError(f"{path}: not a checkpoint (bad magic)")
    header_len = int.from_bytes(blob[8:16], "little")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFileError(f"{path}: corrupt checkpoint header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise MalformedFileError(
            f"{path}: unsupported checkpoint version {header.get('format_version')}"
        )
    config = ModelConfig(**header["model_config"])
    model = init_model(config, seed=0)
    float_dtypes = {e["dtype"] for e in header["arrays"] if e["dtype"].startswith("float")}
    if float_dtypes == {"float64"}:
        model = model.double()

    payload = blob[16 + header_len :]
    state = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(entry["dtype"]))
    model.load_state_dict(state)
    model.eval()
    return CheckpointState(
        model=model,
        model_config=config,
        channel_mean=np.asarray(header["normalization"]["mean"], dtype=np.float64),
        channel_std=np.asarray(header["normalization"]["std"], dtype=np.float64),
        global_step=int(header["global_step"]),
        epoch=int(header["epoch"]),
        seed=int(header["seed"]),
    )
