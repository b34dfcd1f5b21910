"""Checkpoint directory format and the binary tensor file it is built on.

A checkpoint is a directory:

    metadata.json   model config, build seed, training step, group names,
                    schedule parameters, queue info
    <group>.bin     one tensor file per parameter group
    queue.bin       negative-queue entries and their source-video ids

Tensor file layout (all integers little-endian):

    magic   4 bytes  b"TNSR"
    count   uint32   number of tensors
    per tensor:
        name_len  uint16
        name      UTF-8 bytes
        dtype     uint8   1=float32, 2=float64, 3=int64
        rank      uint8
        dims      rank * uint32
        data      row-major little-endian values

Round-trips are bit-exact; every file is written atomically (temp + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .diffusion import NoiseSchedule, make_linear_beta_schedule
from .errors import ConfigError, IntegrityError
from .model import ModelConfig, T2VModel, build_model

MAGIC = b"TNSR"
_DTYPE_TAGS = {torch.float32: 1, torch.float64: 2, torch.int64: 3}
_TAG_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_TAG_TORCH = {1: torch.float32, 2: torch.float64, 3: torch.int64}


def write_bytes_atomic(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path: Path, payload: dict) -> None:
    write_bytes_atomic(path, json.dumps(payload, indent=2).encode("utf-8"))


def save_tensors(path: Path, tensors: dict[str, torch.Tensor]) -> None:
    """Serialize named tensors into one file in the documented layout."""
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, tensor in tensors.items():
        t = tensor.detach().contiguous()
        if t.dtype not in _DTYPE_TAGS:
            raise ConfigError(f"unsupported tensor dtype {t.dtype} for {name!r}")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BB", _DTYPE_TAGS[t.dtype], t.ndim))
        chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
        array = t.numpy()
        if array.dtype.byteorder == ">":
            array = array.astype(array.dtype.newbyteorder("<"))
        chunks.append(array.tobytes())
    write_bytes_atomic(Path(path), b"".join(chunks))


def load_tensors(path: Path) -> dict[str, torch.Tensor]:
    """Read a tensor file back; raises IntegrityError naming the file on corruption."""
    path = Path(path)
    if not path.is_file():
        raise IntegrityError(f"{path}: missing tensor file")
    data = path.read_bytes()
    view = memoryview(data)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise IntegrityError(f"{path}: truncated tensor file")
        chunk = view[off : off + n]
        off += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise IntegrityError(f"{path}: bad magic, not a tensor file")
    (count,) = struct.unpack("<I", take(4))
    out: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2))
        if tag not in _TAG_DTYPES:
            raise IntegrityError(f"{path}: unknown dtype tag {tag} for {name!r}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        dtype = _TAG_DTYPES[tag]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        array = np.frombuffer(take(n_bytes), dtype=dtype).reshape(dims).copy()
        out[name] = torch.from_numpy(array).to(_TAG_TORCH[tag])
    if off != len(view):
        raise IntegrityError(f"{path}: {len(view) - off} trailing bytes")
    return out


def _config_dict(config: ModelConfig) -> dict:
    return {
        "H": config.H,
        "W": config.W,
        "C": config.C,
        "F": config.F,
        "M": config.M,
        "D": config.D,
        "K": config.K,
        "channels": list(config.channels),
        "heads": config.heads,
        "map_hidden": config.map_hidden,
        "queue_capacity": config.queue_capacity,
        "vocab": list(config.vocab),
        "seed": config.seed,
    }


def config_from_dict(payload: dict) -> ModelConfig:
    payload = dict(payload)
    payload["channels"] = tuple(payload["channels"])
    payload["vocab"] = tuple(payload["vocab"])
    return ModelConfig(**payload)


def spatial_param_hash(model: T2VModel) -> str:
    """SHA-256 over the spatial parameter group, byte-exact freeze witness."""
    digest = hashlib.sha256()
    for name, p in model.param_groups()["spatial"]:
        digest.update(name.encode("utf-8"))
        digest.update(p.detach().contiguous().numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(
    model: T2VModel,
    queue,
    step: int,
    path: Path,
    schedule: Optional[NoiseSchedule] = None,
) -> Path:
    """Write the checkpoint directory; pass queue=None when no queue exists yet."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    groups = model.param_groups()
    for group, params in groups.items():
        save_tensors(path / f"{group}.bin", {name: p for name, p in params})
    queue_size = 0
    if queue is not None and len(queue) > 0:
        queue_size = len(queue)
        save_tensors(
            path / "queue.bin",
            {
                "entries": queue.entries(),
                "video_ids": torch.tensor(queue.video_ids(), dtype=torch.int64),
            },
        )
    meta = {
        "schema_version": 1,
        "model": _config_dict(model.config),
        "schedule": None
        if schedule is None
        else {
            "T": schedule.T,
            "beta_start": float(schedule.betas[0]),
            "beta_end": float(schedule.betas[-1]),
        },
        "seed": model.build_seed,
        "step": int(step),
        "groups": list(groups),
        "spatial_frozen": model.spatial_frozen,
        "queue": {
            "capacity": queue.capacity if queue is not None else model.config.queue_capacity,
            "size": queue_size,
        },
    }
    write_json_atomic(path / "metadata.json", meta)
    return path


@dataclass
class LoadedCheckpoint:
    model: T2VModel
    queue: Optional[object]
    step: int
    schedule: Optional[NoiseSchedule]
    metadata: dict


def load_checkpoint(path: Path, expected_config: Optional[ModelConfig] = None) -> LoadedCheckpoint:
    """Rebuild model (bit-exact), queue, step, and schedule from a checkpoint directory."""
    from .losses import NegativeQueue  # local import to avoid a cycle

    path = Path(path)
    meta_path = path / "metadata.json"
    if not meta_path.is_file():
        raise IntegrityError(f"{meta_path}: missing checkpoint metadata")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{meta_path}: invalid JSON ({exc})") from exc

    config = config_from_dict(meta["model"])
    if expected_config is not None and expected_config != config:
        diffs = [
            f
            for f in _config_dict(config)
            if _config_dict(config)[f] != _config_dict(expected_config)[f]
        ]
        raise ConfigError(f"checkpoint model config differs from expected in: {diffs}")

    model = build_model(config, meta["seed"])
    state = {}
    for group in meta["groups"]:
        state.update(load_tensors(path / f"{group}.bin"))
    missing = set(dict(model.named_parameters())) - set(state)
    if missing:
        raise IntegrityError(f"{path}: checkpoint missing parameters {sorted(missing)[:5]}")
    with torch.no_grad():
        for name, p in model.named_parameters():
            if tuple(state[name].shape) != tuple(p.shape):
                raise IntegrityError(f"{path}: shape mismatch for {name}")
            p.copy_(state[name])
    if meta.get("spatial_frozen"):
        model.freeze_spatial()

    queue = None
    queue_file = path / "queue.bin"
    if queue_file.is_file():
        stored = load_tensors(queue_file)
        queue = NegativeQueue.restore(
            meta["queue"]["capacity"], stored["entries"], stored["video_ids"]
        )

    schedule = None
    if meta.get("schedule"):
        s = meta["schedule"]
        schedule = make_linear_beta_schedule(s["T"], s["beta_start"], s["beta_end"])
    return LoadedCheckpoint(model, queue, int(meta["step"]), schedule, meta)
