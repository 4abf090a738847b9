"""Binary checkpoint container: config snapshot, parameter blobs, optimizer
state, step counter, and a content checksum."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import RunConfig, config_from_dict
from .model import SeasonalMAE
from .optim import OptimizerState

_MAGIC = b"SEAMOCK1"
_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointData:
    config: RunConfig
    params: dict[str, np.ndarray]
    optimizer: dict | None
    step: int
    stage: str


def save_checkpoint(model: SeasonalMAE, path, step: int = 0,
                    stage: str = "", optimizer: OptimizerState | None = None) -> None:
    param_names = sorted(model.params)
    header = {
        "config": model.cfg.to_dict(),
        "step": step,
        "stage": stage,
        "params": [{"name": n, "shape": list(model.params[n].shape)}
                   for n in param_names],
        "optimizer": None,
    }
    blobs = [model.params[n].data for n in param_names]
    if optimizer is not None:
        moment_names = sorted(optimizer.m)
        header["optimizer"] = {
            "base_lr": optimizer.base_lr,
            "weight_decay": optimizer.weight_decay,
            "warmup_steps": optimizer.warmup_steps,
            "total_steps": optimizer.total_steps,
            "betas": list(optimizer.betas),
            "eps": optimizer.eps,
            "step_count": optimizer.step_count,
            "moments": [{"name": n, "shape": list(optimizer.m[n].shape)}
                        for n in moment_names],
        }
        for n in moment_names:
            blobs.append(optimizer.m[n])
        for n in moment_names:
            blobs.append(optimizer.v[n])

    header_bytes = json.dumps(header, sort_keys=True).encode()
    body = bytearray()
    body += _MAGIC
    body += struct.pack("<IQ", _VERSION, len(header_bytes))
    body += header_bytes
    for blob in blobs:
        body += np.ascontiguousarray(blob, dtype="<f8").tobytes()
    digest = hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as f:
        f.write(bytes(body))
        f.write(digest)


def load_checkpoint(path) -> CheckpointData:
    """Parse and verify a checkpoint; no state is constructed on failure."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(_MAGIC) + 12 + 32:
        raise CheckpointError("checkpoint file truncated")
    body, digest = raw[:-32], raw[-32:]
    if body[:len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"bad checkpoint magic {body[:len(_MAGIC)]!r}")
    version, header_len = struct.unpack_from("<IQ", body, len(_MAGIC))
    if version != _VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} unsupported; migration refused")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint payload corrupted")
    off = len(_MAGIC) + 12
    try:
        header = json.loads(body[off:off + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}")
    off += header_len

    def take(shape) -> np.ndarray:
        nonlocal off
        n = int(np.prod(shape)) if shape else 1
        end = off + 8 * n
        if end > len(body):
            raise CheckpointError("checkpoint payload shorter than header claims")
        arr = np.frombuffer(body[off:end], dtype="<f8").reshape(shape).copy()
        off = end
        return arr

    params = {e["name"]: take(e["shape"]) for e in header["params"]}
    optimizer = header["optimizer"]
    if optimizer is not None:
        optimizer = dict(optimizer)
        optimizer["m"] = {e["name"]: take(e["shape"]) for e in optimizer["moments"]}
        optimizer["v"] = {e["name"]: take(e["shape"]) for e in optimizer["moments"]}
    if off != len(body):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return CheckpointData(config=config_from_dict(header["config"]), params=params,
                          optimizer=optimizer, step=int(header["step"]),
                          stage=header.get("stage", ""))


def restore_model(data: CheckpointData) -> SeasonalMAE:
    """Build a model from checkpoint data; mismatches fail before mutation."""
    model = SeasonalMAE(data.config)
    model.init_params()
    try:
        model.load_params({k: Tensor(v) for k, v in data.params.items()},
                          strict=True)
    except ValueError as e:
        raise CheckpointError(f"architecture mismatch: {e}")
    return model


def restore_optimizer(data: CheckpointData) -> OptimizerState | None:
    if data.optimizer is None:
        return None
    o = data.optimizer
    state = OptimizerState(base_lr=o["base_lr"], weight_decay=o["weight_decay"],
                           warmup_steps=o["warmup_steps"],
                           total_steps=o["total_steps"],
                           betas=tuple(o["betas"]), eps=o["eps"],
                           step_count=o["step_count"])
    state.m = o["m"]
    state.v = o["v"]
    return state
