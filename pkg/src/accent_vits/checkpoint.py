"""Single-file checkpoint container.

Layout::

    8 bytes   magic  b"AVITSCK\\0"
    4 bytes   format version, uint32 little-endian
    8 bytes   header length H, uint64 little-endian
    H bytes   UTF-8 JSON header
    ...       tensor payloads, little-endian float32, row-major, concatenated

The header holds ``model_config``, ``train_config``, ``step``, free-form
``meta`` (phoneme registry, speaker table), non-tensor optimizer/scheduler
state, and a ``tensors`` list of ``{name, shape, offset, nbytes}`` entries
where ``offset`` counts from the first payload byte.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

MAGIC = b"AVITSCK\0"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict | None
    step: int
    tensors: dict[str, torch.Tensor]
    meta: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)


def _flatten_optimizer(prefix: str, opt_state: dict, tensors: dict[str, torch.Tensor]) -> dict:
    """Move tensors out of an optimizer state_dict; return its JSON-able remainder."""
    plain_state: dict[str, dict] = {}
    for idx, st in opt_state["state"].items():
        entry = {}
        for key, val in st.items():
            if isinstance(val, torch.Tensor):
                tensors[f"{prefix}/state/{idx}/{key}"] = val
                entry[key] = "__tensor__"
            else:
                entry[key] = val
        plain_state[str(idx)] = entry
    return {"state": plain_state, "param_groups": opt_state["param_groups"]}


def _unflatten_optimizer(prefix: str, plain: dict, tensors: dict[str, torch.Tensor]) -> dict:
    state = {}
    for idx, entry in plain["state"].items():
        st = {}
        for key, val in entry.items():
            st[key] = tensors[f"{prefix}/state/{idx}/{key}"] if val == "__tensor__" else val
        state[int(idx)] = st
    return {"state": state, "param_groups": plain["param_groups"]}


def write_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    entries = []
    payloads = []
    offset = 0
    for name, t in ckpt.tensors.items():
        arr = t.detach().cpu().contiguous()
        if arr.dtype != torch.float32:
            raise CheckpointError(f"tensor {name!r} has dtype {arr.dtype}, only float32 is stored")
        data = arr.numpy().astype("<f4", copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        payloads.append(data)
        offset += len(data)
    header = {
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "step": ckpt.step,
        "meta": ckpt.meta,
        "state": ckpt.state,
        "tensors": entries,
    }
    hbytes = json.dumps(header).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<IQ", VERSION, len(hbytes)))
            f.write(hbytes)
            for data in payloads:
                f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    try:
        header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    base = 20 + hlen
    tensors: dict[str, torch.Tensor] = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        end = start + e["nbytes"]
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {e['name']!r}")
        arr = np.frombuffer(raw[start:end], dtype="<f4").astype(np.float32).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.copy())
    return Checkpoint(
        model_config=header["model_config"],
        train_config=header.get("train_config"),
        step=int(header["step"]),
        tensors=tensors,
        meta=header.get("meta", {}),
        state=header.get("state", {}),
    )


def module_tensors(prefix: str, module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def load_module(prefix: str, module: torch.nn.Module, tensors: dict[str, torch.Tensor]) -> None:
    sd = {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + "/")}
    missing = set(module.state_dict()) - set(sd)
    unexpected = set(sd) - set(module.state_dict())
    if missing or unexpected:
        raise CheckpointError(
            f"{prefix}: parameter mismatch (missing {sorted(missing)[:5]}, unexpected {sorted(unexpected)[:5]})"
        )
    for k, v in module.state_dict().items():
        if tuple(sd[k].shape) != tuple(v.shape):
            raise CheckpointError(f"{prefix}/{k}: shape {tuple(sd[k].shape)} != {tuple(v.shape)}")
    module.load_state_dict(sd)


def optimizer_tensors(prefix: str, opt: torch.optim.Optimizer, tensors: dict[str, torch.Tensor]) -> dict:
    return _flatten_optimizer(prefix, opt.state_dict(), tensors)


def load_optimizer(prefix: str, opt: torch.optim.Optimizer, plain: dict, tensors: dict[str, torch.Tensor]) -> None:
    opt.load_state_dict(_unflatten_optimizer(prefix, plain, tensors))


def dump_state(obj: Any) -> Any:
    """JSON round-trip guard for scheduler state and similar plain dicts."""
    return json.loads(json.dumps(obj))
