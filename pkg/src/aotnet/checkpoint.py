"""Single-file, versioned checkpoint container.

Layout: 8-byte magic, little-endian u64 header length, a JSON header with
sorted keys, then the raw little-endian tensor bytes in header order. The
encoding is fully deterministic, so save -> load -> save reproduces the
same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

MAGIC = b"AOTNETCK"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_state: dict[str, torch.Tensor]
    config: dict[str, Any]  # flat model + train config
    vocab: list[str]  # non-reserved tokens in id order
    optimizer_state: dict | None = None
    step: int = 0
    history: list = field(default_factory=list)
    format_version: int = FORMAT_VERSION


def _tensor_entries(tensors: dict[str, torch.Tensor]):
    """Deduplicate shared tensors (tied embeddings) by storage identity."""
    entries, aliases, seen = [], {}, {}
    for name in sorted(tensors):
        t = tensors[name].detach()
        key = (t.data_ptr(), tuple(t.shape), t.dtype)
        if t.numel() and key in seen:
            aliases[name] = seen[key]
            continue
        seen[key] = name
        entries.append((name, t))
    return entries, aliases


def _optimizer_to_flat(state: dict | None):
    if state is None:
        return None, {}
    tensors = {}
    per_param = {}
    for idx, values in state["state"].items():
        keys = []
        for key, value in values.items():
            if isinstance(value, torch.Tensor):
                tensors[f"optim/{idx}/{key}"] = value
                keys.append(key)
        per_param[str(idx)] = sorted(keys)
    groups = []
    for group in state["param_groups"]:
        groups.append({k: list(v) if isinstance(v, tuple) else v for k, v in group.items()})
    return {"param_groups": groups, "state": per_param}, tensors


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    optim_header, optim_tensors = _optimizer_to_flat(ckpt.optimizer_state)
    model_entries, aliases = _tensor_entries({f"model/{k}": v for k, v in ckpt.model_state.items()})
    entries = model_entries + sorted(optim_tensors.items())
    blobs, specs, offset = [], [], 0
    for name, tensor in entries:
        tensor = tensor.detach().contiguous().cpu()
        if tensor.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {tensor.dtype} for {name}")
        data = tensor.numpy().astype(_DTYPES[tensor.dtype], copy=False).tobytes()
        specs.append({"name": name, "dtype": _DTYPES[tensor.dtype], "shape": list(tensor.shape),
                      "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": ckpt.format_version,
        "config": ckpt.config,
        "vocab": ckpt.vocab,
        "step": ckpt.step,
        "history": ckpt.history,
        "optimizer": optim_header,
        "tensors": specs,
        "aliases": aliases,
    }
    raw = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n_header,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n_header].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    body = data[16 + n_header:]
    tensors = {}
    for spec in header["tensors"]:
        chunk = body[spec["offset"]: spec["offset"] + spec["nbytes"]]
        arr = np.frombuffer(chunk, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"]).copy()
        tensors[spec["name"]] = torch.from_numpy(arr)
    for alias, target in header["aliases"].items():
        tensors[alias] = tensors[target]
    model_state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    optimizer_state = None
    if header["optimizer"] is not None:
        state = {}
        for idx, keys in header["optimizer"]["state"].items():
            state[int(idx)] = {key: tensors[f"optim/{idx}/{key}"] for key in keys}
        groups = [{k: tuple(v) if k == "betas" else v for k, v in g.items()}
                  for g in header["optimizer"]["param_groups"]]
        optimizer_state = {"state": state, "param_groups": groups}
    return Checkpoint(model_state, header["config"], header["vocab"], optimizer_state,
                      header["step"], header["history"], header["format_version"])
