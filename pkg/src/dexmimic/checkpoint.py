"""Binary checkpoint container shared by state and visual policies.

Layout::

    b"DMCK" | u32 header length (LE) | header JSON (sorted keys, UTF-8) | payload

The header carries caller metadata plus a ``tensors`` table of
``{"name", "shape", "offset"}`` entries; the payload is every tensor as
little-endian float64, in table order. Writing the same header and tensors
always yields the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch

from dexmimic.errors import CheckpointError

MAGIC = b"DMCK"
_DTYPE = np.dtype("<f8")


@dataclass(frozen=True, eq=False)
class Checkpoint:
    header: dict[str, Any]
    tensors: dict[str, np.ndarray]


def encode_checkpoint(header: Mapping[str, Any], tensors: Mapping[str, np.ndarray]) -> bytes:
    if "tensors" in header:
        raise ValueError("'tensors' is reserved in checkpoint headers")
    table = []
    chunks = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype=_DTYPE))
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    meta = json.dumps({**header, "tensors": table}, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(meta)) + meta + b"".join(chunks)


def decode_checkpoint(data: bytes, source: Any = "<bytes>") -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError(source, "not a checkpoint (bad magic)")
    if len(data) < 8:
        raise CheckpointError(source, "truncated header length")
    (length,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + length:
        raise CheckpointError(source, "truncated header")
    try:
        header = json.loads(data[8:8 + length].decode())
        table = header.pop("tensors")
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, AttributeError) as exc:
        raise CheckpointError(source, f"corrupt header ({exc})") from exc
    payload = data[8 + length:]
    tensors: dict[str, np.ndarray] = {}
    try:
        for entry in table:
            shape = tuple(int(d) for d in entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            start = int(entry["offset"])
            end = start + count * _DTYPE.itemsize
            if end > len(payload):
                raise CheckpointError(source, f"truncated payload for tensor {entry['name']!r}")
            tensors[entry["name"]] = (
                np.frombuffer(payload[start:end], dtype=_DTYPE).astype(np.float64).reshape(shape)
            )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(source, f"corrupt tensor table ({exc})") from exc
    return Checkpoint(header=header, tensors=tensors)


def write_checkpoint(
    path: Path | str, header: Mapping[str, Any], tensors: Mapping[str, np.ndarray],
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(header, tensors))


def read_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(path, f"cannot read ({exc})") from exc
    return decode_checkpoint(data, source=path)


def file_sha256(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# torch modules
# ---------------------------------------------------------------------------

def module_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    """Every parameter and buffer of *module* as float64 numpy arrays."""
    return {
        f"{prefix}{name}": value.detach().cpu().to(torch.float64).numpy().copy()
        for name, value in module.state_dict().items()
    }


def load_module_arrays(
    module: torch.nn.Module, tensors: Mapping[str, np.ndarray], prefix: str = "", source: Any = "",
) -> None:
    state = {}
    for name, current in module.state_dict().items():
        key = f"{prefix}{name}"
        if key not in tensors:
            raise CheckpointError(source, f"missing tensor {key!r}")
        value = torch.from_numpy(np.array(tensors[key])).to(current.dtype)
        if tuple(value.shape) != tuple(current.shape):
            raise CheckpointError(
                source,
                f"tensor {key!r} has shape {tuple(value.shape)}, expected {tuple(current.shape)}",
            )
        state[name] = value
    module.load_state_dict(state)
