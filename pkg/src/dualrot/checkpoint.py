"""Binary checkpoints.

Layout::

    b"CAMT" | u32 version | u64 manifest length | manifest (UTF-8 JSON) | payload

The payload is little-endian float64: every student tensor, then every
teacher tensor (if present), then every momentum buffer, in manifest order.
Offsets in the manifest are relative to the start of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .gradcore import Tensor
from .segmodel import ModelParams
from .trainer import TrainState

MAGIC = b"CAMT"
VERSION = 1
_HEAD = struct.Struct("<4sIQ")
_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _blocks(state: TrainState):
    yield "student", state.student.arrays()
    if state.teacher is not None:
        yield "teacher", state.teacher.arrays()
    yield "momentum", state.momentum


def dumps(state: TrainState, config: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for group, arrays in _blocks(state):
        for name, arr in zip(state.student.names, arrays):
            raw = np.ascontiguousarray(arr, dtype=_F64).tobytes()
            entries.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    manifest = {
        "params": entries,
        "has_teacher": state.teacher is not None,
        "epoch": state.epoch,
        "iter": state.iter,
        "config_hash": config_hash(config) if config is not None else None,
        "config": config,
        "payload_bytes": offset,
    }
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return _HEAD.pack(MAGIC, VERSION, len(text)) + text + b"".join(chunks)


def loads(buf: bytes) -> tuple[TrainState, dict]:
    """Returns (state, manifest). Raises CheckpointError on any corruption."""
    if len(buf) < _HEAD.size:
        raise CheckpointError(f"corrupt checkpoint: {len(buf)} bytes is shorter than the header")
    magic, version, mlen = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError(f"corrupt checkpoint: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _HEAD.size + mlen
    if start > len(buf):
        raise CheckpointError("corrupt checkpoint: manifest truncated")
    try:
        manifest = json.loads(buf[_HEAD.size : start].decode("utf-8"))
        entries = manifest["params"]
        total = int(manifest["payload_bytes"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: unreadable manifest ({exc})") from None
    if len(buf) - start != total:
        raise CheckpointError(f"corrupt checkpoint: payload is {len(buf) - start} bytes, manifest says {total}")

    groups: dict[str, tuple[list, list]] = {}
    try:
        for e in entries:
            shape = tuple(int(d) for d in e["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            off = int(e["offset"])
            if off < 0 or off + 8 * count > total:
                raise CheckpointError(f"corrupt checkpoint: tensor {e['name']} out of payload bounds")
            arr = np.frombuffer(buf, dtype=_F64, count=count, offset=start + off).reshape(shape).astype(np.float64)
            names, arrays = groups.setdefault(e["group"], ([], []))
            names.append(e["name"])
            arrays.append(arr)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: bad tensor entry ({exc})") from None

    if "student" not in groups or "momentum" not in groups:
        raise CheckpointError("corrupt checkpoint: missing student or momentum block")
    names, arrays = groups["student"]
    student = ModelParams(names, [Tensor(a, requires_grad=True) for a in arrays])
    teacher = None
    if "teacher" in groups:
        tn, ta = groups["teacher"]
        if tn != names:
            raise CheckpointError("corrupt checkpoint: teacher and student parameter names differ")
        teacher = ModelParams(tn, [Tensor(a) for a in ta])
    if groups["momentum"][0] != names:
        raise CheckpointError("corrupt checkpoint: momentum and student parameter names differ")
    state = TrainState(student, teacher, groups["momentum"][1], int(manifest["iter"]), int(manifest["epoch"]))
    return state, manifest


def save(path, state: TrainState, config: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(state, config))
    tmp.replace(path)


def load(path) -> tuple[TrainState, dict]:
    return loads(Path(path).read_bytes())
