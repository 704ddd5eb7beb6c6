"""Checkpoint and SID-table files.

Checkpoint layout::

    8 bytes   magic b"SIDTOKCK"
    u32 LE    format version
    u32 LE    header length in bytes
    header    UTF-8 JSON: config, step, rng state, code-usage counters, tensor list
    blobs     little-endian float32 tensors, in header order

Parameter values and Adam moments live on the float32 grid, so a round
trip is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import CheckpointError, ConfigError, CorruptCheckpointError, DataError
from .numeric import restore_rng, rng_state
from .tokenizer import TokenizerModel
from .trainer import ModelState

MAGIC = b"SIDTOKCK"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def _tensors(state: ModelState):
    for p in state.parameters():
        yield p.name, p.value
        yield p.name + ".m", p.m
        yield p.name + ".v", p.v


def checkpoint_bytes(state: ModelState) -> bytes:
    header = {
        "config": state.config.to_dict(),
        "step": state.step,
        "rng": rng_state(state.rng),
        "last_used": state.last_used.tolist(),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in _tensors(state)],
    }
    head = json.dumps(header, sort_keys=True).encode()
    parts = [_PREFIX.pack(MAGIC, VERSION, len(head)), head]
    parts += [np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in _tensors(state)]
    return b"".join(parts)


def state_digest(state: ModelState) -> str:
    return hashlib.sha256(checkpoint_bytes(state)).hexdigest()


def save_checkpoint(state: ModelState, path) -> None:
    try:
        Path(path).write_bytes(checkpoint_bytes(state))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from None


def load_checkpoint(path) -> ModelState:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(blob) < _PREFIX.size:
        raise CorruptCheckpointError(f"{path}: truncated prefix")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    body_at = _PREFIX.size + head_len
    if len(blob) < body_at:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[_PREFIX.size:body_at])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from None

    try:
        config = TrainConfig.from_dict(header["config"])
        model = TokenizerModel(config.tokenizer, np.random.default_rng(0))
        model.codebooks_ready = True
        state = ModelState(config, model, restore_rng(header["rng"]), step=int(header["step"]))
        state.last_used = np.asarray(header["last_used"],
                                     dtype=np.int64).reshape(state.last_used.shape)
        tensors = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: bad header ({exc})") from None

    params = {p.name: p for p in state.parameters()}
    offset = body_at
    seen = set()
    for name, shape in tensors:
        n = int(np.prod(shape)) * 4
        if offset + n > len(blob):
            raise CorruptCheckpointError(f"{path}: truncated tensor {name}")
        arr = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=offset)
        arr = arr.reshape(shape).astype(np.float64)
        offset += n
        if name.endswith(".m"):
            target, attr = name[:-2], "m"
        elif name.endswith(".v"):
            target, attr = name[:-2], "v"
        else:
            target, attr = name, "value"
        if target not in params or params[target].shape != shape:
            raise CorruptCheckpointError(f"{path}: unexpected tensor {name} {shape}")
        setattr(params[target], attr, arr)
        seen.add(name)
    missing = {n for n, _ in _tensors(state)} - seen
    if missing:
        raise CorruptCheckpointError(f"{path}: missing tensors {sorted(missing)}")
    if offset != len(blob):
        raise CorruptCheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return state


def write_sid_table(path, ids, indices) -> None:
    """One line per item: ``item_id<TAB>i1 i2 ... iL``."""
    indices = np.asarray(indices)
    with open(path, "w") as fh:
        for item, row in zip(ids, indices):
            fh.write(f"{item}\t{' '.join(str(int(k)) for k in row)}\n")


def read_sid_table(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read SID table {path}: {exc}") from None
    width = None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        item, sep, rest = line.partition("\t")
        try:
            if not sep or not item:
                raise ValueError
            row = [int(tok) for tok in rest.split()]
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed SID line") from None
        if not row or (width is not None and len(row) != width) or min(row) < 0:
            raise DataError(f"{path}:{lineno}: malformed SID line")
        width = len(row)
        ids.append(item)
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: empty SID table")
    return ids, np.asarray(rows, dtype=np.int64)
