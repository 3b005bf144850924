"""Exact text container for float64 arrays.

Layout::

    NUMCORE-CKPT v1
    records <n>
    <name> <shape> <hex>        # n lines; shape like 3x4, "scalar" for 0-d
    meta <json>                 # optional
    checksum <sha256 of everything above>

Values are big-endian IEEE-754 doubles rendered as hex, so the round trip is
bit-exact on any platform.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = "NUMCORE-CKPT"
VERSION = "v1"


class CheckpointError(ValueError):
    pass


def _shape_str(shape) -> str:
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "scalar":
        return ()
    return tuple(int(s) for s in text.split("x"))


def encode_array(arr: np.ndarray) -> str:
    arr = np.asarray(arr, dtype=np.float64)
    return arr.astype(">f8").tobytes().hex() if arr.size else "-"


def decode_array(text: str, shape: tuple[int, ...]) -> np.ndarray:
    if text == "-":
        return np.zeros(shape)
    raw = bytes.fromhex(text)
    return np.frombuffer(raw, dtype=">f8").astype(np.float64).reshape(shape)


def dumps(records: list[tuple[str, np.ndarray]], meta: dict | None = None) -> str:
    lines = [f"{MAGIC} {VERSION}", f"records {len(records)}"]
    for name, arr in records:
        if not name or any(ch.isspace() for ch in name):
            raise CheckpointError(f"record name {name!r} must be non-empty without whitespace")
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(f"{name} {_shape_str(arr.shape)} {encode_array(arr)}")
    if meta is not None:
        lines.append("meta " + json.dumps(meta, sort_keys=True, separators=(",", ":")))
    body = "\n".join(lines) + "\n"
    return body + f"checksum {hashlib.sha256(body.encode()).hexdigest()}\n"


def loads(text: str) -> tuple[list[tuple[str, np.ndarray]], dict | None]:
    lines = text.split("\n")
    if not lines or not lines[0].startswith(MAGIC):
        raise CheckpointError("not a numcore checkpoint (missing header)")
    version = lines[0][len(MAGIC):].strip()
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version!r} is not supported (expected {VERSION!r})")
    if not text.endswith("\n") or len(lines) < 4 or not lines[-2].startswith("checksum "):
        raise CheckpointError("checkpoint is truncated (no checksum trailer)")
    body = "\n".join(lines[:-2]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != lines[-2].split(" ", 1)[1]:
        raise CheckpointError("checkpoint checksum mismatch (corrupt or truncated)")
    try:
        n = int(lines[1].split(" ", 1)[1])
        records = []
        for line in lines[2:2 + n]:
            name, shape, payload = line.split(" ")
            records.append((name, decode_array(payload, _parse_shape(shape))))
        rest = lines[2 + n:-2]
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint record: {exc}") from None
    meta = None
    for line in rest:
        if line.startswith("meta "):
            meta = json.loads(line[5:])
    return records, meta


def save_arrays(path, records, meta=None) -> None:
    Path(path).write_text(dumps(records, meta))


def load_arrays(path):
    return loads(Path(path).read_text())
