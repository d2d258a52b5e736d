"""Named-tensor container used for checkpoints and forecast outputs.

Layout (little-endian), sharing the O2VD header conventions::

    magic    b"O2VC"
    version  u32 = 1
    count    u32
    per entry:
      name_len u32, name utf-8
      kind     u32   0 = f32, 1 = f64, 2 = utf-8 text, 3 = u8
      rank     u32, dims u32[rank]
      payload  row-major bytes
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"O2VC"
VERSION = 1
_KINDS = {0: "<f4", 1: "<f8", 3: "u1"}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 3}


class CheckpointFormatError(ValueError):
    pass


def dumps(entries: dict) -> bytes:
    parts = [MAGIC, struct.pack("<2I", VERSION, len(entries))]
    for name, value in entries.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        if isinstance(value, str):
            payload = value.encode("utf-8")
            parts.append(struct.pack("<3I", 2, 1, len(payload)) + payload)
            continue
        arr = np.asarray(value)
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        parts.append(struct.pack(f"<2I{arr.ndim}I", code, arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_KINDS[code]).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict:
    if blob[:4] != MAGIC:
        raise CheckpointFormatError("bad magic")
    try:
        version, count = struct.unpack_from("<2I", blob, 4)
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported version {version}")
        offset = 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + n].decode("utf-8")
            offset += n
            code, rank = struct.unpack_from("<2I", blob, offset)
            offset += 8
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            if code == 2:
                size = dims[0]
                if offset + size > len(blob):
                    raise CheckpointFormatError("truncated payload")
                out[name] = blob[offset : offset + size].decode("utf-8")
                offset += size
                continue
            if code not in _KINDS:
                raise CheckpointFormatError(f"unknown entry kind {code}")
            dt = np.dtype(_KINDS[code])
            count_items = int(np.prod(dims)) if rank else 1
            size = count_items * dt.itemsize
            if offset + size > len(blob):
                raise CheckpointFormatError("truncated payload")
            arr = np.frombuffer(blob, dt, count_items, offset).reshape(dims)
            out[name] = arr.astype(dt.newbyteorder("="))
            offset += size
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated container: {exc}") from None
    if offset != len(blob):
        raise CheckpointFormatError("trailing bytes after last entry")
    return out


def save(path, entries: dict) -> None:
    """Atomic write: a crash never leaves a half-written file at ``path``."""
    blob = dumps(entries)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())


def save_model(path, config: dict, params: dict, extra: dict | None = None) -> None:
    entries = {"__config__": json.dumps(config, sort_keys=True)}
    for k, v in (extra or {}).items():
        entries[k] = v
    entries.update(params)
    save(path, entries)


def load_model(path) -> tuple[dict, dict, dict]:
    """Returns ``(config, params, extra)``; params keep their stored order."""
    entries = load(path)
    config = json.loads(entries.pop("__config__"))
    extra = {k: entries.pop(k) for k in list(entries) if k.startswith("__")}
    return config, entries, extra
