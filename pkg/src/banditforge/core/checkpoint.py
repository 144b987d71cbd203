"""Parameter container: a UTF-8 JSON manifest followed by a float32 blob.

The manifest is padded with spaces so the blob starts at a 64-byte boundary.
It records the format tag, the blob's byte offset, the total float count and
the slice of every named array.  Writes go to a temporary file in the target
directory which is then renamed, so a reader never sees a partial file.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

_ALIGN = 64


class CheckpointError(ValueError):
    pass


def save(path: str | os.PathLike, tag: str, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    parts, index, count = [], {}, 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4").ravel()
        index[name] = {"start": count, "count": int(a.size)}
        parts.append(a)
        count += a.size
    blob = np.concatenate(parts) if parts else np.zeros(0, "<f4")

    manifest = {"format": tag, "offset": 0, "count": int(count), "arrays": index, "meta": meta}
    # the offset field is part of the header, so iterate until it is stable
    offset = 0
    while True:
        manifest["offset"] = offset
        head = json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n"
        need = -(-len(head) // _ALIGN) * _ALIGN
        if need == offset:
            break
        offset = need
    head = head[:-1] + b" " * (offset - len(head)) + b"\n"

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(head)
            f.write(blob.tobytes())
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load(path: str | os.PathLike, tag: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, arrays)``; raises :class:`CheckpointError` on bad files."""
    data = Path(path).read_bytes()
    try:
        text = data[: data.index(b"\n") + 1].decode("utf-8")
        manifest = json.loads(text)
        offset, count = int(manifest["offset"]), int(manifest["count"])
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    if tag is not None and manifest.get("format") != tag:
        raise CheckpointError(f"{path}: expected format {tag!r}, found {manifest.get('format')!r}")
    if len(data) != offset + 4 * count:
        raise CheckpointError(f"{path}: blob has {len(data) - offset} bytes, expected {4 * count}")
    blob = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float32)
    arrays = {
        name: blob[s["start"] : s["start"] + s["count"]].copy() for name, s in manifest["arrays"].items()
    }
    return manifest["meta"], arrays
