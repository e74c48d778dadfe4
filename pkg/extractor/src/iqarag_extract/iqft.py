"""Writer and reader for the IQFT feature-file format.

Layout, all little-endian:

    magic   4 bytes  b"IQFT"
    version u32      1
    count   u64      number of rows
    dim     u32      floats per row
    tag     u16 length + UTF-8 bytes, the encoder tag
    data    count * dim float32, row-major
    ids     count * (u16 length + UTF-8 bytes), one per row

This module is self-contained on purpose: downstream consumers carry
their own reader, and round-tripping through both sides is how the
format contract is checked.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"IQFT"
VERSION = 1


def write_iqft(
    path: str | Path,
    ids: list[str],
    vectors: np.ndarray,
    tag: str,
) -> None:
    """Write rows to ``path`` atomically.

    ``vectors`` must be a 2-D array with one row per id; values are
    stored as float32 and must be finite.
    """
    arr = np.ascontiguousarray(vectors, dtype=np.float32)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D vector array, got shape {arr.shape}")
    if arr.shape[0] != len(ids):
        raise ValidationError(f"{len(ids)} ids but {arr.shape[0]} vector rows")
    if arr.size and not np.isfinite(arr).all():
        raise ValidationError("vectors contain non-finite values")

    chunks = [MAGIC, struct.pack("<IQI", VERSION, arr.shape[0], arr.shape[1])]
    chunks.append(_pack_str(tag))
    chunks.append(arr.tobytes(order="C"))
    for image_id in ids:
        chunks.append(_pack_str(image_id))

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def read_iqft(path: str | Path) -> tuple[list[str], np.ndarray, str]:
    """Read a feature file, returning ``(ids, vectors, tag)``."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read feature file '{path}': {exc}") from exc

    offset = 0

    def need(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise ValidationError(f"{path}: truncated while reading {what} at offset {offset}")
        piece = blob[offset : offset + n]
        offset += n
        return piece

    if need(4, "magic") != MAGIC:
        raise ValidationError(f"{path}: bad magic, not a feature file")
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    count, dim = struct.unpack("<QI", need(12, "header"))
    (tag_len,) = struct.unpack("<H", need(2, "tag length"))
    tag = _decode(need(tag_len, "tag"), path, "tag")

    data = need(count * dim * 4, "vector data")
    arr = np.frombuffer(data, dtype="<f4").reshape(count, dim).copy()
    if arr.size and not np.isfinite(arr).all():
        raise ValidationError(f"{path}: vector data contains non-finite values")

    ids = []
    for i in range(count):
        (id_len,) = struct.unpack("<H", need(2, f"id length {i}"))
        ids.append(_decode(need(id_len, f"id {i}"), path, f"id {i}"))
    if offset != len(blob):
        raise ValidationError(f"{path}: {len(blob) - offset} bytes of trailing data")
    return ids, arr, tag


def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError(f"string too long to encode ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def _decode(raw: bytes, path: Path, what: str) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{path}: {what} is not valid UTF-8") from exc
