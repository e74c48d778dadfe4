"""Binary feature storage and service-backed feature acquisition.

File layout (version 1, all integers little-endian):

    magic    4 bytes   b"IQFT"
    version  u32
    count    u64       number of vectors
    dim      u32       vector dimension
    tag      u16 byte length + UTF-8 encoder tag
    data     count * dim float32, row-major
    ids      count strings, each u16 byte length + UTF-8

Vectors are stored as float32; distance math elsewhere runs in float64.
"""

from __future__ import annotations

import base64
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import requests

from .corpus import DatasetManifest, ImageRecord
from .errors import (
    BackendProtocolError,
    DimensionMismatchError,
    FeatureFileError,
    TransportError,
    UnknownImageError,
    ValidationError,
)

MAGIC = b"IQFT"
VERSION = 1

_MAX_U16 = 0xFFFF


@dataclass
class FeatureMatrix:
    """Row-aligned image ids and float32 feature vectors.

    Treated as immutable after construction: the data array is copied in
    and marked read-only.
    """

    ids: tuple[str, ...]
    data: np.ndarray = field(repr=False)
    encoder_tag: str = ""

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 2:
            raise ValidationError(f"feature data must be 2-D, got {arr.ndim}-D")
        if len(self.ids) != arr.shape[0]:
            raise ValidationError(
                f"{len(self.ids)} ids for {arr.shape[0]} feature rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("feature ids must be unique")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValidationError("feature data contains non-finite values")
        arr.setflags(write=False)
        self.ids = tuple(self.ids)
        self.data = arr
        self._row_of = {img_id: i for i, img_id in enumerate(self.ids)}

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __contains__(self, img_id: str) -> bool:
        return img_id in self._row_of

    def row_index(self, img_id: str) -> int:
        try:
            return self._row_of[img_id]
        except KeyError:
            raise UnknownImageError(f"no feature row for image id '{img_id}'") from None

    def row(self, img_id: str) -> np.ndarray:
        return self.data[self.row_index(img_id)]


def _atomic_write(path: Path, payload: bytes) -> None:
    # write-then-rename so a failure never leaves a partial file behind
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > _MAX_U16:
        raise ValidationError(f"string too long for u16 length prefix ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def write_features(matrix: FeatureMatrix, path: str | Path) -> None:
    """Serialize a feature matrix; the write is atomic."""
    path = Path(path)
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<Q", matrix.count),
        struct.pack("<I", matrix.dim),
        _pack_str(matrix.encoder_tag),
        np.ascontiguousarray(matrix.data, dtype="<f4").tobytes(),
    ]
    parts.extend(_pack_str(img_id) for img_id in matrix.ids)
    _atomic_write(path, b"".join(parts))


class _Cursor:
    """Forward-only reader that turns short reads into clear errors."""

    def __init__(self, buf: bytes, source: str):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise FeatureFileError(
                f"{self.source}: truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos})"
            )
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def string(self, what: str) -> str:
        length = self.u16(f"{what} length")
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FeatureFileError(f"{self.source}: {what} is not valid UTF-8") from exc


def read_features(path: str | Path) -> FeatureMatrix:
    """Deserialize a feature file, rejecting anything malformed."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FeatureFileError(f"cannot read feature file '{path}': {exc}") from exc

    cur = _Cursor(buf, str(path))
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = cur.u32("version")
    if version != VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    count = cur.u64("count")
    dim = cur.u32("dim")
    tag = cur.string("encoder tag")

    data_bytes = cur.take(count * dim * 4, "feature data")
    data = np.frombuffer(data_bytes, dtype="<f4").reshape(count, dim)
    if data.size and not np.all(np.isfinite(data)):
        raise FeatureFileError(f"{path}: feature data contains non-finite values")

    ids = tuple(cur.string(f"id {i}") for i in range(count))
    if cur.pos != len(buf):
        raise FeatureFileError(
            f"{path}: {len(buf) - cur.pos} bytes of trailing data after id table"
        )
    try:
        return FeatureMatrix(ids=ids, data=data, encoder_tag=tag)
    except ValidationError as exc:
        raise FeatureFileError(f"{path}: {exc}") from exc


def _post_json(url: str, body: dict, timeout: float) -> dict:
    try:
        resp = requests.post(url, json=body, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"embedding service unreachable: {exc}") from exc
    try:
        payload = resp.json()
    except ValueError:
        payload = None
    if resp.status_code != 200:
        detail = payload.get("error") if isinstance(payload, dict) else resp.text[:200]
        raise BackendProtocolError(
            f"embedding service returned status {resp.status_code}: {detail}"
        )
    if not isinstance(payload, dict):
        raise BackendProtocolError("embedding service reply is not a JSON object")
    return payload


def fetch_embeddings(
    endpoint: str,
    images: Sequence[ImageRecord],
    *,
    encoder: str = "",
    root: str | Path = ".",
    batch_size: int = 64,
    timeout: float = 30.0,
    read_image: Callable[[str], bytes] | None = None,
) -> FeatureMatrix:
    """Request feature vectors for images from an embedding service.

    Images are posted in batches as base64; rows come back in request
    order.  The vector dimension is taken from the first reply and every
    later batch must agree with it.
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    root = Path(root)

    def _default_read(rel_path: str) -> bytes:
        full = root / rel_path
        try:
            return full.read_bytes()
        except OSError as exc:
            raise ValidationError(f"cannot read image '{full}': {exc}") from exc

    reader = read_image or _default_read
    records = list(images)

    dim: int | None = None
    rows: list[np.ndarray] = []
    batches = [records[i:i + batch_size] for i in range(0, len(records), batch_size)]
    if not batches:
        batches = [[]]  # one empty request still establishes the dimension
    for batch in batches:
        body = {
            "images": [base64.b64encode(reader(rec.path)).decode("ascii") for rec in batch],
            "encoder": encoder,
        }
        payload = _post_json(endpoint, body, timeout)
        if "dim" not in payload or "vectors" not in payload:
            raise BackendProtocolError("embedding reply missing 'dim' or 'vectors'")
        batch_dim = payload["dim"]
        if not isinstance(batch_dim, int) or batch_dim < 1:
            raise BackendProtocolError(f"embedding reply has invalid dim {batch_dim!r}")
        if dim is None:
            dim = batch_dim
        elif batch_dim != dim:
            raise DimensionMismatchError(
                f"embedding dimension drifted between batches: {dim} then {batch_dim}"
            )
        vectors = payload["vectors"]
        if not isinstance(vectors, list) or len(vectors) != len(batch):
            got = len(vectors) if isinstance(vectors, list) else type(vectors).__name__
            raise BackendProtocolError(
                f"embedding reply has {got} vectors for {len(batch)} images"
            )
        for rec, vec in zip(batch, vectors):
            arr = np.asarray(vec, dtype=np.float32)
            if arr.shape != (dim,):
                raise BackendProtocolError(
                    f"vector for '{rec.id}' has shape {arr.shape}, expected ({dim},)"
                )
            rows.append(arr)

    data = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    return FeatureMatrix(
        ids=tuple(rec.id for rec in records),
        data=data,
        encoder_tag=encoder,
    )


def align(matrix: FeatureMatrix, manifest: DatasetManifest) -> FeatureMatrix:
    """Reorder feature rows to manifest order, dropping rows the manifest
    does not mention.  A manifest id with no feature row is an error."""
    indices = []
    for rec in manifest.records:
        if rec.id not in matrix:
            raise UnknownImageError(
                f"manifest '{manifest.name}' id '{rec.id}' has no feature row"
            )
        indices.append(matrix.row_index(rec.id))
    return FeatureMatrix(
        ids=manifest.ids(),
        data=matrix.data[indices] if indices else matrix.data[:0],
        encoder_tag=matrix.encoder_tag,
    )
