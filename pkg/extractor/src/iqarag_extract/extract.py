"""Batch feature extraction: manifest in, feature file out.

Images with identical bytes are forwarded once and share one row, so
duplicates are bit-identical no matter how batches fall.  Rows are
written in manifest order under the encoder's name as the file tag.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .encoders import CROP_SIZE, Encoder
from .errors import ValidationError
from .iqft import write_iqft
from .manifest import read_manifest

log = logging.getLogger("iqarag_extract")


@dataclass(frozen=True)
class ExtractionReport:
    out_path: str
    ids: tuple[str, ...]
    skipped: tuple[tuple[str, str], ...]  # (id, reason)
    dim: int
    unique_images: int


def run_extraction(
    manifest_path: str | Path,
    out_path: str | Path,
    encoder: Encoder,
    *,
    root: str | Path = ".",
    batch_size: int = 8,
    skip_unreadable: bool = False,
) -> ExtractionReport:
    """Embed every manifest image and write the rows as a feature file.

    Unreadable or undecodable images abort the run unless
    ``skip_unreadable`` is set, in which case they are logged and left
    out of the output.
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    manifest = read_manifest(manifest_path)
    root = Path(root)

    log.info(
        "extracting '%s': encoder=%s weights=%s pooling=%s dim=%d batch_size=%d",
        manifest.name, encoder.name, encoder.weights_label, encoder.pooling,
        encoder.dim, batch_size,
    )
    log.info(
        "preprocess: RGB, shorter side -> %d bicubic, center crop %dx%d, "
        "scale 1/255, normalize mean=%s std=%s",
        CROP_SIZE, CROP_SIZE, CROP_SIZE, encoder.info.mean, encoder.info.std,
    )

    kept_ids: list[str] = []
    kept_keys: list[str] = []
    skipped: list[tuple[str, str]] = []
    rows_by_key: dict[str, np.ndarray] = {}
    pending: list[tuple[str, torch.Tensor]] = []

    def flush() -> None:
        if not pending:
            return
        rows = encoder.embed_tensors([tensor for _, tensor in pending])
        for (key, _), row in zip(pending, rows):
            rows_by_key[key] = row
        pending.clear()

    for entry in manifest.entries:
        full = root / entry.path
        try:
            data = full.read_bytes()
        except OSError as exc:
            _skip_or_raise(entry.id, f"cannot read '{full}': {exc}", skip_unreadable, skipped)
            continue
        key = hashlib.sha256(data).hexdigest()
        if key not in rows_by_key and all(k != key for k, _ in pending):
            try:
                tensor = encoder.preprocess(data)
            except ValidationError as exc:
                _skip_or_raise(entry.id, str(exc), skip_unreadable, skipped)
                continue
            pending.append((key, tensor))
            if len(pending) >= batch_size:
                flush()
        kept_ids.append(entry.id)
        kept_keys.append(key)
    flush()

    if kept_ids:
        matrix = np.stack([rows_by_key[key] for key in kept_keys])
    else:
        matrix = np.zeros((0, encoder.dim), dtype=np.float32)
        log.warning("no images survived extraction; writing an empty feature file")
    write_iqft(out_path, kept_ids, matrix, tag=encoder.name)
    log.info("wrote %d rows (dim %d) to %s", len(kept_ids), encoder.dim, out_path)

    return ExtractionReport(
        out_path=str(out_path),
        ids=tuple(kept_ids),
        skipped=tuple(skipped),
        dim=encoder.dim,
        unique_images=len(rows_by_key),
    )


def _skip_or_raise(
    image_id: str,
    reason: str,
    skip_unreadable: bool,
    skipped: list[tuple[str, str]],
) -> None:
    if not skip_unreadable:
        raise ValidationError(f"image '{image_id}': {reason}")
    log.warning("skipping '%s': %s", image_id, reason)
    skipped.append((image_id, reason))
