"""Dataset manifests, score normalization, and seeded reference/test splits.

A manifest is a JSONL file: the first line is a header object with the
dataset name and the raw score scale, every following line is one image
record.  Raw scores are normalized to [0, 1] at load time so the rest of
the pipeline never sees dataset-specific scales.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ManifestError, ValidationError

_MASK64 = (1 << 64) - 1

# splitmix64 increment and mixing constants
_SM64_GAMMA = 0x9E3779B97F4A7C15
_SM64_MIX1 = 0xBF58476D1CE4E5B9
_SM64_MIX2 = 0x94D049BB133111EB


@dataclass(frozen=True)
class ImageRecord:
    """One image with its raw and normalized quality score."""

    id: str
    path: str
    dataset: str
    mos_raw: float
    mos_norm: float


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    scale_min: float
    scale_max: float
    records: tuple[ImageRecord, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise ManifestError("manifest name must be non-empty")
        if not self.scale_min < self.scale_max:
            raise ManifestError(
                f"invalid score scale [{self.scale_min}, {self.scale_max}]"
            )
        if not self.records:
            raise ManifestError(f"manifest '{self.name}' contains no records")
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate image id '{rec.id}'")
            seen.add(rec.id)
            if not self.scale_min <= rec.mos_raw <= self.scale_max:
                raise ManifestError(
                    f"record '{rec.id}': raw score {rec.mos_raw} outside "
                    f"scale [{self.scale_min}, {self.scale_max}]"
                )
            if not 0.0 <= rec.mos_norm <= 1.0:
                raise ManifestError(
                    f"record '{rec.id}': normalized score {rec.mos_norm} "
                    "outside [0, 1]"
                )

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> tuple[str, ...]:
        return tuple(rec.id for rec in self.records)

    def mos_by_id(self) -> dict[str, float]:
        return {rec.id: rec.mos_norm for rec in self.records}


@dataclass(frozen=True)
class SplitSpec:
    """Reference:test ratio plus the shuffle seed."""

    ref_parts: int
    test_parts: int
    seed: int

    def __post_init__(self) -> None:
        if self.ref_parts < 1 or self.test_parts < 1:
            raise ValidationError(
                f"split ratio parts must be >= 1, got "
                f"{self.ref_parts}:{self.test_parts}"
            )
        if not 0 <= self.seed < (1 << 64):
            raise ValidationError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_ratio(cls, ratio: str, seed: int) -> "SplitSpec":
        """Parse a ratio string such as '1:9' into a spec."""
        parts = ratio.split(":")
        if len(parts) != 2:
            raise ValidationError(f"ratio must look like 'A:B', got '{ratio}'")
        try:
            ref, test = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValidationError(
                f"ratio parts must be integers, got '{ratio}'"
            ) from None
        return cls(ref_parts=ref, test_parts=test, seed=seed)


@dataclass(frozen=True)
class SplitResult:
    reference_ids: frozenset[str]
    test_ids: frozenset[str]


def normalize_mos(raw: float, scale_min: float, scale_max: float) -> float:
    """Map a raw score linearly onto [0, 1]."""
    if not scale_min < scale_max:
        raise ValidationError(f"invalid score scale [{scale_min}, {scale_max}]")
    if not scale_min <= raw <= scale_max:
        raise ValidationError(
            f"raw score {raw} outside scale [{scale_min}, {scale_max}]"
        )
    return (raw - scale_min) / (scale_max - scale_min)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a JSONL manifest; errors carry 1-based line numbers."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest '{path}': {exc}") from exc

    header: dict | None = None
    records: list[ImageRecord] = []
    seen_lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ManifestError(f"{path}:{lineno}: expected a JSON object")

        if header is None:
            for key in ("name", "scale_min", "scale_max"):
                if key not in obj:
                    raise ManifestError(f"{path}:{lineno}: header missing '{key}'")
            if not isinstance(obj["name"], str) or not obj["name"]:
                raise ManifestError(f"{path}:{lineno}: header name must be a non-empty string")
            try:
                header = {
                    "name": obj["name"],
                    "scale_min": float(obj["scale_min"]),
                    "scale_max": float(obj["scale_max"]),
                }
            except (TypeError, ValueError):
                raise ManifestError(f"{path}:{lineno}: header scale must be numeric") from None
            if not header["scale_min"] < header["scale_max"]:
                raise ManifestError(
                    f"{path}:{lineno}: invalid score scale "
                    f"[{header['scale_min']}, {header['scale_max']}]"
                )
            continue

        for key in ("id", "path", "mos"):
            if key not in obj:
                raise ManifestError(f"{path}:{lineno}: record missing '{key}'")
        rec_id = obj["id"]
        if not isinstance(rec_id, str) or not rec_id:
            raise ManifestError(f"{path}:{lineno}: record id must be a non-empty string")
        if rec_id in seen_lines:
            raise ManifestError(
                f"{path}:{lineno}: duplicate image id '{rec_id}' "
                f"(first seen on line {seen_lines[rec_id]})"
            )
        seen_lines[rec_id] = lineno
        if not isinstance(obj["path"], str):
            raise ManifestError(f"{path}:{lineno}: record path must be a string")
        try:
            raw = float(obj["mos"])
        except (TypeError, ValueError):
            raise ManifestError(f"{path}:{lineno}: record mos must be numeric") from None
        if not header["scale_min"] <= raw <= header["scale_max"]:
            raise ManifestError(
                f"{path}:{lineno}: raw score {raw} outside scale "
                f"[{header['scale_min']}, {header['scale_max']}]"
            )
        records.append(
            ImageRecord(
                id=rec_id,
                path=obj["path"],
                dataset=header["name"],
                mos_raw=raw,
                mos_norm=normalize_mos(raw, header["scale_min"], header["scale_max"]),
            )
        )

    if header is None:
        raise ManifestError(f"{path}: empty manifest, expected a header line")
    if not records:
        raise ManifestError(f"{path}: manifest has a header but no records")
    return DatasetManifest(
        name=header["name"],
        scale_min=header["scale_min"],
        scale_max=header["scale_max"],
        records=tuple(records),
    )


def _splitmix64(seed: int):
    """Infinite stream of splitmix64 outputs starting from seed."""
    state = seed & _MASK64
    while True:
        state = (state + _SM64_GAMMA) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * _SM64_MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _SM64_MIX2) & _MASK64
        yield z ^ (z >> 31)


def seeded_shuffle(items: Sequence, seed: int) -> list:
    """Fisher-Yates shuffle driven by a splitmix64 stream.

    Deterministic for a given (items, seed) on every platform.  The draw
    for position i is the next stream value reduced modulo (i + 1).
    """
    out = list(items)
    stream = _splitmix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = next(stream) % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split(manifest: DatasetManifest, spec: SplitSpec) -> SplitResult:
    """Partition a manifest into disjoint reference and test id sets.

    The reference side gets floor(N * ref / (ref + test)) images, taken
    from the front of the seeded shuffle; the remainder is the test side.
    """
    n = len(manifest.records)
    n_ref = n * spec.ref_parts // (spec.ref_parts + spec.test_parts)
    shuffled = seeded_shuffle(manifest.ids(), spec.seed)
    return SplitResult(
        reference_ids=frozenset(shuffled[:n_ref]),
        test_ids=frozenset(shuffled[n_ref:]),
    )


def pool(manifests: Iterable[DatasetManifest]) -> DatasetManifest:
    """Merge manifests into one on the shared [0, 1] scale.

    Ids are prefixed with their dataset name to stay unique; normalized
    scores are carried over unchanged (raw == normalized in the result).
    """
    manifests = list(manifests)
    if not manifests:
        raise ValidationError("pool requires at least one manifest")
    records: list[ImageRecord] = []
    for man in manifests:
        for rec in man.records:
            records.append(
                ImageRecord(
                    id=f"{man.name}/{rec.id}",
                    path=rec.path,
                    dataset=rec.dataset,
                    mos_raw=rec.mos_norm,
                    mos_norm=rec.mos_norm,
                )
            )
    return DatasetManifest(
        name="+".join(man.name for man in manifests),
        scale_min=0.0,
        scale_max=1.0,
        records=tuple(records),
    )
