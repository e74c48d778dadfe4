"""Minimal reader for JSONL dataset manifests.

Only the fields extraction needs are read: the header's dataset name
and each record's id and image path.  Lines are 1-based in error
messages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str


@dataclass(frozen=True)
class Manifest:
    name: str
    entries: tuple[ManifestEntry, ...]


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read manifest '{path}': {exc}") from exc

    name = None
    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ValidationError(f"{path}:{lineno}: expected a JSON object")
        if name is None:
            if "name" not in obj:
                raise ValidationError(f"{path}:{lineno}: header missing 'name'")
            name = str(obj["name"])
            continue
        for key in ("id", "path"):
            if key not in obj or not isinstance(obj[key], str) or not obj[key]:
                raise ValidationError(f"{path}:{lineno}: record needs a non-empty '{key}'")
        if obj["id"] in seen:
            raise ValidationError(
                f"{path}:{lineno}: duplicate id '{obj['id']}' (first on line {seen[obj['id']]})"
            )
        seen[obj["id"]] = lineno
        entries.append(ManifestEntry(id=obj["id"], path=obj["path"]))

    if name is None:
        raise ValidationError(f"{path}: empty manifest, expected a header line")
    if not entries:
        raise ValidationError(f"{path}: manifest has a header but no records")
    return Manifest(name=name, entries=tuple(entries))
