"""Prompt assembly for quality scoring requests.

A prompt is a flat list of parts, each either literal text or a
reference to an image by id, plus the fixed assistant prefix and the
closed candidate-word set.  Scripts serialize to canonical JSON (sorted
keys, two-space indent) so identical inputs always produce identical
bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

from .errors import EmptyAnchorSetError, UnknownImageError, ValidationError
from .retrieval import AnchorSet, bin_of

# candidate words, best quality first; order is part of the contract
CANDIDATE_WORDS = ("excellent", "good", "fair", "poor", "bad")

# quality bin (1 worst .. 5 best) to its descriptive word
LEVEL_WORDS = {1: "bad", 2: "poor", 3: "fair", 4: "good", 5: "excellent"}

QUESTION = "How would you rate the quality of this image?"
ASSISTANT_PREFIX = "The quality of this image is "

_ANCHOR_ORDERS = ("ascending", "descending", "rank")


@dataclass(frozen=True)
class PromptPart:
    kind: str  # "text" or "image-ref"
    payload: str

    def __post_init__(self) -> None:
        if self.kind not in ("text", "image-ref"):
            raise ValidationError(f"unknown prompt part kind '{self.kind}'")


@dataclass(frozen=True)
class PromptScript:
    parts: tuple[PromptPart, ...]
    assistant_prefix: str = ASSISTANT_PREFIX
    candidate_words: tuple[str, ...] = CANDIDATE_WORDS

    def image_ids(self) -> tuple[str, ...]:
        return tuple(p.payload for p in self.parts if p.kind == "image-ref")

    def to_json_dict(self) -> dict:
        return {
            "parts": [{"kind": p.kind, "payload": p.payload} for p in self.parts],
            "assistant_prefix": self.assistant_prefix,
            "candidate_words": list(self.candidate_words),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def level_word(mos: float) -> str:
    """Descriptive word for a normalized score, via its quality bin."""
    return LEVEL_WORDS[bin_of(mos)]


def _check_ids(ids: Iterable[str], known_ids) -> None:
    if known_ids is None:
        return
    known = set(known_ids)
    for img_id in ids:
        if img_id not in known:
            raise UnknownImageError(f"prompt references unknown image id '{img_id}'")


def build_baseline_prompt(image_id: str, *, known_ids: Iterable[str] | None = None) -> PromptScript:
    """The plain single-image quality question."""
    _check_ids([image_id], known_ids)
    return PromptScript(
        parts=(
            PromptPart("image-ref", image_id),
            PromptPart("text", QUESTION),
        )
    )


def build_rag_prompt(
    anchors: AnchorSet,
    image_id: str,
    *,
    known_ids: Iterable[str] | None = None,
    anchor_order: str = "ascending",
    numeric_levels: bool = False,
) -> PromptScript:
    """Quality question preceded by labeled reference images.

    anchor_order picks the presentation order: "ascending" quality
    (default), "descending" quality, or "rank" (retrieval order).
    numeric_levels swaps the descriptive word for the score itself;
    both knobs exist for ablations and default to the standard layout.
    """
    if anchor_order not in _ANCHOR_ORDERS:
        raise ValidationError(
            f"anchor_order must be one of {_ANCHOR_ORDERS}, got '{anchor_order}'"
        )
    if len(anchors) == 0:
        raise EmptyAnchorSetError(
            f"no anchors available for '{image_id}'; use the baseline prompt"
        )
    entries = list(anchors.entries)
    if anchor_order == "descending":
        entries.reverse()
    elif anchor_order == "rank":
        entries.sort(key=lambda e: e.rank)

    _check_ids([e.id for e in entries] + [image_id], known_ids)

    parts: list[PromptPart] = [PromptPart("text", f"Give you {len(entries)} images.")]
    for entry in entries:
        label = f"{entry.mos:.4f}" if numeric_levels else level_word(entry.mos)
        parts.append(PromptPart("image-ref", entry.id))
        parts.append(PromptPart("text", f"This image's quality is {label}."))
    parts.append(PromptPart("image-ref", image_id))
    parts.append(PromptPart("text", QUESTION))
    return PromptScript(parts=tuple(parts))
