"""Closed-set softmax scoring and the end-to-end single-image pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

from .errors import ValidationError
from .featstore import FeatureMatrix
from .gateway import LogitResponse, MockBackend, RemoteBackend
from .promptgen import (
    CANDIDATE_WORDS,
    build_baseline_prompt,
    build_rag_prompt,
    PromptScript,
)
from .retrieval import RetrievalIndex, retrieve

MODES = ("baseline", "rag")


@dataclass(frozen=True)
class QualityWeights:
    """Fusion weight per candidate word.

    Weights run from 1 at the top word down to 0 at the bottom and must
    decrease strictly in between.
    """

    excellent: float = 1.0
    good: float = 0.75
    fair: float = 0.5
    poor: float = 0.25
    bad: float = 0.0

    def __post_init__(self) -> None:
        values = self.as_tuple()
        if values[0] != 1.0 or values[-1] != 0.0:
            raise ValidationError("weights must run from exactly 1 (excellent) to 0 (bad)")
        for hi, lo in zip(values, values[1:]):
            if not hi > lo:
                raise ValidationError(
                    f"weights must strictly decrease, got {values}"
                )

    def as_tuple(self) -> tuple[float, ...]:
        return (self.excellent, self.good, self.fair, self.poor, self.bad)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(CANDIDATE_WORDS, self.as_tuple()))

    def weight(self, word: str) -> float:
        if word not in CANDIDATE_WORDS:
            raise ValidationError(f"unknown candidate word '{word}'")
        return getattr(self, word)

    @classmethod
    def from_values(cls, values) -> "QualityWeights":
        values = tuple(float(v) for v in values)
        if len(values) != len(CANDIDATE_WORDS):
            raise ValidationError(
                f"expected {len(CANDIDATE_WORDS)} weights, got {len(values)}"
            )
        return cls(*values)


DEFAULT_WEIGHTS = QualityWeights()


@dataclass(frozen=True)
class QualityScore:
    value: float
    probabilities: Mapping[str, float]


@dataclass(frozen=True)
class Prediction:
    """Final score for one image plus how it was produced."""

    id: str
    mode: str
    score: float
    probabilities: Mapping[str, float]
    anchors: tuple[str, ...]
    fallback: bool

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "mode": self.mode,
            "score": self.score,
            "probabilities": dict(self.probabilities),
            "anchors": list(self.anchors),
            "fallback": self.fallback,
        }


def softmax_closed_set(logits: LogitResponse | Mapping[str, float]) -> dict[str, float]:
    """Probabilities over the candidate words from raw logits.

    Shifts by the max logit before exponentiating, so extreme values
    cannot overflow; the result always sums to 1 up to rounding.
    """
    mapping = logits.logits if isinstance(logits, LogitResponse) else logits
    values = []
    for word in CANDIDATE_WORDS:
        if word not in mapping:
            raise ValidationError(f"missing logit for '{word}'")
        v = float(mapping[word])
        if not math.isfinite(v):
            raise ValidationError(f"logit for '{word}' is not finite")
        values.append(v)
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    total = sum(exps)
    return {word: e / total for word, e in zip(CANDIDATE_WORDS, exps)}


def fuse_score(probabilities: Mapping[str, float], weights: QualityWeights = DEFAULT_WEIGHTS) -> QualityScore:
    """Collapse word probabilities to one score via the fusion weights.

    The dot product goes through math.fsum, so the result is the
    correctly rounded sum no matter the word order.
    """
    products = []
    for word in CANDIDATE_WORDS:
        if word not in probabilities:
            raise ValidationError(f"missing probability for '{word}'")
        products.append(probabilities[word] * weights.weight(word))
    return QualityScore(value=math.fsum(products), probabilities=dict(probabilities))


def predict(
    image_id: str,
    features: FeatureMatrix,
    backend: MockBackend | RemoteBackend,
    *,
    mode: str = "rag",
    index: RetrievalIndex | None = None,
    k: int = 50,
    max_anchors: int = 5,
    weights: QualityWeights = DEFAULT_WEIGHTS,
    read_image: Callable[[str], bytes] | None = None,
    anchor_order: str = "ascending",
    numeric_levels: bool = False,
) -> Prediction:
    """Score one image end to end.

    In rag mode the reference index supplies labeled anchor images for
    the prompt; with no usable index the call degrades to the plain
    prompt and flags the prediction as a fallback rather than failing.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got '{mode}'")

    anchors: tuple[str, ...] = ()
    fallback = False
    script: PromptScript
    if mode == "rag" and index is not None and len(index) > 0:
        anchor_set = retrieve(index, features.row(image_id), k, image_id, max_anchors)
        anchors = anchor_set.ids()
        script = build_rag_prompt(
            anchor_set,
            image_id,
            anchor_order=anchor_order,
            numeric_levels=numeric_levels,
        )
    elif mode == "rag":
        fallback = True
        features.row_index(image_id)  # still insist the id is known
        script = build_baseline_prompt(image_id)
    else:
        features.row_index(image_id)
        script = build_baseline_prompt(image_id)

    response = backend.query_logits(script, read_image)
    probs = softmax_closed_set(response)
    score = fuse_score(probs, weights)
    return Prediction(
        id=image_id,
        mode=mode,
        score=score.value,
        probabilities=probs,
        anchors=anchors,
        fallback=fallback,
    )
