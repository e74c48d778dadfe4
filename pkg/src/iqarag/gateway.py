"""Candidate-word logit acquisition.

Two interchangeable backends: a remote HTTP service speaking the JSON
protocol below, and a deterministic in-process mock for tests and dry
runs.  Both return one logit per candidate word.

Remote protocol: POST to the configured address with

    {"prompt": {...}, "candidates": ["excellent", ...]}

where the prompt is the script's JSON form with every image-ref part
replaced by {"image_b64": "<base64>"}.  Success replies carry
{"logits": {"excellent": 1.2, ...}}; errors carry {"error": "..."} with
a non-success status.  The default address comes from the
IQARAG_BACKEND_URL environment variable.
"""

from __future__ import annotations

import base64
import hashlib
import math
import os
import time
from dataclasses import dataclass
from typing import Callable, Mapping

import requests

from .errors import (
    BackendProtocolError,
    TransportError,
    UnknownImageError,
    ValidationError,
)
from .promptgen import CANDIDATE_WORDS, PromptScript

ENV_BACKEND_URL = "IQARAG_BACKEND_URL"

# transport errors are retried this many times with doubling backoff
DEFAULT_RETRIES = 2
DEFAULT_BACKOFF = 0.5

ImageReader = Callable[[str], bytes]


@dataclass(frozen=True)
class LogitResponse:
    """One raw logit per candidate word, in standard word order."""

    logits: Mapping[str, float]

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "LogitResponse":
        if not isinstance(mapping, Mapping):
            raise BackendProtocolError("logits reply must be a JSON object")
        out: dict[str, float] = {}
        for word in CANDIDATE_WORDS:
            if word not in mapping:
                raise BackendProtocolError(f"backend reply missing logit for '{word}'")
            try:
                value = float(mapping[word])
            except (TypeError, ValueError):
                raise BackendProtocolError(
                    f"logit for '{word}' is not a number: {mapping[word]!r}"
                ) from None
            if not math.isfinite(value):
                raise BackendProtocolError(f"logit for '{word}' is not finite")
            out[word] = value
        return cls(logits=out)


@dataclass(frozen=True)
class BackendConfig:
    """How to reach (or simulate) the scoring backend."""

    kind: str = "mock"  # "mock" or "remote"
    address: str | None = None
    timeout: float = 30.0
    max_concurrency: int = 1
    retries: int = DEFAULT_RETRIES
    backoff: float = DEFAULT_BACKOFF
    # mock only: known scores per image id, consulted for the query image
    fixture: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote"):
            raise ValidationError(f"backend kind must be 'mock' or 'remote', got '{self.kind}'")
        if self.max_concurrency < 1:
            raise ValidationError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.timeout <= 0:
            raise ValidationError(f"timeout must be positive, got {self.timeout}")
        if self.retries < 0:
            raise ValidationError(f"retries must be >= 0, got {self.retries}")


def _hash_unit(image_id: str) -> float:
    """Stable hash of an id onto [0, 1): 64-bit blake2b over 2**64."""
    digest = hashlib.blake2b(image_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


def mock_logits(
    oracle_mos: float,
    script_kind: str,
    image_id: str,
    weights: Mapping[str, float] | None = None,
) -> LogitResponse:
    """Synthetic logits centered on the known score.

    Each word's logit is -s * |m' - c_w| where c_w is the word's fusion
    weight.  Plain prompts use s=3 and an id-dependent sinusoidal nudge
    of +-0.15 on the score (clamped to [0, 1]); anchored prompts use
    s=10 with the score untouched, so they land visibly closer to the
    truth.
    """
    if script_kind not in ("baseline", "rag"):
        raise ValidationError(f"script_kind must be 'baseline' or 'rag', got '{script_kind}'")
    if not 0.0 <= oracle_mos <= 1.0:
        raise ValidationError(f"oracle score {oracle_mos} outside [0, 1]")
    if weights is None:
        from .scoring import DEFAULT_WEIGHTS  # deferred: scoring imports this module

        weights = DEFAULT_WEIGHTS.as_dict()
    if script_kind == "rag":
        sharpness, m = 10.0, oracle_mos
    else:
        sharpness = 3.0
        nudge = 0.15 * math.sin(2.0 * math.pi * _hash_unit(image_id))
        m = min(1.0, max(0.0, oracle_mos + nudge))
    return LogitResponse(
        logits={w: -sharpness * abs(m - weights[w]) for w in CANDIDATE_WORDS}
    )


class MockBackend:
    """Deterministic stand-in for the remote service.

    Needs the true score of every image it will be asked about; infers
    the script kind from the part layout (more than one image means an
    anchored prompt).
    """

    max_concurrency = 1

    def __init__(self, fixture: Mapping[str, float], weights: Mapping[str, float] | None = None):
        self.fixture = dict(fixture)
        self.weights = dict(weights) if weights is not None else None

    def query_logits(self, script: PromptScript, read_image: ImageReader | None = None) -> LogitResponse:
        image_ids = script.image_ids()
        if not image_ids:
            raise ValidationError("prompt contains no image parts")
        query_id = image_ids[-1]  # the assessed image is always last
        if query_id not in self.fixture:
            raise UnknownImageError(f"mock backend has no score for image id '{query_id}'")
        kind = "rag" if len(image_ids) > 1 else "baseline"
        return mock_logits(self.fixture[query_id], kind, query_id, self.weights)


class RemoteBackend:
    """HTTP client for the scoring service."""

    def __init__(
        self,
        address: str,
        *,
        timeout: float = 30.0,
        max_concurrency: int = 1,
        retries: int = DEFAULT_RETRIES,
        backoff: float = DEFAULT_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not address:
            raise ValidationError("remote backend requires an address")
        self.address = address
        self.timeout = timeout
        self.max_concurrency = max_concurrency
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep

    def _wire_prompt(self, script: PromptScript, read_image: ImageReader | None) -> dict:
        parts = []
        for part in script.parts:
            if part.kind == "text":
                parts.append({"kind": "text", "payload": part.payload})
            else:
                if read_image is None:
                    raise ValidationError(
                        "remote backend needs an image reader to inline image bytes"
                    )
                raw = read_image(part.payload)
                parts.append({"image_b64": base64.b64encode(raw).decode("ascii")})
        return {
            "parts": parts,
            "assistant_prefix": script.assistant_prefix,
            "candidate_words": list(script.candidate_words),
        }

    def query_logits(self, script: PromptScript, read_image: ImageReader | None = None) -> LogitResponse:
        body = {
            "prompt": self._wire_prompt(script, read_image),
            "candidates": list(script.candidate_words),
        }
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(self.address, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self.retries:
                    self._sleep(self.backoff * 2.0**attempt)
                continue
            try:
                payload = resp.json()
            except ValueError:
                payload = None
            if resp.status_code != 200:
                # a semantic rejection; retrying would not change it
                detail = payload.get("error") if isinstance(payload, dict) else resp.text[:200]
                raise BackendProtocolError(
                    f"scoring backend returned status {resp.status_code}: {detail}"
                )
            if not isinstance(payload, dict) or "logits" not in payload:
                raise BackendProtocolError("scoring backend reply missing 'logits'")
            return LogitResponse.from_mapping(payload["logits"])
        raise TransportError(
            f"scoring backend unreachable after {self.retries + 1} attempts: {last_exc}"
        )


def make_backend(config: BackendConfig) -> MockBackend | RemoteBackend:
    """Instantiate the backend a config describes.

    Remote addresses fall back to the IQARAG_BACKEND_URL environment
    variable when the config leaves them unset.
    """
    if config.kind == "mock":
        if config.fixture is None:
            raise ValidationError("mock backend requires a fixture of known scores")
        return MockBackend(config.fixture)
    address = config.address or os.environ.get(ENV_BACKEND_URL)
    if not address:
        raise ValidationError(
            f"remote backend needs an address (flag, config, or {ENV_BACKEND_URL})"
        )
    return RemoteBackend(
        address,
        timeout=config.timeout,
        max_concurrency=config.max_concurrency,
        retries=config.retries,
        backoff=config.backoff,
    )


def query_logits(
    backend: MockBackend | RemoteBackend,
    script: PromptScript,
    read_image: ImageReader | None = None,
) -> LogitResponse:
    """Uniform entry point over either backend flavor."""
    return backend.query_logits(script, read_image)
