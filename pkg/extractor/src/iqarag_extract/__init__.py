"""Feature extraction sidecar: turns image corpora into feature files
and serves the embedding wire protocol."""

from .encoders import (
    REGISTRY,
    Encoder,
    EncoderInfo,
    encoder_names,
    load_encoder,
)
from .errors import ExtractError, ValidationError, WeightsError
from .extract import ExtractionReport, run_extraction
from .iqft import read_iqft, write_iqft
from .manifest import Manifest, ManifestEntry, read_manifest
from .service import EmbeddingServer

__version__ = "0.1.0"

__all__ = [
    "REGISTRY",
    "Encoder",
    "EncoderInfo",
    "EmbeddingServer",
    "ExtractError",
    "ExtractionReport",
    "Manifest",
    "ManifestEntry",
    "ValidationError",
    "WeightsError",
    "encoder_names",
    "load_encoder",
    "read_iqft",
    "read_manifest",
    "run_extraction",
    "write_iqft",
]
