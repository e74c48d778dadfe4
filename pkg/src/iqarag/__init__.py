"""Retrieval-augmented image quality scoring for multimodal model backends."""

from .corpus import (
    DatasetManifest,
    ImageRecord,
    SplitSpec,
    SplitResult,
    load_manifest,
    normalize_mos,
    pool,
    seeded_shuffle,
    split,
)
from .errors import (
    BackendError,
    BackendProtocolError,
    DegenerateDataError,
    DimensionMismatchError,
    EmptyAnchorSetError,
    FeatureFileError,
    IqaragError,
    ManifestError,
    TransportError,
    UnknownImageError,
    ValidationError,
)
from .evalkit import (
    DatasetSource,
    ExperimentConfig,
    MetricReport,
    compare,
    plcc,
    run_experiment,
    srcc,
)
from .featstore import FeatureMatrix, align, fetch_embeddings, read_features, write_features
from .gateway import (
    BackendConfig,
    LogitResponse,
    MockBackend,
    RemoteBackend,
    make_backend,
    mock_logits,
    query_logits,
)
from .promptgen import (
    ASSISTANT_PREFIX,
    CANDIDATE_WORDS,
    LEVEL_WORDS,
    PromptPart,
    PromptScript,
    build_baseline_prompt,
    build_rag_prompt,
    level_word,
)
from .retrieval import (
    AnchorEntry,
    AnchorSet,
    Neighbor,
    RetrievalIndex,
    bin_of,
    knn,
    l2_distance,
    retrieve,
    select_anchors,
)
from .scoring import (
    DEFAULT_WEIGHTS,
    Prediction,
    QualityScore,
    QualityWeights,
    fuse_score,
    predict,
    softmax_closed_set,
)

__version__ = "0.1.0"
