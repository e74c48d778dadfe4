"""Exact nearest-neighbor search with quality-bin anchor selection.

Distances are Euclidean, accumulated in float64 regardless of storage
precision.  Neighbor order is ascending distance with ties broken by
reference row index, which makes retrieval fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import ImageRecord
from .errors import DimensionMismatchError, ValidationError
from .featstore import FeatureMatrix

# rows scanned per chunk during the distance pass; bounds peak memory
_CHUNK_ROWS = 8192

NUM_BINS = 5


@dataclass(frozen=True)
class Neighbor:
    """One retrieved reference image; rank is 1-based."""

    id: str
    distance: float
    mos: float
    rank: int


@dataclass(frozen=True)
class AnchorEntry:
    """A neighbor promoted to a prompt anchor for its quality bin."""

    id: str
    mos: float
    bin_index: int
    rank: int


@dataclass(frozen=True)
class AnchorSet:
    query_id: str
    entries: tuple[AnchorEntry, ...]

    def __post_init__(self) -> None:
        if len(self.entries) > NUM_BINS:
            raise ValidationError(f"anchor set holds at most {NUM_BINS} entries")
        bins = [e.bin_index for e in self.entries]
        if len(set(bins)) != len(bins):
            raise ValidationError("anchor bins must be distinct")
        if bins != sorted(bins):
            raise ValidationError("anchors must be ordered by ascending bin")
        for e in self.entries:
            if not 1 <= e.bin_index <= NUM_BINS:
                raise ValidationError(f"bin index {e.bin_index} outside 1..{NUM_BINS}")

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entries)


class RetrievalIndex:
    """Reference features paired with their normalized scores."""

    def __init__(self, features: FeatureMatrix, mos: Sequence[float]):
        mos_arr = np.asarray(mos, dtype=np.float64)
        if mos_arr.ndim != 1 or mos_arr.shape[0] != features.count:
            raise ValidationError(
                f"{mos_arr.size} scores for {features.count} feature rows"
            )
        if mos_arr.size and (mos_arr.min() < 0.0 or mos_arr.max() > 1.0):
            raise ValidationError("index scores must lie in [0, 1]")
        self.features = features
        self.mos = mos_arr

    def __len__(self) -> int:
        return self.features.count

    @property
    def dim(self) -> int:
        return self.features.dim

    @classmethod
    def build(cls, matrix: FeatureMatrix, records: Sequence[ImageRecord]) -> "RetrievalIndex":
        """Index the given records using their rows from matrix."""
        ids = tuple(rec.id for rec in records)
        rows = [matrix.row_index(rec.id) for rec in records]
        sub = FeatureMatrix(
            ids=ids,
            data=matrix.data[rows] if rows else matrix.data[:0],
            encoder_tag=matrix.encoder_tag,
        )
        return cls(sub, [rec.mos_norm for rec in records])


def l2_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Euclidean distance between two vectors, computed in float64."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.ndim != 1 or bv.ndim != 1:
        raise DimensionMismatchError("l2_distance expects 1-D vectors")
    if av.shape != bv.shape:
        raise DimensionMismatchError(
            f"vector dimensions differ: {av.shape[0]} vs {bv.shape[0]}"
        )
    return float(np.sqrt(np.sum((av - bv) ** 2)))


def knn(index: RetrievalIndex, query: Sequence[float], k: int) -> list[Neighbor]:
    """Return the k nearest reference images to the query vector.

    If k exceeds the index size, every reference image is returned.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise ValidationError("cannot search an empty index")
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise DimensionMismatchError(
            f"query has dimension {q.size}, index has {index.dim}"
        )

    n = len(index)
    dist = np.empty(n, dtype=np.float64)
    data = index.features.data
    for start in range(0, n, _CHUNK_ROWS):
        chunk = data[start:start + _CHUNK_ROWS].astype(np.float64)
        diff = chunk - q
        dist[start:start + chunk.shape[0]] = np.sqrt(np.sum(diff * diff, axis=1))

    # stable sort keeps row order among exact distance ties
    order = np.argsort(dist, kind="stable")[: min(k, n)]
    ids = index.features.ids
    return [
        Neighbor(id=ids[i], distance=float(dist[i]), mos=float(index.mos[i]), rank=r + 1)
        for r, i in enumerate(order)
    ]


def bin_of(mos: float) -> int:
    """Map a normalized score to its quality bin, 1 (worst) to 5 (best).

    Bin j covers [(j-1)/5, j/5); the last bin also includes 1.0.  The
    comparison loop avoids the float rounding that a multiply-and-floor
    would hit at the bin edges.
    """
    if not 0.0 <= mos <= 1.0:
        raise ValidationError(f"score {mos} outside [0, 1]")
    for j in range(1, NUM_BINS):
        if mos < j / NUM_BINS:
            return j
    return NUM_BINS


def select_anchors(
    neighbors: Sequence[Neighbor],
    query_id: str,
    max_anchors: int = NUM_BINS,
) -> AnchorSet:
    """Keep the first neighbor seen per quality bin, in neighbor order.

    When more bins are hit than max_anchors allows, the anchors closest
    to the query (lowest rank) win.  Output is ordered by ascending bin.
    """
    if not 1 <= max_anchors <= NUM_BINS:
        raise ValidationError(f"max_anchors must be in 1..{NUM_BINS}, got {max_anchors}")
    chosen: dict[int, AnchorEntry] = {}
    for nb in neighbors:
        b = bin_of(nb.mos)
        if b not in chosen:
            chosen[b] = AnchorEntry(id=nb.id, mos=nb.mos, bin_index=b, rank=nb.rank)
        if len(chosen) == NUM_BINS:
            break
    entries = sorted(chosen.values(), key=lambda e: e.rank)[:max_anchors]
    entries.sort(key=lambda e: e.bin_index)
    return AnchorSet(query_id=query_id, entries=tuple(entries))


def retrieve(
    index: RetrievalIndex,
    query: Sequence[float],
    k: int,
    query_id: str,
    max_anchors: int = NUM_BINS,
) -> AnchorSet:
    """Search then pick anchors; the usual entry point for callers."""
    return select_anchors(knn(index, query, k), query_id, max_anchors)
