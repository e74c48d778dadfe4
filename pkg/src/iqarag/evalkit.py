"""Experiment runner and rank/linear correlation metrics.

An experiment scores the test side of one or more datasets in one or
both prompt modes, then reports per-dataset correlations plus two
aggregates: "avg" (equal-weight mean across datasets) and "com"
(correlations over all test pairs pooled together).  Runs are
deterministic: the same config produces byte-identical reports.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import (
    DatasetManifest,
    ImageRecord,
    SplitSpec,
    load_manifest,
    split,
)
from .errors import DegenerateDataError, IqaragError, ValidationError
from .featstore import FeatureMatrix, align, read_features
from .gateway import BackendConfig, MockBackend, make_backend
from .retrieval import RetrievalIndex
from .scoring import DEFAULT_WEIGHTS, MODES, Prediction, QualityWeights, predict


def _as_array(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-D")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateDataError("correlation undefined for constant input")
    return float(np.sum(xc * yc) / (sx * sy))


def _ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(values.shape[0], dtype=np.float64)
    i = 0
    n = values.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape[0] != gt.shape[0]:
        raise ValidationError(
            f"prediction/ground-truth lengths differ: {pred.shape[0]} vs {gt.shape[0]}"
        )
    if pred.shape[0] < 2:
        raise ValidationError("correlation needs at least two pairs")


def srcc(pred: Sequence[float], gt: Sequence[float]) -> float:
    """Rank correlation: Pearson correlation of tie-averaged ranks."""
    p = _as_array(pred, "pred")
    g = _as_array(gt, "gt")
    _check_pair(p, g)
    return _pearson(_ranks(p), _ranks(g))


def plcc(pred: Sequence[float], gt: Sequence[float]) -> float:
    """Linear (Pearson) correlation of the raw values."""
    p = _as_array(pred, "pred")
    g = _as_array(gt, "gt")
    _check_pair(p, g)
    return _pearson(p, g)


@dataclass(frozen=True)
class DatasetSource:
    """Where one dataset lives on disk.

    root is the directory image paths are relative to; it defaults to
    the manifest's own directory.
    """

    manifest: str
    features: str
    root: str | None = None

    def to_json_dict(self) -> dict:
        return {"manifest": self.manifest, "features": self.features, "root": self.root}

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "DatasetSource":
        for key in ("manifest", "features"):
            if key not in obj:
                raise ValidationError(f"dataset source missing '{key}'")
        return cls(
            manifest=str(obj["manifest"]),
            features=str(obj["features"]),
            root=obj.get("root"),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetSource, ...]
    split: SplitSpec
    backend: BackendConfig
    modes: tuple[str, ...] = MODES
    k: int = 50
    max_anchors: int = 5
    weights: QualityWeights = DEFAULT_WEIGHTS
    cross_reference: DatasetSource | None = None

    def __post_init__(self) -> None:
        if not self.datasets:
            raise ValidationError("experiment needs at least one dataset")
        if not self.modes:
            raise ValidationError("experiment needs at least one mode")
        for mode in self.modes:
            if mode not in MODES:
                raise ValidationError(f"unknown mode '{mode}'")
        if len(set(self.modes)) != len(self.modes):
            raise ValidationError("modes must be distinct")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if not 1 <= self.max_anchors <= 5:
            raise ValidationError(f"max_anchors must be in 1..5, got {self.max_anchors}")

    def to_json_dict(self) -> dict:
        return {
            "datasets": [src.to_json_dict() for src in self.datasets],
            "split": {
                "ref_parts": self.split.ref_parts,
                "test_parts": self.split.test_parts,
                "seed": self.split.seed,
            },
            "modes": list(self.modes),
            "k": self.k,
            "max_anchors": self.max_anchors,
            "weights": self.weights.as_dict(),
            "backend": {
                "kind": self.backend.kind,
                "address": self.backend.address,
                "timeout": self.backend.timeout,
                "max_concurrency": self.backend.max_concurrency,
                "retries": self.backend.retries,
                "backoff": self.backend.backoff,
            },
            "cross_reference": (
                self.cross_reference.to_json_dict() if self.cross_reference else None
            ),
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "ExperimentConfig":
        if "datasets" not in obj or not isinstance(obj["datasets"], list):
            raise ValidationError("config must carry a 'datasets' list")
        split_obj = obj.get("split", {})
        backend_obj = dict(obj.get("backend", {}))
        weights_obj = obj.get("weights")
        if weights_obj is not None:
            weights = QualityWeights(**{k: float(v) for k, v in weights_obj.items()})
        else:
            weights = DEFAULT_WEIGHTS
        cross = obj.get("cross_reference")
        return cls(
            datasets=tuple(DatasetSource.from_json_dict(d) for d in obj["datasets"]),
            split=SplitSpec(
                ref_parts=int(split_obj.get("ref_parts", 1)),
                test_parts=int(split_obj.get("test_parts", 9)),
                seed=int(split_obj.get("seed", 0)),
            ),
            backend=BackendConfig(
                kind=backend_obj.get("kind", "mock"),
                address=backend_obj.get("address"),
                timeout=float(backend_obj.get("timeout", 30.0)),
                max_concurrency=int(backend_obj.get("max_concurrency", 1)),
                retries=int(backend_obj.get("retries", 2)),
                backoff=float(backend_obj.get("backoff", 0.5)),
            ),
            modes=tuple(obj.get("modes", list(MODES))),
            k=int(obj.get("k", 50)),
            max_anchors=int(obj.get("max_anchors", 5)),
            weights=weights,
            cross_reference=DatasetSource.from_json_dict(cross) if cross else None,
        )


@dataclass(frozen=True)
class MetricReport:
    """Everything an experiment produced, JSON-ready and deterministic."""

    config: dict
    datasets: dict
    aggregates: dict
    failures: dict

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "datasets": self.datasets,
            "aggregates": self.aggregates,
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "MetricReport":
        for key in ("config", "datasets", "aggregates"):
            if key not in obj:
                raise ValidationError(f"report missing '{key}'")
        return cls(
            config=dict(obj["config"]),
            datasets=dict(obj["datasets"]),
            aggregates=dict(obj["aggregates"]),
            failures=dict(obj.get("failures", {})),
        )

    def to_csv(self) -> str:
        """Flat table: scope,name,mode,srcc,plcc,n,failures."""

        def fmt(value) -> str:
            return "" if value is None else repr(value)

        lines = ["scope,name,mode,srcc,plcc,n,failures"]
        for name in sorted(self.datasets):
            cells = self.datasets[name]
            for mode in sorted(cells):
                c = cells[mode]
                lines.append(
                    f"dataset,{name},{mode},{fmt(c['srcc'])},{fmt(c['plcc'])},"
                    f"{c['n']},{c['failures']}"
                )
        for agg in ("avg", "com"):
            for mode in sorted(self.aggregates.get(agg, {})):
                c = self.aggregates[agg][mode]
                lines.append(
                    f"aggregate,{agg},{mode},{fmt(c['srcc'])},{fmt(c['plcc'])},"
                    f"{fmt(c.get('n'))},{fmt(c.get('failures'))}"
                )
        return "\n".join(lines) + "\n"


def _metric_or_none(fn, pred: list[float], gt: list[float]) -> float | None:
    if len(pred) < 2:
        return None
    try:
        return fn(pred, gt)
    except DegenerateDataError:
        return None


def _make_reader(sources: list[tuple[DatasetManifest, Path]]):
    """Resolve image ids to bytes across one or more manifests."""
    paths: dict[str, Path] = {}
    for manifest, root in sources:
        for rec in manifest.records:
            full = root / rec.path
            if rec.id in paths and paths[rec.id] != full:
                raise ValidationError(
                    f"image id '{rec.id}' is ambiguous across manifests"
                )
            paths[rec.id] = full

    def read_image(img_id: str) -> bytes:
        if img_id not in paths:
            raise ValidationError(f"no image path known for id '{img_id}'")
        try:
            return paths[img_id].read_bytes()
        except OSError as exc:
            raise ValidationError(f"cannot read image '{paths[img_id]}': {exc}") from exc

    return read_image


def _predict_all(
    records: Sequence[ImageRecord],
    features: FeatureMatrix,
    backend,
    mode: str,
    config: ExperimentConfig,
    index: RetrievalIndex | None,
    read_image,
) -> tuple[list[Prediction], list[dict]]:
    """Score every record; failures are collected, not raised.

    Results follow the record order regardless of completion order, so
    concurrent runs stay deterministic.
    """

    def run_one(rec: ImageRecord):
        return predict(
            rec.id,
            features,
            backend,
            mode=mode,
            index=index,
            k=config.k,
            max_anchors=config.max_anchors,
            weights=config.weights,
            read_image=read_image,
        )

    workers = getattr(backend, "max_concurrency", 1)
    outcomes: dict[str, object] = {}
    if workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_:
            futures = {rec.id: pool_.submit(run_one, rec) for rec in records}
            for rec_id, fut in futures.items():
                try:
                    outcomes[rec_id] = fut.result()
                except IqaragError as exc:
                    outcomes[rec_id] = exc
    else:
        for rec in records:
            try:
                outcomes[rec.id] = run_one(rec)
            except IqaragError as exc:
                outcomes[rec.id] = exc

    predictions: list[Prediction] = []
    failures: list[dict] = []
    for rec in records:
        out = outcomes[rec.id]
        if isinstance(out, Prediction):
            predictions.append(out)
        else:
            failures.append({"id": rec.id, "error": str(out)})
    return predictions, failures


def run_experiment(config: ExperimentConfig) -> MetricReport:
    """Run the full evaluation a config describes."""
    cross_manifest = None
    cross_matrix = None
    cross_root = None
    if config.cross_reference is not None:
        src = config.cross_reference
        cross_manifest = load_manifest(src.manifest)
        cross_matrix = align(read_features(src.features), cross_manifest)
        cross_root = Path(src.root) if src.root else Path(src.manifest).parent

    dataset_cells: dict[str, dict] = {}
    failure_map: dict[str, dict] = {}
    pooled: dict[str, list[tuple[float, float]]] = {mode: [] for mode in config.modes}

    for src in config.datasets:
        manifest = load_manifest(src.manifest)
        matrix = align(read_features(src.features), manifest)
        root = Path(src.root) if src.root else Path(src.manifest).parent

        parts = split(manifest, config.split)
        test_records = [r for r in manifest.records if r.id in parts.test_ids]

        if cross_manifest is not None:
            index_matrix = cross_matrix
            ref_records = list(cross_manifest.records)
            reader_sources = [(manifest, root), (cross_manifest, cross_root)]
        else:
            index_matrix = matrix
            ref_records = [r for r in manifest.records if r.id in parts.reference_ids]
            reader_sources = [(manifest, root)]
        index = RetrievalIndex.build(index_matrix, ref_records) if ref_records else None

        if config.backend.kind == "mock":
            backend = MockBackend(manifest.mos_by_id(), weights=config.weights.as_dict())
            read_image = None
        else:
            backend = make_backend(config.backend)
            read_image = _make_reader(reader_sources)

        mos = manifest.mos_by_id()
        cells: dict[str, dict] = {}
        fails: dict[str, list] = {}
        for mode in config.modes:
            predictions, failures = _predict_all(
                test_records, matrix, backend, mode, config, index, read_image
            )
            pred_vals = [p.score for p in predictions]
            gt_vals = [mos[p.id] for p in predictions]
            cells[mode] = {
                "srcc": _metric_or_none(srcc, pred_vals, gt_vals),
                "plcc": _metric_or_none(plcc, pred_vals, gt_vals),
                "n": len(predictions),
                "failures": len(failures),
            }
            fails[mode] = failures
            pooled[mode].extend(zip(pred_vals, gt_vals))

        dataset_cells[manifest.name] = cells
        failure_map[manifest.name] = fails

    def mean_or_none(values: list[float | None]) -> float | None:
        if any(v is None for v in values):
            return None
        return float(np.mean(values))

    avg = {
        mode: {
            "srcc": mean_or_none([dataset_cells[n][mode]["srcc"] for n in dataset_cells]),
            "plcc": mean_or_none([dataset_cells[n][mode]["plcc"] for n in dataset_cells]),
        }
        for mode in config.modes
    }
    com = {}
    for mode in config.modes:
        pred_vals = [p for p, _ in pooled[mode]]
        gt_vals = [g for _, g in pooled[mode]]
        com[mode] = {
            "srcc": _metric_or_none(srcc, pred_vals, gt_vals),
            "plcc": _metric_or_none(plcc, pred_vals, gt_vals),
            "n": len(pred_vals),
            "failures": sum(len(failure_map[n][mode]) for n in failure_map),
        }

    return MetricReport(
        config=config.to_json_dict(),
        datasets=dataset_cells,
        aggregates={"avg": avg, "com": com},
        failures=failure_map,
    )


def compare(report: MetricReport) -> dict:
    """Anchored-minus-plain metric deltas from a two-mode report."""

    def delta(cell: Mapping, metric: str) -> float | None:
        for mode in MODES:
            if mode not in cell:
                raise ValidationError(
                    f"comparison needs both modes, '{mode}' is missing"
                )
        a, b = cell["rag"].get(metric), cell["baseline"].get(metric)
        if a is None or b is None:
            return None
        return a - b

    out: dict = {"datasets": {}}
    for name in sorted(report.datasets):
        cell = report.datasets[name]
        out["datasets"][name] = {
            "srcc_delta": delta(cell, "srcc"),
            "plcc_delta": delta(cell, "plcc"),
        }
    for agg in ("avg", "com"):
        cell = report.aggregates.get(agg, {})
        out[agg] = {
            "srcc_delta": delta(cell, "srcc"),
            "plcc_delta": delta(cell, "plcc"),
        }
    return out
