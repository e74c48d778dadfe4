"""Command-line interface.

Subcommands mirror the pipeline stages: features, index, retrieve,
score, eval, compare.  Exit codes: 0 success, 1 bad input or usage,
2 runtime failure (backend, transport, output I/O).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .corpus import SplitSpec, load_manifest
from .errors import IqaragError, ValidationError
from .evalkit import (
    DatasetSource,
    ExperimentConfig,
    MetricReport,
    compare,
    run_experiment,
)
from .featstore import align, fetch_embeddings, read_features, write_features
from .gateway import BackendConfig, MockBackend, make_backend
from .retrieval import RetrievalIndex, knn, select_anchors
from .scoring import DEFAULT_WEIGHTS, QualityWeights, predict


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this tool reserves 2 for
    # runtime failures, so route usage problems to exit code 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _write_text(path: str, text: str) -> None:
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, target)


def _weights_from(args) -> QualityWeights:
    if args.weights is None:
        return DEFAULT_WEIGHTS
    return QualityWeights.from_values(args.weights)


def _self_excluding_index(manifest, matrix, image_id: str) -> RetrievalIndex | None:
    others = [r for r in manifest.records if r.id != image_id]
    return RetrievalIndex.build(matrix, others) if others else None


def cmd_features(args) -> int:
    manifest = load_manifest(args.manifest)
    root = args.root or str(Path(args.manifest).parent)
    matrix = fetch_embeddings(
        args.endpoint,
        manifest.records,
        encoder=args.encoder,
        root=root,
        batch_size=args.batch_size,
        timeout=args.timeout,
    )
    write_features(matrix, args.out)
    print(f"wrote {matrix.count} vectors of dim {matrix.dim} to {args.out}")
    return 0


def cmd_index(args) -> int:
    manifest = load_manifest(args.manifest)
    matrix = align(read_features(args.features), manifest)
    write_features(matrix, args.out)
    print(f"aligned {matrix.count} rows to manifest order, wrote {args.out}")
    return 0


def cmd_retrieve(args) -> int:
    manifest = load_manifest(args.manifest)
    matrix = align(read_features(args.features), manifest)
    query = matrix.row(args.query_id)
    index = _self_excluding_index(manifest, matrix, args.query_id)
    if index is None:
        raise ValidationError("manifest holds no other images to retrieve from")
    neighbors = knn(index, query, args.k)
    anchors = select_anchors(neighbors, args.query_id, args.max_anchors)
    if args.json:
        print(
            json.dumps(
                {
                    "query_id": args.query_id,
                    "neighbors": [
                        {
                            "rank": n.rank,
                            "id": n.id,
                            "distance": n.distance,
                            "mos": n.mos,
                        }
                        for n in neighbors
                    ],
                    "anchors": [
                        {
                            "bin": a.bin_index,
                            "id": a.id,
                            "mos": a.mos,
                            "rank": a.rank,
                        }
                        for a in anchors.entries
                    ],
                },
                sort_keys=True,
                indent=2,
            )
        )
        return 0
    print(f"query {args.query_id}: {len(neighbors)} neighbors")
    for n in neighbors:
        print(f"  rank {n.rank:>3}  dist {n.distance:.6f}  mos {n.mos:.4f}  {n.id}")
    print(f"anchors ({len(anchors)}):")
    for a in anchors.entries:
        print(f"  bin {a.bin_index}  mos {a.mos:.4f}  rank {a.rank}  {a.id}")
    return 0


def cmd_score(args) -> int:
    manifest = load_manifest(args.manifest)
    matrix = align(read_features(args.features), manifest)
    if args.backend == "mock":
        backend = MockBackend(manifest.mos_by_id())
        read_image = None
    else:
        backend = make_backend(
            BackendConfig(kind="remote", address=args.address, timeout=args.timeout)
        )
        root = Path(args.root or Path(args.manifest).parent)
        paths = {rec.id: root / rec.path for rec in manifest.records}

        def read_image(img_id: str) -> bytes:
            if img_id not in paths:
                raise ValidationError(f"no image path known for id '{img_id}'")
            return paths[img_id].read_bytes()

    index = None
    if args.mode == "rag":
        index = _self_excluding_index(manifest, matrix, args.image_id)
    prediction = predict(
        args.image_id,
        matrix,
        backend,
        mode=args.mode,
        index=index,
        k=args.k,
        max_anchors=args.max_anchors,
        weights=_weights_from(args),
        read_image=read_image,
    )
    if args.json:
        print(json.dumps(prediction.to_json_dict(), sort_keys=True, indent=2))
    else:
        extra = " (fallback)" if prediction.fallback else ""
        print(f"{prediction.id}: score {prediction.score:.4f} [{prediction.mode}]{extra}")
        if prediction.anchors:
            print("anchors: " + ", ".join(prediction.anchors))
    return 0


def _eval_config(args) -> ExperimentConfig:
    obj: dict = {}
    if args.config:
        cfg_path = Path(args.config)
        try:
            obj = json.loads(cfg_path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ValidationError(f"cannot read config '{cfg_path}': {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config '{cfg_path}': invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ValidationError(f"config '{cfg_path}' must be a JSON object")

    if args.manifest:
        if not args.features or len(args.features) != len(args.manifest):
            raise ValidationError("--manifest and --features must be given in pairs")
        obj["datasets"] = [
            {"manifest": m, "features": f}
            for m, f in zip(args.manifest, args.features)
        ]
    if "datasets" not in obj:
        raise ValidationError("no datasets given (use --config or --manifest/--features)")

    if args.ratio is not None or args.seed is not None:
        base = obj.get("split", {})
        ratio = args.ratio
        if ratio is not None:
            spec = SplitSpec.from_ratio(ratio, 0)
            base["ref_parts"], base["test_parts"] = spec.ref_parts, spec.test_parts
        if args.seed is not None:
            base["seed"] = args.seed
        obj["split"] = base
    if args.mode is not None:
        obj["modes"] = ["baseline", "rag"] if args.mode == "both" else [args.mode]
    if args.k is not None:
        obj["k"] = args.k
    if args.max_anchors is not None:
        obj["max_anchors"] = args.max_anchors
    if args.weights is not None:
        obj["weights"] = _weights_from(args).as_dict()
    backend = obj.get("backend", {})
    if args.backend is not None:
        backend["kind"] = args.backend
    if args.address is not None:
        backend["address"] = args.address
    if args.max_concurrency is not None:
        backend["max_concurrency"] = args.max_concurrency
    if args.timeout is not None:
        backend["timeout"] = args.timeout
    if backend:
        obj["backend"] = backend
    if args.cross_manifest:
        if not args.cross_features:
            raise ValidationError("--cross-manifest requires --cross-features")
        obj["cross_reference"] = {
            "manifest": args.cross_manifest,
            "features": args.cross_features,
        }
    return ExperimentConfig.from_json_dict(obj)


def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def cmd_eval(args) -> int:
    config = _eval_config(args)
    report = run_experiment(config)
    for name in sorted(report.datasets):
        for mode in sorted(report.datasets[name]):
            c = report.datasets[name][mode]
            print(
                f"{name} {mode}: srcc={_fmt(c['srcc'])} plcc={_fmt(c['plcc'])} "
                f"n={c['n']} failures={c['failures']}"
            )
    for agg in ("avg", "com"):
        for mode in sorted(report.aggregates[agg]):
            c = report.aggregates[agg][mode]
            print(f"{agg} {mode}: srcc={_fmt(c['srcc'])} plcc={_fmt(c['plcc'])}")
    if args.report:
        _write_text(args.report, report.to_json() + "\n")
        print(f"report written to {args.report}")
    if args.csv:
        _write_text(args.csv, report.to_csv())
        print(f"csv written to {args.csv}")
    return 0


def cmd_compare(args) -> int:
    path = Path(args.report)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read report '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"report '{path}': invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"report '{path}' must be a JSON object")
    deltas = compare(MetricReport.from_json_dict(obj))
    if args.json:
        print(json.dumps(deltas, sort_keys=True, indent=2))
        return 0
    for name in sorted(deltas["datasets"]):
        d = deltas["datasets"][name]
        print(f"{name}: srcc_delta={_fmt(d['srcc_delta'])} plcc_delta={_fmt(d['plcc_delta'])}")
    for agg in ("avg", "com"):
        d = deltas[agg]
        print(f"{agg}: srcc_delta={_fmt(d['srcc_delta'])} plcc_delta={_fmt(d['plcc_delta'])}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iqarag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="fetch feature vectors from an embedding service")
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--out", required=True, help="output feature file")
    p.add_argument("--endpoint", required=True, help="embedding service URL")
    p.add_argument("--encoder", default="", help="encoder tag to request and record")
    p.add_argument("--root", default=None, help="directory image paths are relative to")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("index", help="align a feature file to manifest order")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("retrieve", help="show neighbors and anchors for one image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--max-anchors", type=int, default=5)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("score", help="score one image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--mode", choices=["baseline", "rag"], default="rag")
    p.add_argument("--backend", choices=["mock", "remote"], default="mock")
    p.add_argument("--address", default=None, help="scoring service URL")
    p.add_argument("--root", default=None, help="directory image paths are relative to")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--max-anchors", type=int, default=5)
    p.add_argument("--weights", nargs=5, type=float, default=None, metavar="W")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="run a full evaluation")
    p.add_argument("--config", default=None, help="experiment config (JSON)")
    p.add_argument("--manifest", action="append", help="dataset manifest (repeatable)")
    p.add_argument("--features", action="append", help="feature file (repeatable)")
    p.add_argument("--ratio", default=None, help="reference:test ratio, e.g. 1:9")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--max-anchors", type=int, default=None)
    p.add_argument("--mode", choices=["baseline", "rag", "both"], default=None)
    p.add_argument("--backend", choices=["mock", "remote"], default=None)
    p.add_argument("--address", default=None)
    p.add_argument("--weights", nargs=5, type=float, default=None, metavar="W")
    p.add_argument("--max-concurrency", type=int, default=None)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--cross-manifest", default=None, help="reference dataset manifest")
    p.add_argument("--cross-features", default=None, help="reference dataset features")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--csv", default=None, help="write a CSV summary here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="mode deltas from a saved report")
    p.add_argument("--report", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IqaragError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
