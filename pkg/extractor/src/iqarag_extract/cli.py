"""Command-line interface.

Subcommands: extract (manifest -> feature file), serve (embedding
service), encoders (list the registry).  Exit codes: 0 success, 1 bad
input or usage, 2 runtime failure (weights, inference, output I/O).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .encoders import POOLINGS, REGISTRY, encoder_names, load_encoder
from .errors import ExtractError, ValidationError
from .extract import run_extraction
from .service import EmbeddingServer


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this tool reserves 2 for
    # runtime failures, so route usage problems to exit code 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoder", required=True, choices=encoder_names())
    p.add_argument(
        "--weights", default="pretrained",
        help="'pretrained', 'random', or a state_dict path (default: pretrained)",
    )
    p.add_argument("--seed", type=int, default=0, help="seed for random weights")
    p.add_argument("--pooling", choices=POOLINGS, default="cls")


def cmd_extract(args) -> int:
    encoder = load_encoder(
        args.encoder, weights=args.weights, seed=args.seed, pooling=args.pooling
    )
    root = args.root or str(Path(args.manifest).parent)
    report = run_extraction(
        args.manifest,
        args.out,
        encoder,
        root=root,
        batch_size=args.batch_size,
        skip_unreadable=args.skip_unreadable,
    )
    if report.skipped:
        print(f"skipped {len(report.skipped)} unreadable images", file=sys.stderr)
    print(f"wrote {len(report.ids)} vectors of dim {report.dim} to {report.out_path}")
    return 0


def cmd_serve(args) -> int:
    encoder = load_encoder(
        args.encoder, weights=args.weights, seed=args.seed, pooling=args.pooling
    )
    server = EmbeddingServer(args.host, args.port, encoder)
    print(f"serving '{encoder.name}' (dim {encoder.dim}) at {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_encoders(args) -> int:
    for name, info in REGISTRY.items():
        pooling = "cls|mean" if not info.pooled_output else "fixed"
        print(f"{name:8s} dim={info.dim:<5d} pooling={pooling:8s} {info.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iqarag-extract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed manifest images into a feature file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_encoder_flags(p)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--root", default=None, help="image root (default: manifest directory)")
    p.add_argument(
        "--skip-unreadable", action="store_true",
        help="log and drop unreadable images instead of aborting",
    )
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("serve", help="run the embedding service")
    _add_encoder_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("encoders", help="list available encoders")
    p.set_defaults(func=cmd_encoders)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ExtractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
