"""Command-line entry point: load the configured checkpoints, then serve."""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import build_app
from .config import ConfigError, ServerConfig
from .models import CheckpointError, load_all


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotserve",
        description="Serve generation/classification/embedding models over HTTP.",
    )
    parser.add_argument("--generator", help="generator checkpoint (.npz)")
    parser.add_argument("--classifier", help="classifier checkpoint (.npz)")
    parser.add_argument("--embedder", help="embedder checkpoint (.npz)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--max-batch", type=int, default=32)
    parser.add_argument("--max-new-tokens-cap", type=int, default=256)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--log-level", default="info")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ServerConfig(
            generator=args.generator,
            classifier=args.classifier,
            embedder=args.embedder,
            port=args.port,
            max_batch=args.max_batch,
            device=args.device,
            max_new_tokens_cap=args.max_new_tokens_cap,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        handles = load_all(cfg)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 1
    app = build_app(cfg, handles)
    uvicorn.run(app, host=args.host, port=cfg.port, log_level=args.log_level)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
