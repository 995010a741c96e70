"""Run the sidecar under uvicorn."""

from __future__ import annotations

import argparse

import uvicorn

from .app import create_app
from .config import SidecarConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="debias-sidecar")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--embedding-dim", type=int, default=64)
    parser.add_argument("--max-batch", type=int, default=16)
    args = parser.parse_args(argv)
    config = SidecarConfig(port=args.port, embedding_dim=args.embedding_dim, max_batch=args.max_batch)
    uvicorn.run(create_app(config), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
