"""Command-line entry point: wire stdin/stdout to one bridge session.

Stdout is the protocol channel and must carry nothing but framed messages,
so all diagnostics go to stderr.  The process serves exactly one session
and exits when the client closes stdin (0), on a protocol-level failure
(1), or when model loading fails (3).
"""

from __future__ import annotations

import argparse
import sys

from .models import BridgeConfig
from .serve import serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbit-sot-bridge",
        description=(
            "Serve segmentation and point tracking to a tracker client over "
            "a length-prefixed JSON protocol on stdin/stdout."
        ),
    )
    parser.add_argument(
        "--sam-checkpoint",
        help="path to a SAM checkpoint (required unless --stub)",
    )
    parser.add_argument(
        "--tapir-checkpoint",
        help="path to a TAPIR checkpoint (required unless --stub)",
    )
    parser.add_argument(
        "--device",
        default="cpu",
        help="torch device for the real models (default: cpu)",
    )
    parser.add_argument(
        "--stub",
        action="store_true",
        help="answer from deterministic geometry instead of loading models",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = BridgeConfig(
        sam_checkpoint=args.sam_checkpoint,
        tapir_checkpoint=args.tapir_checkpoint,
        device=args.device,
        stub=args.stub,
    )
    return serve(sys.stdin.buffer, sys.stdout.buffer, config)


if __name__ == "__main__":
    sys.exit(main())
