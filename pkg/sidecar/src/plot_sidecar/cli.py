"""Service launcher.

Examples:
    plot-sidecar --port 8008 --stub fixtures.json
    plot-sidecar --port 8008 --detector detector.ts --classifier resnet152.pt
"""

from __future__ import annotations

import argparse
import sys

from .service import DEFAULT_QUEUE_SIZE, create_app


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot-sidecar",
        description="Subplot detection and figure classification over HTTP.",
    )
    parser.add_argument("--host", default="127.0.0.1", help="bind address (default %(default)s)")
    parser.add_argument("--port", type=int, default=8008, help="bind port (default %(default)s)")
    parser.add_argument(
        "--stub",
        metavar="FIXTURE",
        help="serve deterministic answers from a JSON fixture table instead of real models",
    )
    parser.add_argument("--detector", metavar="WEIGHTS", help="traced detector module path")
    parser.add_argument("--classifier", metavar="WEIGHTS", help="classifier state-dict path")
    parser.add_argument("--device", default="cpu", help="inference device for real weights")
    parser.add_argument(
        "--queue-size",
        type=int,
        default=DEFAULT_QUEUE_SIZE,
        help="admission cap before requests get 429 (default %(default)s)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.stub and (args.detector or args.classifier):
        print("config error: --stub excludes --detector/--classifier", file=sys.stderr)
        return 2

    try:
        if args.stub:
            from .backends import load_stub

            detector, classifier = load_stub(args.stub)
        else:
            detector = classifier = None
            if args.detector:
                from .backends import TorchScriptDetector

                detector = TorchScriptDetector(args.detector, device=args.device)
            if args.classifier:
                from .backends import ResNetClassifier

                classifier = ResNetClassifier(args.classifier, device=args.device)
        app = create_app(detector, classifier, queue_size=args.queue_size)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
