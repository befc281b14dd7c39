"""vidscorer: run a scorer sidecar on stdin/stdout.

Launched by the curation pipeline as `--sidecar "vidscorer stub"` (or
`python3 -m vidscorers.cli stub`). All logging goes to stderr; stdout
carries protocol lines only.
"""

import argparse
import logging
import sys

from .protocol import serve


def build_parser():
    parser = argparse.ArgumentParser(prog="vidscorer",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING", help="logging level name")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("stub", help="deterministic hash-based scorer, no model deps")

    real = sub.add_parser("real", help="wrap real models; unloadable ops are dropped")
    real.add_argument("--caption-model", default=None)
    real.add_argument("--embed-model", default=None)
    real.add_argument("--aesthetic-weights", default=None,
                      help="path to a linear head over image embeddings")
    real.add_argument("--ocr-lang", action="append", default=None,
                      help="OCR language code; repeatable")
    real.add_argument("--device", default="cpu")
    real.add_argument("--batch-size", type=int, default=8)
    return parser


def make_scorer(args):
    if args.command == "stub":
        from .stub import StubScorer

        return StubScorer()
    from .real import RealScorer, SidecarConfig

    defaults = SidecarConfig()
    return RealScorer(SidecarConfig(
        caption_model=args.caption_model or defaults.caption_model,
        embed_model=args.embed_model or defaults.embed_model,
        aesthetic_weights=args.aesthetic_weights,
        ocr_langs=tuple(args.ocr_lang) if args.ocr_lang else defaults.ocr_langs,
        device=args.device,
        batch_size=args.batch_size,
    ))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    return serve(make_scorer(args))


if __name__ == "__main__":
    sys.exit(main())
