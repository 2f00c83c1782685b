"""Command line for the crop feature exporter.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .encoder import EncoderError
from .export import ExportConfig, ExportError, export


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ExportUsage(message)


class ExportUsage(Exception):
    pass


def build_parser() -> _Parser:
    parser = _Parser(prog="cropfeat", description=__doc__)
    parser.add_argument("--manifest", required=False,
                        help="input manifest (JSONL, one image per line)")
    parser.add_argument("--output", required=False,
                        help="output record JSONL path")
    parser.add_argument("--encoder", default="pyramid")
    parser.add_argument("--taps", default="4,9,15,21",
                        help="comma-separated layer tap indices")
    parser.add_argument("--pooled-width", dest="pooled_width", type=int,
                        default=256)
    parser.add_argument("--crop-padding", dest="crop_padding", type=float,
                        default=0.0)
    parser.add_argument("--device", default="cpu",
                        help="device hint (the built-in encoder ignores it)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.manifest or not args.output:
            raise ExportUsage("--manifest and --output are required")
        cfg = ExportConfig(
            encoder=args.encoder,
            taps=tuple(int(v) for v in args.taps.split(",")),
            crop_padding=args.crop_padding,
            pooled_width=args.pooled_width,
            device=args.device,
        )
        n = export(args.manifest, args.output, cfg)
        print(f"wrote {n} records to {args.output}")
        return 0
    except ExportUsage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ExportError, EncoderError) as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
