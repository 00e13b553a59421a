"""Command-line entry point: extract --input texts.tsv --encoder NAME
--layers N --out features.fset. Exit codes: 0 success, 2 bad arguments or
encoder, 3 bad input data.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import EncoderLoadError, ExtractionJob, InputError, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Export token-averaged per-layer encoder features "
                    "to a FEATSET file",
    )
    parser.add_argument("--input", required=True,
                        help="UTF-8 TSV of text<TAB>optional-label")
    parser.add_argument("--encoder", required=True,
                        help="pretrained encoder name or local path")
    parser.add_argument("--layers", required=True, type=int,
                        help="export the last N hidden layers")
    parser.add_argument("--out", required=True, help="output FEATSET path")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--exclude-special-tokens", action="store_true",
                        help="pool over content tokens only")
    parser.add_argument("--classes",
                        help="comma-separated label order, e.g. neg,pos")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    args = build_parser().parse_args(argv)
    classes = tuple(args.classes.split(",")) if args.classes else None
    try:
        job = ExtractionJob(input=args.input, encoder_name=args.encoder,
                            layers=args.layers, output=args.out,
                            batch_size=args.batch_size,
                            exclude_special_tokens=args.exclude_special_tokens,
                            classes=classes)
        result = extract(job)
    except EncoderLoadError as e:
        print(f"encoder error: {e}", file=sys.stderr)
        return 2
    except InputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return 3
    skipped = (f", skipped {len(result.skipped_ids)} empty"
               if result.skipped_ids else "")
    print(f"wrote {result.n_written} records "
          f"({result.n_layers} layers x dim {result.dim}) to {args.out}"
          f"{skipped}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
