"""Standalone entry point: render one sweep CSV into one image."""

import argparse
import sys

from .figures import KINDS, FigureSpec, SchemaMismatch, render_figure


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render",
        description="Render a sweep CSV into a deterministic figure "
                    "with a verbatim sidecar JSON.")
    parser.add_argument("--in", dest="csv_path", required=True,
                        help="input CSV in the sweep schema")
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--out", dest="out_path", required=True,
                        help="output image path; the sidecar JSON lands "
                             "next to it with a .json suffix")
    parser.add_argument("--linear", action="store_true",
                        help="linear y axis instead of the default log scale")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        render_figure(FigureSpec(args.csv_path, args.kind,
                                 not args.linear, args.out_path))
    except (SchemaMismatch, OSError, ValueError) as exc:
        print(f"render: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
