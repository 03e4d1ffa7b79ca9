"""Command line entry point: statfem-plot <kind> <inputs...> -o out.png"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FigureSpec, render


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 3x4, got {text!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="statfem-plot", description="Render figures from experiment CSV files"
    )
    parser.add_argument("kind", choices=("band", "histogram", "loglog", "ranking"))
    parser.add_argument("inputs", nargs="+", type=Path)
    parser.add_argument("-o", "--output", required=True, type=Path)
    parser.add_argument("--title")
    parser.add_argument(
        "--ref-line", type=float, action="append", default=[], dest="ref_lines"
    )
    parser.add_argument("--grid", type=_parse_grid, help="panel layout, e.g. 3x4 (band only)")
    parser.add_argument("--burn-in", type=float, default=0.3)
    parser.add_argument("--param", help="chain column to histogram (default: first)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        spec = FigureSpec(
            kind=args.kind,
            inputs=tuple(args.inputs),
            output=args.output,
            title=args.title,
            ref_lines=tuple(args.ref_lines),
            grid=args.grid,
            burn_in=args.burn_in,
            param=args.param,
        )
        result = render(spec)
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(result["output"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
