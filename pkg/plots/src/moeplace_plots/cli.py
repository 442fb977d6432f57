"""CLI: render comparison figures from a sweep results CSV."""
from __future__ import annotations

import argparse
import sys

from .figures import FIGSETS, load_figset, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moeplace-plot",
        description="Render comparison figures from moeplace sweep results.",
    )
    parser.add_argument("--csv", required=True, help="results CSV from a sweep run")
    parser.add_argument(
        "--figset",
        default="latency",
        help=f"named figset ({', '.join(sorted(FIGSETS))}) or a JSON spec file",
    )
    parser.add_argument("--out", default="figures", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        specs = load_figset(args.figset)
        written = render(args.csv, specs, args.out)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
