"""`plot <kind> --in <csv...> --out <img>` — one figure per invocation."""

from __future__ import annotations

import argparse
import sys

from plotkit.render import FIGURE_KINDS, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plot", description="render dynlab CSV artifacts")
    parser.add_argument("kind", choices=FIGURE_KINDS)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="input CSV path(s), or the rf_images directory for rf_grid")
    parser.add_argument("--out", required=True, help="output image path (.png or .svg)")
    args = parser.parse_args(argv)
    try:
        render(args.kind, args.inputs, args.out)
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
