"""Script entry point: render --kind <figure_kind> --csv <path> --out <path>."""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, FigureRequest, render


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slate-ope-plots",
        description="Render figures from slate-ope experiment CSV output.",
    )
    parser.add_argument("command", choices=["render"], help="only 'render' is supported")
    parser.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    parser.add_argument("--csv", required=True, help="path to a results CSV")
    parser.add_argument("--out", required=True, help="output image path (png, svg, ...)")
    parser.add_argument("--log-scale", action="store_true", help="log axes where sensible")
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    request = FigureRequest(
        figure_kind=args.kind,
        csv_path=args.csv,
        output_image_path=args.out,
        log_scale=args.log_scale,
    )
    try:
        result = render(request)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
