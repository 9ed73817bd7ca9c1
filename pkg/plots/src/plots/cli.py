"""Command-line figure rendering.

``plots curves --in sweep_a.csv sweep_b.csv --out fig.png`` overlays one
delay-vs-false-alarm series per sweep file on a log-x axis;
``plots samplepath --in trace.csv --out fig.png`` draws the per-stage
amplitude, centering, and belief panels of one simulated trial.
Exit codes: 0 success, 2 input or schema error.
"""

from __future__ import annotations

import argparse
import sys

from .render import SchemaError, render_curves, render_samplepath


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render figures from simulation CSV artifacts."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_curves = sub.add_parser("curves", help="delay vs false-alarm curves")
    p_curves.add_argument(
        "--in", dest="inputs", nargs="+", required=True, help="sweep CSV files"
    )
    p_curves.add_argument("--out", required=True, help="output PNG path")
    p_curves.add_argument(
        "--labels", nargs="*", default=None, help="series labels (default: policy column)"
    )

    p_path = sub.add_parser("samplepath", help="per-stage trace panels")
    p_path.add_argument("--in", dest="inputs", nargs=1, required=True, help="trace CSV")
    p_path.add_argument("--out", required=True, help="output PNG path")

    args = parser.parse_args(argv)
    try:
        if args.command == "curves":
            render_curves(args.inputs, args.out, labels=args.labels)
        else:
            render_samplepath(args.inputs[0], args.out)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
