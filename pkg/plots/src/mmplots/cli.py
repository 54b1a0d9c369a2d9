"""Command line front end: ``plot <kind> --in <csv...> --out <img>``.

The five stock figures of the experiment pipeline map onto the four kinds:

    plot hist-overlay      --in chain.csv reference.csv   --out hist.png
    plot scatter-overlay   --in qlambda.csv reference_q.csv --out scatter.png --align-offset
    plot multiline         --in acc_vs_n.csv  --out acc.png  --x N --y mean_micro_acc --group K --err stderr
    plot semilogy-multiline --in var_vs_k.csv --out var.png  --x z --y variance --group K
    plot multiline         --in eff_gain.csv  --out gain.png --x K --y gain --group functional
"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, SchemaError, render


def build_parser():
    parser = argparse.ArgumentParser(prog="plot", description=__doc__.splitlines()[0])
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="CSV")
    parser.add_argument("--out", dest="output", required=True, metavar="IMG")
    parser.add_argument("--x", default="")
    parser.add_argument("--y", default="")
    parser.add_argument("--group", default="")
    parser.add_argument("--err", default="")
    parser.add_argument("--dashed-group", default="")
    parser.add_argument("--align-offset", action="store_true")
    parser.add_argument("--bins", type=int, default=80)
    parser.add_argument("--title", default="")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    spec = FigureSpec(
        kind=args.kind,
        inputs=args.inputs,
        output=args.output,
        x=args.x,
        y=args.y,
        group=args.group,
        err=args.err,
        dashed_group=args.dashed_group,
        align_offset=args.align_offset,
        bins=args.bins,
        title=args.title,
    )
    try:
        render(spec)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {spec.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
