"""Command line: `convert --src <h5> --out <dir> [--ids <file>]` and
`stats --dir <dir> [--report <file>]`."""

from __future__ import annotations

import argparse
import sys

from .convert import convert
from .stats import stats_report


def cmd_convert(args) -> int:
    ids = None
    if args.ids:
        with open(args.ids) as fh:
            ids = [line.strip() for line in fh if line.strip()]
    manifest = convert(args.src, args.out, ids=ids)
    print(f"converted {len(manifest.converted)} of {manifest.total} "
          f"complexes -> {args.out}")
    for skip in manifest.skipped:
        print(f"skipped {skip['id']}: {skip['reason']}")
    return 0


def cmd_stats(args) -> int:
    report = stats_report(args.dir)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report)
        print(f"report -> {args.report}")
    else:
        print(report, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="misato-converter",
        description="MISATO HDF5 to bindmd complex-file converter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert complexes to engine files")
    p.add_argument("--src", required=True, help="MISATO-layout HDF5 file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ids", help="file with one complex id per line")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("stats", help="dataset statistics over a directory")
    p.add_argument("--dir", required=True, help="directory of engine files")
    p.add_argument("--report", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
