"""`plotkit render --spec fig.json` command line.

Exit codes mirror the producer's convention: 0 success, 2 for spec or
schema problems, 3 for I/O failures.
"""

import argparse
import json
import sys

from .errors import PlotkitError
from .figures import render, spec_from_dict


def build_parser():
    parser = argparse.ArgumentParser(prog="plotkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p_render = sub.add_parser("render", help="render one figure spec")
    p_render.add_argument("--spec", required=True,
                          help="path to a figure spec JSON file")
    p_render.add_argument("--png", action="store_true",
                          help="emit PNG instead of the default SVG")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.spec) as fh:
            raw = json.load(fh)
    except OSError as exc:
        print(f"plotkit: cannot read spec: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"plotkit: spec is not valid JSON: {exc}", file=sys.stderr)
        return 2
    if args.png and isinstance(raw, dict):
        raw = dict(raw, fmt="png")
        out = raw.get("out", "")
        if out.endswith(".svg"):
            raw["out"] = out[:-4] + ".png"
    try:
        spec = spec_from_dict(raw)
        path = render(spec)
    except PlotkitError as exc:
        print(f"plotkit: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"plotkit: {exc}", file=sys.stderr)
        return 3
    print(path)
    return 0


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
