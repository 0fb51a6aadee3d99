"""Command-line entry point.

    platoonfluid run [--preset NAME] [--config PATH] [--seed N] [--out DIR]
    platoonfluid validate --config PATH [--preset NAME]
    platoonfluid list-presets

Exit status is 0 when every assertion passes, 1 when one fails and 2 on a
usage or configuration error. Output defaults to $PLATOONFLUID_OUTPUT_ROOT
(or ./results) joined with the preset name.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .config import PRESET_NOTES, PRESETS, ConfigError, parse_config
from .experiments import run_preset


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="platoonfluid", description="platooning fluid-model experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a preset and write CSV outputs")
    val = sub.add_parser("validate", help="parse a config and print the resolved values")
    for p in (run, val):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS))
        p.add_argument("--seed", metavar="N", type=int)
    run.add_argument("--out", metavar="DIR")
    sub.add_parser("list-presets", help="list preset names")
    return ap


def _config(args):
    text = ""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    return parse_config(text, {"preset": args.preset, "seed": args.seed})


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    if args.command == "list-presets":
        for name in PRESETS:
            print(f"{name}\t{PRESET_NOTES[name]}")
        return 0
    try:
        cfg = _config(args)
    except ConfigError as e:
        where = args.config or "<defaults>"
        print(f"{where}:{e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return 2
    if args.seed is not None and args.seed < 0:
        print("--seed must be non-negative", file=sys.stderr)
        return 2
    if args.command == "validate":
        sys.stdout.write(cfg.render())
        return 0
    try:
        res = run_preset(cfg, args.out)
    except OSError as e:
        print(f"cannot write output: {e}", file=sys.stderr)
        return 2
    sys.stdout.write(res.summary())
    print(f"outputs in {res.output_dir}")
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
