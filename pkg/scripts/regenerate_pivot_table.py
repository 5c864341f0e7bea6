#!/usr/bin/env python3
"""Regenerate the packaged pivot critical-value table in place.

Usage: python scripts/regenerate_pivot_table.py [--reps 1000000]
                                                [--steps 10000] [--seed 202406]

Takes a couple of minutes at the default size. The table metadata (reps,
steps, seed) is stored alongside the values, so any shipped table can be
reproduced exactly.
"""

import argparse
import sys
from pathlib import Path

from dpsgd_inference.cli import main as cli_main

TARGET = (
    Path(__file__).resolve().parent.parent
    / "src" / "dpsgd_inference" / "data" / "pivot_table.json"
)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--reps", type=int, default=1_000_000)
    parser.add_argument("--steps", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=202406)
    args = parser.parse_args()
    return cli_main([
        "critvals",
        "--reps", str(args.reps),
        "--steps", str(args.steps),
        "--seed", str(args.seed),
        "--out", str(TARGET),
    ])


if __name__ == "__main__":
    sys.exit(main())
