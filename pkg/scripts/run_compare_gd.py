#!/usr/bin/env python3
"""Run the compare_gd experiment with the packaged configuration.

Usage: python scripts/run_compare_gd.py [--out out/compare_gd] [--workers K]
"""

import argparse
import sys
from pathlib import Path

from dpsgd_inference.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="out/compare_gd")
    parser.add_argument("--workers", type=int, default=2)
    args = parser.parse_args()
    return cli_main([
        "simulate", "compare-gd",
        "--config", str(ROOT / "configs" / "compare_gd.json"),
        "--out", args.out,
        "--workers", str(args.workers),
    ])


if __name__ == "__main__":
    sys.exit(main())
