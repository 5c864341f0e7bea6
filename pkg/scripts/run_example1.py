#!/usr/bin/env python3
"""Run the example1 experiment with the packaged configuration.

Usage: python scripts/run_example1.py [--out out/example1] [--workers K]
"""

import argparse
import sys
from pathlib import Path

from dpsgd_inference.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="out/example1")
    parser.add_argument("--workers", type=int, default=2)
    args = parser.parse_args()
    return cli_main([
        "simulate", "example1",
        "--config", str(ROOT / "configs" / "example1.json"),
        "--out", args.out,
        "--workers", str(args.workers),
    ])


if __name__ == "__main__":
    sys.exit(main())
