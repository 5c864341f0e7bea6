#!/usr/bin/env python3
"""Run the mse_vs_iters experiment with the packaged configuration.

Usage: python scripts/run_mse_vs_iters.py [--out out/mse_vs_iters] [--workers K]
"""

import argparse
import sys
from pathlib import Path

from dpsgd_inference.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="out/mse_vs_iters")
    parser.add_argument("--workers", type=int, default=2)
    args = parser.parse_args()
    return cli_main([
        "simulate", "mse-vs-iters",
        "--config", str(ROOT / "configs" / "mse_vs_iters.json"),
        "--out", args.out,
        "--workers", str(args.workers),
    ])


if __name__ == "__main__":
    sys.exit(main())
