#!/usr/bin/env python3
"""Run the coverage/interval-length experiments for every packaged setting.

Usage: python scripts/run_coverage.py [--out out/coverage] [--workers K]
                                      [--full-scale]
"""

import argparse
import sys
from pathlib import Path

from dpsgd_inference.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent

SETTINGS = [
    "coverage_linear_identity",
    "coverage_linear_toeplitz",
    "coverage_logistic_identity",
    "coverage_logistic_toeplitz",
]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="out/coverage")
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--full-scale", action="store_true",
                        help="paper-scale n grid and replication count")
    args = parser.parse_args()
    cfg_dir = ROOT / "configs" / ("full_scale" if args.full_scale else "")
    for name in SETTINGS:
        rc = cli_main([
            "simulate", "coverage",
            "--config", str(cfg_dir / f"{name}.json"),
            "--out", str(Path(args.out) / name),
            "--workers", str(args.workers),
        ])
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
