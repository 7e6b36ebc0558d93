"""Estimation error against sample size on a 6-cycle (eps = 5, lambda = 0.05).

The fitted log-log slope lands in the summary JSON; about 15 minutes.
"""
import sys

from l1iot.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "sample_complexity.csv"
    sys.exit(main(["experiment", "complexity", "--graph", "circular", "--n", "6",
                   "--eps", "5", "--lambda", "0.05", "--samples", "250,1000,4000,16000",
                   "--seeds", "0-9", "--out", out]))
