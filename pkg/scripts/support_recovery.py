"""Support recovery along a regularization path on a 20-vertex cycle.

The full run (N = 10000, 20 lambdas, 3 seeds, two eps) takes hours on one
core. Pass a smaller sample count as the second argument for a quick look,
e.g. ``python3 scripts/support_recovery.py out.csv 2000``.
"""
import sys

from l1iot.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "support_recovery.csv"
    samples = sys.argv[2] if len(sys.argv) > 2 else "10000"
    sys.exit(main(["experiment", "sparsistency", "--graph", "circular", "--n", "20",
                   "--eps", "10,0.1", "--lambda-grid", "1:0.01:20",
                   "--samples", samples, "--seeds", "0-2", "--out", out]))
