"""Certificate values against geodesic distance on a 40-vertex cycle.

Writes one CSV row per (i, j, eps) plus a JSON of margins next to it.
"""
import sys

from l1iot.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "certificate_profile.csv"
    sys.exit(main(["certificate", "--graph", "circular", "--n", "40",
                   "--eps", "0.1,1,10", "--out", out]))
