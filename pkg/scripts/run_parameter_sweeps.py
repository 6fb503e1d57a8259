"""Rerun the round-count and kernel-width grids at toy scale.

Each configuration trains from scratch on the same synthetic split and the
summary CSV records trained / untrained / constant-baseline errors.
"""

import sys

from gazekit.cli import main

OUT = sys.argv[1] if len(sys.argv) > 1 else "runs"
SCALE = ["--count", "600", "--epochs", "4", "--batch", "16", "--seed", "7"]

main(["sweep", "--param", "k_rounds", "--values", "2,4", "--out", f"{OUT}/sweep_rounds", *SCALE])
main(["sweep", "--param", "sigma", "--values", "0.5,1.0,2.0", "--out", f"{OUT}/sweep_sigma", *SCALE])
