"""End-to-end desk-scale experiment: generate data, train, evaluate, export
attention maps. Equivalent CLI:

    gazekit gen-data --seed 7 --count 2500 --out runs/data
    gazekit train --data runs/data --out runs/desk --epochs 20 --batch 16 --seed 7
    gazekit eval --checkpoint runs/desk/model.ckpt --data runs/data --report runs/desk/report.csv
    gazekit dump-attention --checkpoint runs/desk/model.ckpt --data runs/data --sample 0 --out runs/desk/maps
"""

import sys

from gazekit.cli import main

OUT = sys.argv[1] if len(sys.argv) > 1 else "runs"

main(["gen-data", "--seed", "7", "--count", "2500", "--out", f"{OUT}/data"])
main(["train", "--data", f"{OUT}/data", "--out", f"{OUT}/desk", "--epochs", "20", "--batch", "16", "--seed", "7"])
main(["eval", "--checkpoint", f"{OUT}/desk/model.ckpt", "--data", f"{OUT}/data", "--report", f"{OUT}/desk/report.csv"])
main(["dump-attention", "--checkpoint", f"{OUT}/desk/model.ckpt", "--data", f"{OUT}/data", "--sample", "0", "--out", f"{OUT}/desk/maps"])
