"""
Training the baseline and the full model
========================================

One seed of the global-contrast baseline (A1) against the full objective
(A9). The full model should retrieve better and leak less camera
information into its embeddings.
"""

from iici.config import RunConfig
from iici.experiments import make_benchmark, run_variant

cfg = RunConfig()
bench = make_benchmark(cfg, seed=0)

for variant in ("A1", "A9"):
    r = run_variant(bench, cfg, variant=variant, seed=0)
    print(f"{variant}: mAP {100 * r.mAP:.1f}  R1 {100 * r.R1:.1f}  "
          f"camera probe {r.probe_acc:.2f} (chance {r.probe_chance:.2f})")

# the same comparison from a shell:
#   iici gen-data --out data
#   iici train --data data --variant A9 --out run
#   iici eval --checkpoint run/checkpoint.bin --data data --variant A9 --out eval
