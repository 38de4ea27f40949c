"""
Comparing strategies on the toy task
====================================

Trains REINFORCE, single-epoch PPO clipping, and projected accumulation on
the digit task with the default desk-scale configuration, then prints the
median of each metric over the final 20% of steps and writes four SVG panels
(validation reward, KL to the initial policy, entropy, KL to the lagged
reference).

Takes about a minute on one CPU core.
"""
import sys
from pathlib import Path

from proma import RunConfig, compare

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("runs/comparison")

base = RunConfig(seed=seed)
report = compare([base.with_overrides(strategy=s) for s in ("plain", "ppo_clip", "proma_approx")], out)

print(f"{'run':14s}" + "".join(f"{m:>14s}" for m in next(iter(report.summary.values()))))
for label, row in report.summary.items():
    print(f"{label:14s}" + "".join(f"{v:14.4g}" for v in row.values()))
print("plots:", *report.plots, sep="\n  ")
