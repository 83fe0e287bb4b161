"""Boundary data against interior data on a deep low-speed layer.

The Gram matrix conditioning grows steeply with the delay. The script
prints the condition table and compares the deep error of a recovery
from boundary traces with one that uses exact interior inner products.
Settings come from ``configs/test4.yaml``; 32 delays need h = 1/128, so
a run takes several minutes.

    python3 demos/03_ill_posedness.py
"""
import argparse

import numpy as np

from bcmspeed import PipelineConfig, build_dataset, make_scenario, reconstruct, trace_rays
from bcmspeed.bcm import condition_table
from bcmspeed.rays import interior_mask
from bcmspeed.validation import deep_median, relative_error

p = argparse.ArgumentParser()
p.add_argument("--config", default="configs/test4.yaml")
args = p.parse_args()

cfg = PipelineConfig.load(args.config)
basis = cfg.basis()
medium = make_scenario(cfg.scenario_spec(), h=cfg.h, margin=cfg["solver"]["margin"], s=basis.s)
ds = build_dataset(medium, basis, oracle=True)

ct = condition_table(ds)
print("   xi    order        cond")
for xi, order, cond in ct[::4]:
    print(f"{xi:5.3f} {int(order):8d} {cond:11.3e}")
print(f"log-log slope of cond(xi): {np.polyfit(np.log(ct[:, 0]), np.log(ct[:, 2]), 1)[0]:.2f}")

chart = trace_rays(medium, np.linspace(-1, 1, 257), 1 / 256, 1.0)
mask = interior_mask(chart, medium.grid, (-0.5, 0.5), (0.1, 0.8))
for mode in ("inverse-data", "pseudo-reconstruction"):
    rec = reconstruct(ds, **cfg.inversion_kwargs(mode))
    err = relative_error(rec.speed.c_grid, medium.c)
    print(f"{mode:22s} median error below x2 = -0.6: {deep_median(err, mask, medium.grid):.2f}%")
