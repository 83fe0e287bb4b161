"""End-to-end recovery of the Gaussian density bump.

Simulates the boundary data, recovers images, the semi-geodesic map and
the speed, and compares them with the true medium over the interior
mask. The default resolution keeps the run to about a minute; use
``--resolution 128`` for the production numbers.

    python3 demos/02_desk_scale_recovery.py --resolution 64
"""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from bcmspeed import (ControlBasis, ScenarioSpec, build_dataset, make_scenario, reconstruct,  # noqa: E402
                      trace_rays)
from bcmspeed.rays import interior_mask  # noqa: E402
from bcmspeed.validation import error_stats, relative_error  # noqa: E402

p = argparse.ArgumentParser()
p.add_argument("--resolution", type=int, default=64)
p.add_argument("--family", default="trigonometric", choices=("trigonometric", "tent"))
p.add_argument("--out", default="desk_scale_recovery.png")
args = p.parse_args()

basis = ControlBasis(16, 16, 1.0, family=args.family)
medium = make_scenario(ScenarioSpec("test1"), h=1 / args.resolution, s=basis.s)
ds = build_dataset(medium, basis)
rec = reconstruct(ds, alpha=1e-5, sigma_gamma=0.125)

chart = trace_rays(medium, np.linspace(-1, 1, 257), 1 / 256, 1.0)
mask = interior_mask(chart, medium.grid, (-0.5, 0.5), (0.1, 0.8))
err = relative_error(rec.speed.c_grid, medium.c)
s = error_stats(err, mask, 10.0)
print(f"{ds.n_controls} controls, grid {medium.grid.shape}")
print(f"{s['fraction_below']:.1%} of {s['n']} interior cells below 10% error, median {s['median']:.2f}%")

g = medium.grid
ext = [g.x1[0], g.x1[-1], g.x2[-1], g.x2[0]]
fig, ax = plt.subplots(1, 3, figsize=(14, 4))
lims = [(medium.c.min(), medium.c.max())] * 2 + [(0, 10)]
for a, field, title, (lo, hi) in zip(ax, (medium.c, rec.speed.c_grid, np.where(mask, err, np.nan)),
                                     ("true c", "recovered c", "error % (interior)"), lims):
    im = a.imshow(field, extent=ext, aspect="auto", vmin=lo, vmax=hi)
    a.set_title(title)
    a.set_xlim(-1, 1)
    a.set_ylim(-1, 0)
    fig.colorbar(im, ax=a)
m = rec.map
rows = m.xi <= 0.8
for j in range(0, m.gamma.size, 4):
    ax[1].plot(m.x1[rows, j], m.x2[rows, j], "w-", lw=0.5)
fig.tight_layout()
fig.savefig(args.out, dpi=120)
print(f"figure written to {args.out}")
