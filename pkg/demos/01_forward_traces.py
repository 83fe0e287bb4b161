"""Forward solves: one basis control, its boundary trace and the energy.

A single control of the basis drives the half-plane; the script plots
the Neumann-to-Dirichlet trace at the control centre and the discrete
energy, which stays constant once the control is switched off.

    python3 demos/01_forward_traces.py --resolution 64
"""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from bcmspeed import ControlBasis, ScenarioSpec, make_scenario, solve_forward  # noqa: E402
from bcmspeed.wavefield import time_grid  # noqa: E402

p = argparse.ArgumentParser()
p.add_argument("--resolution", type=int, default=64)
p.add_argument("--out", default="forward_traces.png")
args = p.parse_args()

medium = make_scenario(ScenarioSpec("test1"), h=1 / args.resolution)
basis = ControlBasis(16, 16, 1.0)
tg = time_grid(medium, basis.T, basis.Delta)
t = tg.t(2 * tg.n_T)
g = medium.grid
x1 = g.x1[g.columns(-basis.support_halfwidth, basis.support_halfwidth)]

l, m = 7, 2
f = basis.control(basis.index(l, m), x1, t)
sol = solve_forward(medium, f, energy=True, snapshot_steps=[tg.n_T])
centre = x1[np.argmax(np.abs(f.values).max(axis=1))]

fig, ax = plt.subplots(1, 3, figsize=(13, 3.6))
ax[0].plot(t, f.values[np.argmin(np.abs(x1 - centre))], label="control f")
tr = sol.trace.at(centre)
ax[0].plot(t[:tr.size], tr, label="trace u")
ax[0].set_xlabel("t")
ax[0].legend()
ax[1].plot(t[:sol.energy.size], sol.energy)
ax[1].set_xlabel("t")
ax[1].set_title("discrete energy")
ax[2].imshow(sol.snapshots[0], extent=[g.x1[0], g.x1[-1], g.x2[-1], g.x2[0]], cmap="RdBu", aspect="auto")
ax[2].set_title(f"u(., T) for control ({l}, {m})")
fig.tight_layout()
fig.savefig(args.out, dpi=120)

off = np.nonzero(t > (m + 2) * basis.Delta + 2 * basis.offset)[0][0]
print(f"grid {g.shape}, dt {tg.dt:.2e}, {t.size} steps")
print(f"energy drift after shut-off: {np.ptp(sol.energy[off:]) / sol.energy[off]:.1e}")
print(f"figure written to {args.out}")
