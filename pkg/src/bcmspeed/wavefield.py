"""Leapfrog solver for ``u_tt = c^2 (u_11 + u_22)`` on the truncated half-plane.

Second order in space and time. The boundary row carries the Dirichlet
control, the sides and the bottom are homogeneous Dirichlet. The initial
state is ``u = 0`` at steps ``-1`` and ``0`` in the interior, so the
discrete map from boundary data to traces is exactly linear and
time-invariant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np

from .controls import ControlFunction
from .errors import CFLError, GridError
from .medium import Grid, MediumField


@numba.njit(cache=True, nogil=True)
def _step(un, u, up, k1, k2):
    ny, nx = u.shape
    for j in range(1, ny - 1):
        for i in range(1, nx - 1):
            uc = u[j, i]
            un[j, i] = (2.0 * uc - up[j, i]
                        + k1[j, i] * (u[j, i - 1] - 2.0 * uc + u[j, i + 1])
                        + k2[j, i] * (u[j - 1, i] - 2.0 * uc + u[j + 1, i]))


@numba.njit(cache=True, nogil=True)
def _energy(un, u, w, inv_c2dt2, h1, h2):
    # sum w (u^{n+1}-u^n)^2 / (c dt)^2 + a_h(u^{n+1}, u^n) over all cell edges
    ny, nx = u.shape
    kin = 0.0
    for j in range(ny):
        for i in range(nx):
            d = un[j, i] - u[j, i]
            kin += w[j, i] * inv_c2dt2[j, i] * d * d
    pot = 0.0
    for j in range(ny):
        for i in range(nx - 1):
            pot += (un[j, i + 1] - un[j, i]) * (u[j, i + 1] - u[j, i])
    pot *= h2 / h1
    pot2 = 0.0
    for j in range(ny - 1):
        for i in range(nx):
            pot2 += (un[j + 1, i] - un[j, i]) * (u[j + 1, i] - u[j, i])
    return kin + pot + pot2 * h1 / h2


@numba.njit(cache=True, nogil=True)
def _run(k1, k2, bnd, lo, strip, inv2h, snap_steps, want_energy, w, inv_c2dt2, h1, h2):
    """Advance ``bnd.shape[0] - 1`` steps with boundary row ``bnd[n]`` on
    columns ``lo:lo + bnd.shape[1]`` (zero elsewhere)."""
    ny, nx = k1.shape
    nt, nb = bnd.shape
    nsteps = nt - 1
    up = np.zeros((ny, nx))
    u = np.zeros((ny, nx))
    un = np.zeros((ny, nx))
    for i in range(nb):
        u[0, lo + i] = bnd[0, i]
    ns = strip[1] - strip[0]
    tr = np.zeros((ns, nt))
    snaps = np.zeros((snap_steps.size, ny, nx))
    energy = np.zeros(nt)
    isnap = 0
    for n in range(nsteps + 1):
        for i in range(ns):
            ii = strip[0] + i
            tr[i, n] = (3.0 * u[0, ii] - 4.0 * u[1, ii] + u[2, ii]) * inv2h
        while isnap < snap_steps.size and snap_steps[isnap] == n:
            snaps[isnap] = u
            isnap += 1
        if n == nsteps:
            break
        _step(un, u, up, k1, k2)
        for i in range(nb):
            un[0, lo + i] = bnd[n + 1, i]
        if want_energy:
            energy[n] = _energy(un, u, w, inv_c2dt2, h1, h2)
        up, u, un = u, un, up
    return tr, u, up, snaps, energy


@numba.njit(cache=True, nogil=True)
def _impulse(k1, k2, spat, lo, strip, inv2h, nsteps):
    """Traces for boundary data ``spat`` at step 0 and zero afterwards."""
    ny, nx = k1.shape
    nb = spat.size
    up = np.zeros((ny, nx))
    u = np.zeros((ny, nx))
    un = np.zeros((ny, nx))
    for i in range(nb):
        u[0, lo + i] = spat[i]
    ns = strip[1] - strip[0]
    tr = np.zeros((ns, nsteps + 1))
    for n in range(nsteps + 1):
        for i in range(ns):
            ii = strip[0] + i
            tr[i, n] = (3.0 * u[0, ii] - 4.0 * u[1, ii] + u[2, ii]) * inv2h
        if n == nsteps:
            break
        _step(un, u, up, k1, k2)
        for i in range(nx):
            un[0, i] = 0.0
        up, u, un = u, un, up
    return tr


@numba.njit(cache=True, nogil=True)
def _run_batch_snap(k1, k2, spat, temp, lo, nsteps):
    """Final snapshots for a batch sharing one spatial profile."""
    B = temp.shape[0]
    ny, nx = k1.shape
    nb = spat.size
    out = np.zeros((B, ny, nx))
    up = np.zeros((ny, nx))
    u = np.zeros((ny, nx))
    un = np.zeros((ny, nx))
    for b in range(B):
        up[:] = 0.0
        u[:] = 0.0
        un[:] = 0.0
        for i in range(nb):
            u[0, lo + i] = spat[i] * temp[b, 0]
        for n in range(nsteps):
            _step(un, u, up, k1, k2)
            for i in range(nb):
                un[0, lo + i] = spat[i] * temp[b, n + 1]
            up, u, un = u, un, up
        out[b] = u
    return out


def stability_bound(grid: Grid):
    """Largest stable ``c dt / min(h1, h2)`` for the 5-point leapfrog scheme."""
    hmin = min(grid.h1, grid.h2)
    return 1.0 / (hmin * math.sqrt(1 / grid.h1 ** 2 + 1 / grid.h2 ** 2))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid with ``q`` steps per temporal-basis spacing."""

    dt: float
    q: int
    n_T: int

    @property
    def T(self):
        return self.n_T * self.dt

    def t(self, horizon_steps=None):
        n = self.n_T if horizon_steps is None else horizon_steps
        return np.arange(n + 1) * self.dt

    def to_dict(self):
        return dict(dt=self.dt, q=self.q, n_T=self.n_T)


def time_grid(medium: MediumField, T, Delta, cfl=0.4) -> TimeGrid:
    """``dt = Delta / q`` with the smallest integer ``q`` giving
    ``c_star dt / min(h) <= cfl``; ``T / Delta`` must be an integer."""
    bound = stability_bound(medium.grid)
    if not 0 < cfl <= bound:
        raise CFLError(f"CFL number {cfl:.4g} exceeds the stability bound {bound:.4g} "
                       "of the leapfrog scheme")
    n_delta = T / Delta
    if abs(n_delta - round(n_delta)) > 1e-9:
        raise GridError("T must be an integer multiple of the temporal spacing")
    hmin = min(medium.grid.h1, medium.grid.h2)
    q = int(math.ceil(medium.c_star * Delta / (cfl * hmin) - 1e-9))
    return TimeGrid(dt=Delta / q, q=q, n_T=int(round(n_delta)) * q)


def cfl_number(medium: MediumField, dt):
    return float(medium.c.max()) * dt / min(medium.grid.h1, medium.grid.h2)


@dataclass(frozen=True, eq=False)
class WaveState:
    """Field and velocity at one time level."""

    u: np.ndarray
    u_t: np.ndarray
    time: float
    cfl: float


@dataclass(frozen=True, eq=False)
class TraceRecord:
    """Samples of ``du/dnu`` on a boundary strip, shape ``(n_strip, n_time)``."""

    x1: np.ndarray
    t: np.ndarray
    values: np.ndarray
    control_id: Optional[object] = None

    @property
    def horizon(self):
        return float(self.t[-1])

    def at(self, x1):
        """Trace at the strip node nearest to ``x1``."""
        return self.values[int(np.argmin(np.abs(self.x1 - x1)))]


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    trace: TraceRecord
    final: np.ndarray
    state: WaveState
    snapshots: Optional[np.ndarray] = None
    energy: Optional[np.ndarray] = None


def _coefficients(medium, dt):
    g = medium.grid
    c2 = medium.c ** 2
    return c2 * (dt / g.h1) ** 2, c2 * (dt / g.h2) ** 2


def _boundary_slice(grid: Grid, x1):
    x1 = np.asarray(x1, dtype=float)
    if x1.size == 0:
        return 0
    lo = int(round((x1[0] - grid.x1[0]) / grid.h1))
    if lo < 0 or lo + x1.size > grid.nx or not np.allclose(x1, grid.x1[lo:lo + x1.size],
                                                         rtol=0, atol=1e-9 * grid.h1):
        raise GridError("control x1 samples are not a contiguous run of medium grid nodes")
    return lo


def solve_forward(medium: MediumField, f: ControlFunction, strip=None, snapshot_steps: Sequence[int] = (),
                  energy=False) -> ForwardSolution:
    """Solve the Dirichlet problem driven by ``f`` up to its last time sample.

    Parameters
    ----------
    medium : MediumField
    f : ControlFunction
        Samples on consecutive grid columns and on the solver time grid
        ``t_n = n dt``; its last sample fixes the horizon.
    strip : (lo, hi), optional
        ``x1`` interval where traces are recorded. Defaults to the columns of ``f``.
    snapshot_steps : sequence of int
        Extra time levels whose full fields are returned.
    energy : bool
        Record the discrete energy at every half step.
    """
    g = medium.grid
    dt = f.dt
    if f.t.size < 2 or not np.allclose(f.t, np.arange(f.t.size) * dt, rtol=0, atol=1e-9 * dt):
        raise GridError("control time samples must be uniform and start at t = 0")
    cfl = cfl_number(medium, dt)
    bound = stability_bound(g)
    if cfl > bound * (1 + 1e-12):
        raise CFLError(f"CFL number {cfl:.4g} exceeds the stability bound {bound:.4g}")
    lo = _boundary_slice(g, f.x1)
    if strip is None:
        sl = slice(lo, lo + f.x1.size)
    else:
        sl = g.columns(*strip)
    k1, k2 = _coefficients(medium, dt)
    steps = np.array(sorted(int(s) for s in snapshot_steps), dtype=np.int64)
    w = g.weights()
    inv = 1.0 / (medium.c * dt) ** 2
    bnd = np.ascontiguousarray(f.values.T)
    tr, u, up, snaps, en = _run(k1, k2, bnd, lo, np.array([sl.start, sl.stop], dtype=np.int64),
                                1.0 / (2 * g.h2), steps, bool(energy), w, inv, g.h1, g.h2)
    rec = TraceRecord(g.x1[sl].copy(), f.t.copy(), tr, control_id=f.index)
    state = WaveState(u=u, u_t=(u - up) / dt, time=float(f.t[-1]), cfl=cfl)
    return ForwardSolution(rec, u, state, snaps if steps.size else None, en[:-1] if energy else None)


def impulse_response(medium: MediumField, x1, profile, dt, nsteps, strip):
    """Traces on ``strip`` for the boundary data ``profile`` (on the grid
    columns ``x1``) applied at step 0 only.

    By linearity and time invariance the trace of ``profile(x1) g(t)`` is
    the causal convolution of this kernel with ``g``.
    """
    g = medium.grid
    cfl = cfl_number(medium, dt)
    if cfl > stability_bound(g) * (1 + 1e-12):
        raise CFLError(f"CFL number {cfl:.4g} exceeds the stability bound {stability_bound(g):.4g}")
    lo = _boundary_slice(g, x1)
    sl = g.columns(*strip)
    k1, k2 = _coefficients(medium, dt)
    return _impulse(k1, k2, np.ascontiguousarray(profile, dtype=float), lo,
                    np.array([sl.start, sl.stop], dtype=np.int64), 1.0 / (2 * g.h2), int(nsteps))


def final_snapshots(medium: MediumField, x1, profile, temporal, dt):
    """Fields at the last step for boundary data ``profile(x1) temporal[b](t)``.

    Returns an array ``(B, ny, nx)``.
    """
    lo = _boundary_slice(medium.grid, x1)
    k1, k2 = _coefficients(medium, dt)
    temporal = np.ascontiguousarray(np.atleast_2d(temporal), dtype=float)
    return _run_batch_snap(k1, k2, np.ascontiguousarray(profile, dtype=float), temporal, lo,
                           temporal.shape[1] - 1)


def normal_trace(fields, strip_cols, h2):
    """Second-order one-sided ``du/dx2`` at ``x2 = 0`` from stored layers.

    ``fields`` has shape ``(..., ny, nx)`` with at least three rows.
    """
    fields = np.asarray(fields)
    if fields.shape[-2] < 3:
        raise GridError("the one-sided stencil needs three boundary-adjacent layers")
    u0, u1, u2 = fields[..., 0, strip_cols], fields[..., 1, strip_cols], fields[..., 2, strip_cols]
    return (3 * u0 - 4 * u1 + u2) / (2 * h2)


def inner_product_H(y, w, medium: MediumField, mask=None):
    """``int y w c^-2 dx`` by tensor trapezoid quadrature, optionally on a mask."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.shape != medium.grid.shape or w.shape != medium.grid.shape:
        raise GridError("fields do not match the medium grid")
    q = medium.grid.weights() / medium.c ** 2
    if mask is not None:
        q = np.where(mask, q, 0.0)
    return float(np.sum(q * y * w))


def energy(u_next, u, medium: MediumField, dt):
    """Discrete leapfrog energy between two consecutive levels."""
    g = medium.grid
    return float(_energy(np.ascontiguousarray(u_next, dtype=float), np.ascontiguousarray(u, dtype=float),
                         g.weights(), 1.0 / (medium.c * dt) ** 2, g.h1, g.h2))
