"""Boundary controls ``f_k(gamma, t) = phi_l(gamma) psi_m(t)`` and their algebra.

Index convention: ``k = l + m * n_gamma`` (spatial index fastest).
Time samples are uniform, ``t_n = n * dt``; a horizon ``T`` is sample
``NT = T / dt`` and the doubled horizon ``2T`` is sample ``2 NT``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

FAMILIES = ("trigonometric", "tent")
_LN2 = math.log(2.0)


def eta(g, s):
    """Exponential cutoff ``1 / (1 + exp(g / s))``."""
    return expit(-np.asarray(g, dtype=float) / s)


def spatial_basis_eval(l, gamma, s=1 / 32):
    """Trigonometric spatial function on the normalized boundary ``[-1, 1]``.

    ``eta(gamma-1) eta(-gamma-1) cos(pi (l/2 + floor((l+1)/2) (gamma-1)))``,
    i.e. the sequence ``1, sin, cos, sin 2, ...`` times a two-sided cutoff.

    Examples
    --------
    >>> round(float(spatial_basis_eval(0, 0.0)), 12)
    1.0
    """
    gamma = np.asarray(gamma, dtype=float)
    phase = np.pi * (l / 2 + ((l + 1) // 2) * (gamma - 1))
    return eta(gamma - 1, s) * eta(-gamma - 1, s) * np.cos(phase)


def _logcosh(z):
    z = np.abs(z)
    return z + np.log1p(np.exp(-2.0 * z)) - _LN2


def theta(t, Delta, d):
    """Smoothed tent on ``[0, 2 Delta]`` with peak at ``Delta``.

    As ``d -> 0`` it tends to the unit triangle; for ``d > 0`` the corners
    are rounded on the scale ``d``.
    """
    t = np.asarray(t, dtype=float)
    pre = d / Delta / (-math.expm1(-Delta / d))
    return pre * (_logcosh((2 * Delta - t) / (2 * d)) + _logcosh(t / (2 * d))
                  - 2 * _logcosh((Delta - t) / (2 * d)))


def temporal_basis_eval(m, t, Delta, d, delta):
    """``psi_m(t) = theta(t - m Delta - delta)``."""
    return theta(np.asarray(t, dtype=float) - m * Delta - delta, Delta, d)


def tent_spatial_eval(l, gamma, n_gamma, d_divisor=64.0):
    """Tent-like spatial function on ``[-1, 1]``: a ``theta`` bump of
    half-width ``2 / n_gamma`` peaking at ``-1 + (l + 1/2) 2 / n_gamma``."""
    w = 2.0 / n_gamma
    peak = -1.0 + (l + 0.5) * w
    return theta(np.asarray(gamma, dtype=float) - peak + w, w, w / d_divisor)


@dataclass(frozen=True)
class ControlBasis:
    """Product basis of boundary controls on ``sigma = [-L, L]`` and ``[0, T]``.

    Parameters
    ----------
    n_gamma, n_t : int
        Numbers of spatial and temporal functions.
    T, L : float
        Horizon and half-width of ``sigma``.
    family : {'trigonometric', 'tent'}
        Spatial family.
    s : float
        Cutoff scale of the trigonometric family (normalized units).
    d_divisor : float
        Tent smoothing ``d = Delta / d_divisor``.
    eps : float
        Target for the tent's value at ``t = 0``; sets the default offset
        ``delta = 2 d ln(1/eps)``.
    delta : float, optional
        Explicit temporal offset.
    """

    n_gamma: int
    n_t: int
    T: float
    L: float = 1.0
    family: str = "trigonometric"
    s: float = 1 / 32
    d_divisor: float = 64.0
    eps: float = 1e-8
    delta: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown spatial family {self.family!r}")
        if self.n_gamma < 0 or self.n_t < 0:
            raise ValueError("basis sizes must be non-negative")
        if not (self.T > 0 and self.L > 0 and self.s > 0 and self.d_divisor > 0):
            raise ValueError("T, L, s and d_divisor must be positive")

    @property
    def size(self):
        return self.n_gamma * self.n_t

    @property
    def Delta(self):
        return self.T / self.n_t if self.n_t else self.T

    @property
    def d(self):
        return self.Delta / self.d_divisor

    @property
    def offset(self):
        if self.delta is not None:
            return float(self.delta)
        return 2 * self.d * math.log(1 / self.eps)

    @property
    def support_halfwidth(self):
        """Half-width outside which every spatial function is below ~1e-8."""
        if self.family == "trigonometric":
            return self.L * (1 + 20 * self.s)
        w = 2.0 / max(self.n_gamma, 1)
        return self.L * (1 + 0.5 * w + 20 * w / self.d_divisor)

    def index(self, l, m):
        return l + m * self.n_gamma

    def unravel(self, k):
        return k % self.n_gamma, k // self.n_gamma

    def spatial(self, l, x1):
        """Spatial function ``l`` at physical positions ``x1``."""
        g = np.asarray(x1, dtype=float) / self.L
        if self.family == "trigonometric":
            return spatial_basis_eval(l, g, self.s)
        return tent_spatial_eval(l, g, self.n_gamma, self.d_divisor)

    def temporal(self, m, t):
        return temporal_basis_eval(m, t, self.Delta, self.d, self.offset)

    def spatial_matrix(self, x1):
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        return np.array([self.spatial(l, x1) for l in range(self.n_gamma)]).reshape(self.n_gamma, x1.size)

    def temporal_matrix(self, t):
        """Temporal functions on ``t``; the top tent is truncated after ``T``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array([self.temporal(m, t) for m in range(self.n_t)]).reshape(self.n_t, t.size)
        out[:, t > self.T * (1 + 1e-12)] = 0.0
        return out

    def control(self, k, x1, t):
        """Basis control ``f_k`` sampled on ``x1 x t``."""
        l, m = self.unravel(k)
        vals = np.outer(self.spatial(l, x1), self.temporal_matrix(t)[m])
        return ControlFunction(np.asarray(x1, float), np.asarray(t, float), vals, index=(l, m))

    def family_indices(self, l):
        """Controls of the family delayed to ``xi_l = l Delta``.

        Shifting ``psi_m`` by ``T - xi_l`` gives ``psi_{m + n_t - l}``, so the
        delayed family is the sub-family with ``m >= n_t - l``.
        """
        if not 0 <= l <= self.n_t:
            raise ValueError(f"delay index {l} outside [0, {self.n_t}]")
        k = np.arange(self.size)
        return k[k // max(self.n_gamma, 1) >= self.n_t - l]

    def to_dict(self):
        return dict(n_gamma=self.n_gamma, n_t=self.n_t, T=self.T, L=self.L, family=self.family,
                    s=self.s, d_divisor=self.d_divisor, eps=self.eps, delta=self.offset)

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_gamma"]), int(d["n_t"]), float(d["T"]), float(d["L"]), d["family"],
                   float(d["s"]), float(d["d_divisor"]), float(d["eps"]), float(d["delta"]))


@dataclass(frozen=True, eq=False)
class ControlFunction:
    """Boundary data sampled on ``x1`` (rows) and uniform ``t`` (columns)."""

    x1: np.ndarray
    t: np.ndarray
    values: np.ndarray
    index: Optional[tuple] = None
    delay: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (np.size(self.x1), np.size(self.t)):
            raise ValueError(f"values shape {v.shape} does not match ({np.size(self.x1)}, {np.size(self.t)})")
        if not np.all(np.isfinite(v)):
            raise ValueError("control samples must be finite")
        object.__setattr__(self, "values", v)

    @property
    def dt(self):
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    def with_values(self, values, t=None, **kw):
        return replace(self, values=values, t=self.t if t is None else t, **kw)


def trapezoid_weights(n, step):
    """Composite trapezoid weights for ``n`` uniform samples."""
    w = np.full(n, float(step))
    if n:
        w[[0, -1]] *= 0.5
    if n == 1:
        w[0] = 0.0
    return w


def inner(f: ControlFunction, g: ControlFunction):
    """Grid ``L2(sigma x [0, H])`` inner product (trapezoid in both variables)."""
    if f.values.shape != g.values.shape:
        raise ValueError("controls live on different grids")
    h = float(f.x1[1] - f.x1[0]) if f.x1.size > 1 else 1.0
    wx = trapezoid_weights(f.x1.size, h)
    wt = trapezoid_weights(f.t.size, f.dt)
    return float(wx @ (f.values * g.values) @ wt)


def norm(f: ControlFunction):
    return math.sqrt(inner(f, f))


def _shift_steps(f, s):
    n = s / f.dt
    ni = int(round(n))
    if abs(n - ni) > 1e-9 * max(1.0, abs(n)):
        raise ValueError("delay must be a multiple of the time step")
    return ni


def delayed_control(f: ControlFunction, xi, T, strict=False) -> ControlFunction:
    """``f(gamma, t - (T - xi))`` on the same grid, zero-padded.

    Samples pushed past ``t = T`` are dropped. With ``strict=True`` any
    nonzero dropped sample raises instead.
    """
    if not 0 < xi <= T * (1 + 1e-12):
        raise ValueError("delay target xi must satisfy 0 < xi <= T")
    k = _shift_steps(f, T - xi)
    NT = int(round(T / f.dt))
    if NT >= f.t.size:
        raise ValueError("control grid does not reach t = T")
    # samples j with j + k > NT leave [0, T]
    if strict and np.any(f.values[:, max(NT - k + 1, 0):] != 0):
        raise ValueError("shift pushes the control support past t = T")
    out = np.zeros_like(f.values)
    if k == 0:
        out[:] = f.values
    else:
        out[:, k:] = f.values[:, :-k]
    out[:, NT + 1:] = 0.0
    return f.with_values(out, delay=float(xi))


def odd_extend(f: ControlFunction) -> ControlFunction:
    """Odd extension about ``t = T`` from ``[0, T]`` to ``[0, 2T]``.

    The sample at ``t = T`` is set to zero, the midpoint of the jump.
    """
    v = f.values
    N = v.shape[1] - 1
    out = np.concatenate([v, -v[:, -2::-1]], axis=1)
    out[:, N] = 0.0
    t = np.arange(2 * N + 1) * f.dt
    return f.with_values(out, t=t)


def odd_extend_array(v):
    """Array version of :func:`odd_extend` along the last axis."""
    v = np.asarray(v, dtype=float)
    N = v.shape[-1] - 1
    out = np.concatenate([v, -v[..., -2::-1]], axis=-1)
    out[..., N] = 0.0
    return out


def cumtrapz(v, dt):
    """Cumulative trapezoid integral along the last axis, starting at 0."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    out[..., 1:] = np.cumsum(0.5 * dt * (v[..., 1:] + v[..., :-1]), axis=-1)
    return out


def time_integrate(f: ControlFunction) -> ControlFunction:
    """``(J f)(t) = int_0^t f ds`` by the composite trapezoid rule."""
    return f.with_values(cumtrapz(f.values, f.dt))


def fold_adjoint_array(g):
    """``g(t) - g(2T - t)`` for ``0 <= t <= T`` along the last axis."""
    g = np.asarray(g, dtype=float)
    n2 = g.shape[-1] - 1
    if n2 % 2:
        raise ValueError("fold needs an odd number of samples (2T on the grid)")
    N = n2 // 2
    return g[..., : N + 1] - g[..., : N - 1 : -1] if N else g[..., :1] - g[..., :1]


def fold_adjoint(g: ControlFunction) -> ControlFunction:
    """Adjoint of :func:`odd_extend` in the trapezoid inner products."""
    out = fold_adjoint_array(g.values)
    return g.with_values(out, t=g.t[: out.shape[1]])
