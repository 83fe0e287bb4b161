"""Ground-truth ray geometry: semigeodesic coordinates and tube masks."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from matplotlib.path import Path
from scipy.interpolate import RectBivariateSpline

from .errors import CausticError, RayError
from .medium import Grid, MediumField

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True, eq=False)
class RayChart:
    """Rays launched normally from ``(gamma, 0)``, sampled in c-length.

    Attributes
    ----------
    gamma : (n_gamma,) boundary footpoints ``x1``.
    xi : (n_xi,) c-length samples, ``xi[0] = 0``.
    x1, x2 : (n_xi, n_gamma) positions.
    J : (n_xi, n_gamma) transverse spreading, oriented so that ``J(gamma, 0) = 1``.
    beta : (n_xi, n_gamma) ``sqrt(kappa(gamma, 0) kappa(gamma, xi))``, ``kappa = J / c``.
    c : (n_xi, n_gamma) speed along the rays.
    clength_defect : (n_xi, n_gamma) c-length of the discrete ray minus ``xi``.
    regular : bool
    caustic : tuple or None
        ``(gamma, xi)`` of the first flagged sample when not regular.
    """

    gamma: np.ndarray
    xi: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    J: np.ndarray
    beta: np.ndarray
    c: np.ndarray
    clength_defect: np.ndarray
    regular: bool
    caustic: tuple | None = None

    def to_csv(self, path):
        """Write columns gamma, xi, x1, x2, J, beta (one row per sample)."""
        G, X = np.meshgrid(self.gamma, self.xi)
        cols = [G, X, self.x1, self.x2, self.J, self.beta]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "xi", "x1", "x2", "J", "beta"])
            for row in zip(*(a.ravel() for a in cols)):
                w.writerow([repr(float(v)) for v in row])


class SpeedInterpolant:
    """Bicubic spline of ``c`` with first derivatives."""

    def __init__(self, medium: MediumField):
        g = medium.grid
        # splines need increasing abscissae: flip depth so x2 ascends
        self._x1 = g.x1
        self._x2 = g.x2[::-1]
        self._spl = RectBivariateSpline(self._x2, self._x1, medium.c[::-1], kx=3, ky=3)
        self.lo = (g.x1[0], g.x2[-1])
        self.hi = (g.x1[-1], g.x2[0])

    def inside(self, x1, x2):
        return (x1 >= self.lo[0]) & (x1 <= self.hi[0]) & (x2 >= self.lo[1]) & (x2 <= self.hi[1] + 1e-12)

    def __call__(self, x1, x2, d1=0, d2=0):
        return self._spl.ev(x2, x1, dx=d2, dy=d1)


def _rhs(f, y):
    x1, x2, p1, p2 = y
    c = f(x1, x2)
    c1 = f(x1, x2, d1=1)
    c2 = f(x1, x2, d2=1)
    c2sq = c * c
    return np.array([c2sq * p1, c2sq * p2, -c1 / c, -c2 / c])


def _rk4(f, y, h):
    k1 = _rhs(f, y)
    k2 = _rhs(f, y + 0.5 * h * k1)
    k3 = _rhs(f, y + 0.5 * h * k2)
    k4 = _rhs(f, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _segment_clength(f, ya, yb, h):
    """c-length of one step using the cubic Hermite interpolant of the ray."""
    xa, xb = ya[:2], yb[:2]
    va, vb = _rhs(f, ya)[:2], _rhs(f, yb)[:2]
    total = 0.0
    for node, wt in zip(_GL_NODES, _GL_WEIGHTS):
        s = 0.5 * (node + 1)
        h00, h10 = 2 * s ** 3 - 3 * s ** 2 + 1, s ** 3 - 2 * s ** 2 + s
        h01, h11 = -2 * s ** 3 + 3 * s ** 2, s ** 3 - s ** 2
        d00, d10, d01, d11 = 6 * s ** 2 - 6 * s, 3 * s ** 2 - 4 * s + 1, -6 * s ** 2 + 6 * s, 3 * s ** 2 - 2 * s
        pos = h00 * xa + h10 * h * va + h01 * xb + h11 * h * vb
        vel = (d00 * xa + d10 * h * va + d01 * xb + d11 * h * vb) / h
        total = total + 0.5 * wt * np.hypot(vel[0], vel[1]) / f(pos[0], pos[1]) * h
    return total


def trace_rays(medium: MediumField, gamma, xi_step, T, caustic_tol=1e-3) -> RayChart:
    """Integrate normal rays from ``(gamma, 0)`` up to c-length ``T``.

    Hamilton's equations for the travel-time metric, ``dx/dxi = c^2 p`` and
    ``dp/dxi = -grad(c) / c`` with ``p(0) = (0, -1) / c``, are advanced by
    classical RK4 with the fixed step ``xi_step`` (shortened so that it
    divides ``T``).

    Raises
    ------
    RayError
        A ray leaves the medium grid before c-length ``T``.
    """
    if not xi_step > 0:
        raise ValueError("xi_step must be positive")
    gamma = np.asarray(gamma, dtype=float)
    n = max(1, int(np.ceil(T / xi_step - 1e-9)))
    h = T / n
    xi = np.linspace(0.0, T, n + 1)
    ng = gamma.size
    if ng == 0:
        z = np.zeros((n + 1, 0))
        return RayChart(gamma, xi, z, z, z, z, z, z, True, None)
    f = SpeedInterpolant(medium)
    c0 = f(gamma, np.zeros(ng))
    y = np.array([gamma, np.zeros(ng), np.zeros(ng), -1.0 / c0])
    out = np.empty((n + 1, 4, ng))
    out[0] = y
    clen = np.zeros((n + 1, ng))
    for i in range(n):
        y_new = _rk4(f, y, h)
        if not np.all(f.inside(y_new[0], y_new[1])):
            bad = gamma[~f.inside(y_new[0], y_new[1])][0]
            raise RayError(f"ray from gamma={bad:.4g} leaves the grid at xi={xi[i + 1]:.4g}")
        clen[i + 1] = clen[i] + _segment_clength(f, y, y_new, h)
        out[i + 1] = y_new
        y = y_new
    x1, x2 = out[:, 0], out[:, 1]
    x1[0] = gamma  # exact footpoints
    x2[0] = 0.0
    c = f(x1, x2)
    if ng > 1:
        dx1 = np.gradient(x1, gamma, axis=1)
        dx2 = np.gradient(x2, gamma, axis=1)
        # unit tangent along the ray
        v1, v2 = c * out[:, 2], c * out[:, 3]
        J = dx1 * (-v2) + dx2 * v1
    else:
        J = np.ones_like(x1)
    kappa = J / c
    beta = np.sqrt(np.clip(kappa[0] * kappa, 0, None))
    flag = (J < caustic_tol * J[0]) | (np.sign(J) != np.sign(J[0]))
    regular = not bool(flag.any())
    caustic = None
    if not regular:
        i, j = np.argwhere(flag)[0]
        caustic = (float(gamma[j]), float(xi[i]))
    return RayChart(gamma, xi, x1, x2, J, beta, c, clen - xi[:, None], regular, caustic)


def chart_polygon(x1, x2):
    """Closed boundary polygon of a chart image, shape ``(m, 2)``."""
    left = np.column_stack([x1[:, 0], x2[:, 0]])
    bottom = np.column_stack([x1[-1, 1:], x2[-1, 1:]])
    right = np.column_stack([x1[-2::-1, -1], x2[-2::-1, -1]])
    top = np.column_stack([x1[0, -2:0:-1], x2[0, -2:0:-1]])
    return np.vstack([left, bottom, right, top])


def polygon_mask(poly, grid: Grid, pad=None):
    """Grid nodes inside (or within ``pad`` of) a closed polygon."""
    if len(poly) < 3:
        return np.zeros(grid.shape, dtype=bool)
    pad = 1e-9 * min(grid.h1, grid.h2) if pad is None else pad
    path = Path(poly)
    # matplotlib grows the path for positive radius only on one orientation
    area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    radius = pad if area > 0 else -pad
    X1, X2 = grid.mesh()
    pts = np.column_stack([X1.ravel(), X2.ravel()])
    return path.contains_points(pts, radius=radius).reshape(grid.shape)


def tube_mask(chart: RayChart, grid: Grid):
    """Grid nodes covered by the chart image of ``sigma x [0, T]``."""
    if chart.gamma.size == 0:
        return np.zeros(grid.shape, dtype=bool)
    if not chart.regular:
        raise CausticError(f"chart is not regular (caustic near gamma, xi = {chart.caustic})")
    if chart.gamma.size == 1:
        return np.zeros(grid.shape, dtype=bool)
    return polygon_mask(chart_polygon(chart.x1, chart.x2), grid)


def interior_mask(chart: RayChart, grid: Grid, gamma_range, xi_range):
    """Tube mask of a sub-rectangle of ray coordinates."""
    gsel = (chart.gamma >= gamma_range[0] - 1e-12) & (chart.gamma <= gamma_range[1] + 1e-12)
    xsel = (chart.xi >= xi_range[0] - 1e-12) & (chart.xi <= xi_range[1] + 1e-12)
    x1 = chart.x1[np.ix_(xsel, gsel)]
    x2 = chart.x2[np.ix_(xsel, gsel)]
    if x1.shape[0] < 2 or x1.shape[1] < 2:
        return np.zeros(grid.shape, dtype=bool)
    return polygon_mask(chart_polygon(x1, x2), grid)
