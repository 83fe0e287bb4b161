"""Sound-speed scenarios on a truncated half-plane.

The half-plane is ``x2 <= 0`` with the controlled boundary at ``x2 = 0``.
Fields are stored with row 0 on the boundary and row ``j`` at
``x2 = -j * h2``; columns run over increasing ``x1``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ScenarioError

KINDS = ("test1", "test2", "test3", "test4", "test5", "custom")

# default parameters and basis sizes per scenario kind
DEFAULTS = {
    "test1": dict(params=dict(a=1.0, x1bar=0.0, x2bar=-0.5, delta1=0.5, delta2=0.5),
                  T=1.0, n_t=16),
    "test2": dict(params=dict(a=0.25, x1bar=0.0, x2bar=-0.5, delta1=0.5, delta2=0.25),
                  T=1.5, n_t=32),
    "test3": dict(params=dict(a=0.25, x1bar=0.0, x2bar=-0.5, delta1=0.5, delta2=0.25),
                  T=1.5, n_t=32),
    "test4": dict(params=dict(a=0.25, x1bar=0.0, x2bar=0.0, delta1=0.375, delta2=0.25,
                              phi=math.pi / 12, shift=0.25),
                  T=1.0, n_t=32),
    "test5": dict(params=dict(rho_in=5.0, apex1=-0.3, apex2=-0.25, opening_deg=15.0,
                              orientation_deg=0.0, width_cells=2.0),
                  T=1.0, n_t=32),
    "custom": dict(params=dict(c0=1.0), T=1.0, n_t=16),
}


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid of the truncated half-plane.

    Parameters
    ----------
    nx, ny : int
        Node counts along ``x1`` and along depth.
    h1, h2 : float
        Spacings.
    i0 : int
        Column index of ``x1 = 0``.
    """

    nx: int
    ny: int
    h1: float
    h2: float
    i0: int

    def __post_init__(self):
        if self.h1 <= 0 or self.h2 <= 0:
            raise ScenarioError("grid spacings must be positive")
        if self.nx < 3 or self.ny < 3:
            raise ScenarioError("grid needs at least 3 nodes per direction")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def x1(self):
        return (np.arange(self.nx) - self.i0) * self.h1

    @property
    def x2(self):
        return -np.arange(self.ny) * self.h2

    def mesh(self):
        return np.meshgrid(self.x1, self.x2)

    def weights(self):
        """Tensor-product trapezoid weights, shape ``(ny, nx)``."""
        w1 = np.full(self.nx, self.h1)
        w1[[0, -1]] *= 0.5
        w2 = np.full(self.ny, self.h2)
        w2[[0, -1]] *= 0.5
        return np.outer(w2, w1)

    def columns(self, lo, hi):
        """Slice of the columns with ``lo <= x1 <= hi`` (inclusive, 1e-9 slack)."""
        x1 = self.x1
        tol = 1e-9 * self.h1
        i = int(np.searchsorted(x1, lo - tol))
        j = int(np.searchsorted(x1, hi + tol, side="right"))
        return slice(i, j)

    def to_dict(self):
        return dict(nx=self.nx, ny=self.ny, h1=self.h1, h2=self.h2, i0=self.i0)

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["nx"]), int(d["ny"]), float(d["h1"]), float(d["h2"]), int(d["i0"]))


def fdi_grid(L, T, c_star, h, s=1 / 32, margin=0.1, h2=None):
    """Grid large enough that no side or bottom reflection returns to the
    measurement strip before ``2T``.

    The controls leak past ``|x1| = L`` by about ``20 s L``, so the
    half-width is ``L (1 + 20 s) + 2 c_star T + margin`` and the depth is
    ``c_star T + margin``.
    """
    h2 = h if h2 is None else h2
    half = L * (1 + 20 * s) + 2 * c_star * T + margin
    n_half = int(math.ceil(half / h - 1e-9))
    ny = int(math.ceil((c_star * T + margin) / h2 - 1e-9)) + 1
    return Grid(nx=2 * n_half + 1, ny=ny, h1=float(h), h2=float(h2), i0=n_half)


@dataclass(frozen=True, eq=False)
class MediumField:
    """Sampled sound speed with its a priori bound ``c_star``."""

    grid: Grid
    c: np.ndarray
    c_star: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.ascontiguousarray(self.c, dtype=np.float64)
        if c.shape != self.grid.shape:
            raise ScenarioError(f"speed shape {c.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(c)) or np.any(c <= 0):
            raise ScenarioError("sound speed must be finite and positive")
        if c.max() > self.c_star * (1 + 1e-12):
            raise ScenarioError(f"max speed {c.max():.6g} exceeds c_star = {self.c_star:.6g}")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def rho(self):
        return self.c ** -2.0

    def covers(self, T, support):
        """True when the grid contains the reflection-free rectangle for
        controls supported in ``|x1| <= support`` and horizon ``T``."""
        x1, x2 = self.grid.x1, self.grid.x2
        half = support + 2 * self.c_star * T
        return bool(x1[0] <= -half and x1[-1] >= half and x2[-1] < -self.c_star * T)

    def content_hash(self):
        h = hashlib.sha256()
        h.update(json.dumps(self.grid.to_dict(), sort_keys=True).encode())
        h.update(repr(float(self.c_star)).encode())
        h.update(self.c.astype("<f8").tobytes())
        return h.hexdigest()


@dataclass
class ScenarioSpec:
    """Scenario description: kind, parameters, horizon and basis sizes.

    Missing parameters, ``T`` and ``n_t`` are filled from the per-kind
    defaults. ``speed`` lets a ``custom`` scenario supply ``c(x1, x2)``
    directly.
    """

    kind: str = "test1"
    params: dict = field(default_factory=dict)
    T: Optional[float] = None
    L: float = 1.0
    n_gamma: int = 16
    n_t: Optional[int] = None
    c_star: Optional[float] = None
    speed: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        base = DEFAULTS[self.kind]
        merged = dict(base["params"])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ScenarioError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        self.params = merged
        if self.T is None:
            self.T = base["T"]
        if self.n_t is None:
            self.n_t = base["n_t"]
        self.validate()

    def validate(self):
        p = self.params
        if not self.T > 0 or not self.L > 0:
            raise ScenarioError("T and L must be positive")
        if self.n_gamma < 0 or self.n_t < 0:
            raise ScenarioError("basis sizes must be non-negative")
        if self.c_star is not None and not self.c_star > 0:
            raise ScenarioError("c_star must be positive")
        if self.kind in ("test1", "test2", "test3", "test4"):
            if not 0 <= p["a"] <= 4:
                raise ScenarioError("amplitude a must lie in [0, 4]")
            if not (p["delta1"] > 0 and p["delta2"] > 0):
                raise ScenarioError("Gaussian widths delta1, delta2 must be positive")
            if p["x2bar"] > 0:
                raise ScenarioError("x2bar must lie in the half-plane x2 <= 0")
        if self.kind == "test4" and not abs(p["phi"]) < math.pi / 2:
            raise ScenarioError("rotation angle phi must satisfy |phi| < pi/2")
        if self.kind == "test5":
            if not 0 < p["rho_in"] <= 100:
                raise ScenarioError("wedge density must lie in (0, 100]")
            if not 0 < p["opening_deg"] < 90:
                raise ScenarioError("wedge opening must lie in (0, 90) degrees")
            if not p["width_cells"] > 0:
                raise ScenarioError("wedge smoothing width must be positive")
            if p["apex2"] > 0:
                raise ScenarioError("wedge apex must lie in the half-plane")
        if self.kind == "custom" and self.speed is None and not p["c0"] > 0:
            raise ScenarioError("custom constant speed c0 must be positive")

    def to_dict(self):
        return dict(kind=self.kind, params=dict(self.params), T=self.T, L=self.L,
                    n_gamma=self.n_gamma, n_t=self.n_t, c_star=self.c_star)


def _g(z, zbar, width):
    return np.exp(-((z - zbar) ** 2) / (2 * width ** 2))


def _dg(z, zbar, width):
    return -(z - zbar) / width ** 2 * _g(z, zbar, width)


def _smooth_step(z):
    return 0.5 * (1.0 + np.tanh(z))


def density(spec: ScenarioSpec, x1, x2, h=None):
    """Density ``rho = c**-2`` of a scenario at points ``(x1, x2)``.

    ``h`` is the grid spacing, needed only for the wedge smoothing width.
    """
    p = spec.params
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    k = spec.kind
    if k == "test1":
        return 1 + p["a"] * _g(x1, p["x1bar"], p["delta1"]) * _g(x2, p["x2bar"], p["delta2"])
    if k in ("test2", "test3"):
        bg = 1 - 0.5 * x2 + 0.0625 * x1 ** 2
        bump = p["a"] * _g(x1, p["x1bar"], p["delta1"]) * _dg(x2, p["x2bar"], p["delta2"])
        if k == "test2":
            return bg - bump
        return bg + bump * (1 - x2)
    if k == "test4":
        cp, sp = math.cos(p["phi"]), math.sin(p["phi"])
        z1 = cp * x1 + sp * (x2 + p["shift"])
        z2 = -sp * x1 + cp * (x2 + p["shift"])
        # d g1(z1) / d x1 by the chain rule
        dg1 = _dg(z1, p["x1bar"], p["delta1"]) * cp
        return 1 - p["a"] * _g(z2, p["x2bar"], p["delta2"]) * dg1
    if k == "test5":
        if h is None:
            raise ScenarioError("wedge smoothing needs the grid spacing")
        return 1 + (p["rho_in"] - 1) * wedge_indicator(spec, x1, x2, h)
    if spec.speed is not None:
        return np.asarray(spec.speed(x1, x2), dtype=float) ** -2.0
    return np.full(np.broadcast(x1, x2).shape, p["c0"] ** -2.0)


def wedge_indicator(spec, x1, x2, h):
    """Smoothed indicator of the Test-5 sector.

    The sector has its apex at ``(apex1, apex2)``; its upper face leaves the
    apex at ``orientation_deg`` and the lower face is rotated clockwise by
    ``opening_deg``. Each face is a ``tanh`` step of width ``width_cells * h``.
    """
    p = spec.params
    w = p["width_cells"] * h
    px, py = x1 - p["apex1"], x2 - p["apex2"]
    a1 = math.radians(p["orientation_deg"])
    a2 = a1 - math.radians(p["opening_deg"])
    cross1 = math.cos(a1) * py - math.sin(a1) * px  # > 0 above the upper face
    cross2 = math.cos(a2) * py - math.sin(a2) * px  # > 0 above the lower face
    return _smooth_step(-cross1 / w) * _smooth_step(cross2 / w)


def make_scenario(spec: ScenarioSpec, h, margin=0.1, s=1 / 32) -> MediumField:
    """Sample a scenario on a reflection-free grid of spacing ``h``.

    When ``spec.c_star`` is not given it is the grid maximum of ``c``
    rounded up to two decimals; the grid is resized until the bound and
    the grid agree.
    """
    if not h > 0:
        raise ScenarioError("grid spacing must be positive")
    c_star = spec.c_star if spec.c_star is not None else 1.0
    for _ in range(8):
        grid = fdi_grid(spec.L, spec.T, c_star, h, s=s, margin=margin)
        X1, X2 = grid.mesh()
        rho = density(spec, X1, X2, h=h)
        if not np.all(np.isfinite(rho)) or np.any(rho <= 0):
            raise ScenarioError(f"{spec.kind}: density is not positive on the grid")
        c = rho ** -0.5
        cmax = float(c.max())
        if spec.c_star is not None:
            if cmax > spec.c_star * (1 + 1e-12):
                raise ScenarioError(f"{spec.kind}: max speed {cmax:.6g} exceeds c_star {spec.c_star}")
            break
        if cmax <= c_star:
            break
        c_star = math.ceil(cmax * 100 - 1e-9) / 100
    else:  # pragma: no cover - the loop converges in two passes for bounded media
        raise ScenarioError("could not settle the speed bound c_star")
    prov = dict(spec.to_dict(), h=float(h), margin=float(margin), s=float(s))
    prov["c_star"] = float(c_star)
    return MediumField(grid=grid, c=c, c_star=float(c_star), provenance=prov)
