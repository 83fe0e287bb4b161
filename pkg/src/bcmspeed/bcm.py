"""Inversion from boundary data: Gram systems, images, map and speed.

All quantities are assembled from a :class:`~bcmspeed.datasets.TraceDataset`
only. The medium never enters this module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import griddata
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigvalsh
from scipy.ndimage import gaussian_filter1d
from scipy.signal import fftconvolve

from .controls import ControlFunction, cumtrapz, fold_adjoint_array, odd_extend_array, trapezoid_weights
from .datasets import TraceDataset, read_container, write_container
from .errors import InversionError
from .medium import Grid
from .rays import polygon_mask

TAGS = ("pi0", "pi1", "pi2")


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Gram matrix of the family delayed to ``xi``.

    ``indices`` are the global control indices of the family,
    ``symmetry_defect`` is ``max|G - G^T| / max|G|`` before symmetrization.
    """

    xi: float
    indices: np.ndarray
    matrix: np.ndarray
    symmetry_defect: float = 0.0
    min_eig: float = float("nan")
    max_eig: float = float("nan")

    @property
    def order(self):
        return self.indices.size

    @property
    def cond(self):
        if self.order == 0:
            return 1.0
        return self.max_eig / self.min_eig if self.min_eig > 0 else math.inf

    @property
    def psd(self):
        scale = self.max_eig if self.order else 0.0
        return self.order == 0 or self.min_eig >= -1e-8 * abs(scale)


@dataclass(frozen=True, eq=False)
class RhsVector:
    xi: float
    tag: str
    indices: np.ndarray
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class TikhonovResult:
    coeffs: np.ndarray
    alpha: float
    residual: float


@dataclass(frozen=True, eq=False)
class ImageField:
    """Samples ``values[i, j]`` at ``(xi[i], gamma[j])``."""

    tag: str
    gamma: np.ndarray
    xi: np.ndarray
    values: np.ndarray
    smoothing: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class SemiGeodesicMap:
    gamma: np.ndarray
    xi: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class SpeedMap:
    """Recovered speed on ray coordinates and resampled on a Cartesian grid."""

    gamma: np.ndarray
    xi: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    c: np.ndarray
    valid: np.ndarray
    grid: Grid
    c_grid: np.ndarray
    mask: np.ndarray


class InverseData:
    """Dataset-derived quantities shared by all inversion stages.

    Parameters
    ----------
    ds : TraceDataset
    mode : {'inverse-data', 'pseudo-reconstruction'}
        Source of the Gram matrix and right-hand sides. In pseudo mode they
        come from the dataset's interior-product block; the connecting
        responses always come from the traces.
    """

    def __init__(self, ds: TraceDataset, mode="inverse-data"):
        if mode not in ("inverse-data", "pseudo-reconstruction"):
            raise InversionError(f"unknown mode {mode!r}")
        if mode == "pseudo-reconstruction" and not ds.has_oracle:
            raise InversionError("pseudo-reconstruction needs a dataset built with the oracle block")
        self.ds = ds
        self.mode = mode
        b = self.basis = ds.basis
        self.dt = ds.time.dt
        self.q = ds.time.q
        self.nT = ds.time.n_T
        self.T = ds.T
        self.L = ds.L
        x = ds.strip_x1
        self.wx = np.full(x.size, ds.grid.h1)
        self.phi = b.spatial_matrix(x)
        t = np.arange(self.nT + 1) * self.dt
        self.t = t
        self.psi = b.temporal_matrix(t)
        self.Spsi = odd_extend_array(self.psi)
        self.JSpsi = cumtrapz(self.Spsi, self.dt)
        sig = np.abs(x) <= self.L * (1 + 1e-12)
        self.gamma = x[sig]
        self._Ksig_rev = np.ascontiguousarray(ds.kernels[:, sig, ::-1])
        self._G = None
        self._B = None

    # -- assembly -----------------------------------------------------------
    def full_gram(self):
        """Gram matrix of the whole family and its symmetry defect."""
        if self._G is None:
            if self.mode == "pseudo-reconstruction":
                G = np.array(self.ds.oracle_gram)
                self._G = (G, 0.0)
            else:
                self._G = _boundary_gram(self)
        return self._G

    def full_rhs(self):
        if self._B is None:
            if self.mode == "pseudo-reconstruction":
                self._B = {tag: np.array(self.ds.oracle_rhs[i]) for i, tag in enumerate(TAGS)}
            else:
                self._B = {tag: _boundary_rhs(self, tag) for tag in TAGS}
        return self._B

    def delay_index(self, xi):
        r = xi / self.basis.Delta
        l = int(round(r))
        if abs(r - l) > 1e-9 or not 0 <= l <= self.basis.n_t:
            raise InversionError(f"xi = {xi} is not on the grid l * Delta, l = 0..{self.basis.n_t}")
        return l

    def control_response(self, coeffs_by_tag, ns):
        """``C^T`` of coefficient combinations at time indices ``ns``.

        Parameters
        ----------
        coeffs_by_tag : (N, n_tags) array
        ns : sequence of int, 0 <= n <= n_T

        Returns
        -------
        (len(ns), n_sigma, n_tags) array
        """
        b = self.basis
        d = np.asarray(coeffs_by_tag, dtype=float)
        ntag = d.shape[1]
        # profile per spatial function: P[l, n, tag] = sum_m d[(l, m), tag] J S psi_m[n]
        P = np.einsum("mlk,mn->lnk", d.reshape(b.n_t, b.n_gamma, ntag), self.JSpsi)
        n2 = 2 * self.nT
        out = np.empty((len(ns), self.gamma.size, ntag))
        Kr = self._Ksig_rev
        for i, n in enumerate(ns):
            y1 = np.tensordot(Kr[:, :, n2 - n:], P[:, : n + 1], axes=([0, 2], [0, 1]))
            m = n2 - n
            y2 = np.tensordot(Kr[:, :, n2 - m:], P[:, : m + 1], axes=([0, 2], [0, 1]))
            out[i] = 0.5 * (y1 - y2)
        return out


def _as_data(source, mode="inverse-data"):
    if isinstance(source, InverseData):
        return source
    if isinstance(source, TraceDataset):
        return InverseData(source, mode)
    raise TypeError(f"expected TraceDataset or InverseData, got {type(source).__name__}")


def _boundary_gram(data: InverseData):
    b = data.basis
    K = data.ds.kernels
    n2 = K.shape[-1]
    # project the responses onto the spatial functions over the strip
    Kp = np.einsum("lxn,px,x->lpn", K, data.phi, data.wx)
    w2 = trapezoid_weights(n2, data.dt)
    G = np.zeros((b.n_t, b.n_gamma, b.n_t, b.n_gamma))
    for l in range(b.n_gamma):
        Q = fftconvolve(Kp[l][None, :, :], data.JSpsi[:, None, :], axes=-1)[..., :n2]
        G[:, l] = 0.5 * np.einsum("mbn,pn,n->mpb", Q, data.Spsi, w2)
    G = G.reshape(b.size, b.size)
    scale = np.abs(G).max() if G.size else 1.0
    defect = float(np.abs(G - G.T).max() / scale) if G.size else 0.0
    return 0.5 * (G + G.T), defect


def _boundary_rhs(data: InverseData, tag):
    b = data.basis
    nT = data.nT
    K = data.ds.kernels[:, :, : nT + 1]
    x = data.ds.strip_x1
    wT = trapezoid_weights(nT + 1, data.dt) * (data.T - data.t)
    Sf = data.Spsi[:, : nT + 1]
    out = np.zeros((b.n_t, b.n_gamma))
    if tag in ("pi0", "pi1"):
        a = np.ones_like(x) if tag == "pi0" else x
        Ka = np.einsum("lxn,x->ln", K, a * data.wx)
        for l in range(b.n_gamma):
            r = fftconvolve(Ka[l][None, :], Sf, axes=-1)[:, : nT + 1]
            out[:, l] = r @ wT
    elif tag == "pi2":
        # a = x2 vanishes on the boundary and its normal derivative is 1
        mass = data.phi @ data.wx
        out -= np.outer(Sf @ wT, mass)
    else:
        raise InversionError(f"unknown harmonic tag {tag!r}")
    return out.reshape(b.size)


def gram_matrix(source, xi) -> GramMatrix:
    """Gram matrix of the family delayed to ``xi = l Delta``.

    ``source`` is a :class:`TraceDataset` or a prepared :class:`InverseData`
    (which caches the full matrix between calls).
    """
    data = _as_data(source)
    l = data.delay_index(xi)
    G, defect = data.full_gram()
    idx = data.basis.family_indices(l)
    M = G[np.ix_(idx, idx)]
    if not np.all(np.isfinite(M)):
        raise InversionError(f"non-finite Gram entries at xi = {xi}")
    if idx.size:
        ev = eigvalsh(M)
        lo, hi = float(ev[0]), float(ev[-1])
    else:
        lo = hi = float("nan")
    return GramMatrix(float(xi), idx, M, defect, lo, hi)


def rhs_vector(source, xi, tag) -> RhsVector:
    """Right-hand side for the harmonic ``tag`` on the family delayed to ``xi``."""
    data = _as_data(source)
    if tag not in TAGS:
        raise InversionError(f"unknown harmonic tag {tag!r}")
    l = data.delay_index(xi)
    idx = data.basis.family_indices(l)
    return RhsVector(float(xi), tag, idx, data.full_rhs()[tag][idx])


def tikhonov_solve(G, B, alpha=0.0, residual_target=None) -> TikhonovResult:
    """Solve ``(G + alpha I) C = B`` by Cholesky.

    With ``residual_target`` set, ``alpha`` is the largest value (found by
    bisection in ``log alpha``) whose relative residual ``|G C - B| / |B|``
    does not exceed the target.
    """
    G = G.matrix if isinstance(G, GramMatrix) else np.asarray(G, dtype=float)
    B = B.values if isinstance(B, RhsVector) else np.asarray(B, dtype=float)
    if G.shape != (B.shape[0], B.shape[0]):
        raise InversionError(f"dimension mismatch: G {G.shape}, B {B.shape}")
    if B.shape[0] == 0:
        return TikhonovResult(np.zeros_like(B), float(alpha), 0.0)
    if alpha < 0:
        raise InversionError("alpha must be non-negative")

    def solve(a):
        try:
            cf = cho_factor(G + a * np.eye(G.shape[0]), lower=True, check_finite=True)
        except LinAlgError as exc:
            raise InversionError(f"G + alpha I is not positive definite at alpha = {a:.3g}; "
                                 "increase alpha") from exc
        C = cho_solve(cf, B)
        nb = np.linalg.norm(B)
        res = float(np.linalg.norm(G @ C - B) / nb) if nb > 0 else 0.0
        return C, res

    if residual_target is None:
        C, res = solve(alpha)
        return TikhonovResult(C, float(alpha), res)
    scale = float(np.abs(np.linalg.eigvalsh(G)).max())
    lo, hi = math.log(scale * 1e-16), math.log(scale * 1e2)
    best = None
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        try:
            C, res = solve(math.exp(mid))
        except InversionError:
            lo = mid
            continue
        if res <= residual_target:
            best = (C, math.exp(mid), res)
            lo = mid
        else:
            hi = mid
    if best is None:
        raise InversionError(f"no alpha reaches the residual target {residual_target}")
    return TikhonovResult(best[0], best[1], best[2])


def connecting_apply(source, f):
    """``C^T f = 1/2 fold(R J S f)`` on the trace strip over ``[0, T]``.

    Parameters
    ----------
    source : TraceDataset or InverseData
    f : int or array
        A control index, or coefficients of ``sum_k f_k``.

    Returns
    -------
    ControlFunction
        Samples on ``strip_x1 x [0, T]``.
    """
    data = _as_data(source)
    b = data.basis
    if np.ndim(f) == 0:
        d = np.zeros(b.size)
        d[int(f)] = 1.0
    else:
        d = np.asarray(f, dtype=float)
        if d.shape != (b.size,):
            raise InversionError(f"expected {b.size} coefficients, got {d.shape}")
    P = d.reshape(b.n_t, b.n_gamma).T @ data.JSpsi
    K = data.ds.kernels
    n2 = K.shape[-1]
    y = np.zeros(K.shape[1:])
    for l in range(b.n_gamma):
        if np.any(P[l]):
            y += fftconvolve(K[l], P[l][None, :], axes=-1)[:, :n2]
    return ControlFunction(data.ds.strip_x1.copy(), data.t.copy(), 0.5 * fold_adjoint_array(y),
                           meta=dict(kind="connecting"))


def amplitude_image(source, alpha=0.0, residual_target=None, report=None):
    """Raw images of ``pi0, pi1, pi2`` from the jump of the connecting response.

    For each ``xi_l = l Delta`` (``l = 0..n_t - 1``) the difference series
    ``sum_k (c^T_k - c^xi_k) C^T f_k`` is averaged over the window of one
    temporal spacing that ends just before ``t = T - xi_l``. The window mean
    is attributed to its centre, ``xi_l + (q + 1) dt / 2``.

    Returns
    -------
    dict tag -> ImageField
    """
    data = _as_data(source)
    b = data.basis
    G, _ = data.full_gram()
    B = data.full_rhs()
    tags = list(TAGS)
    Bm = np.column_stack([B[t] for t in tags])
    full = _solve_multi(G, Bm, alpha, residual_target)
    rows, xis = [], []
    info = []
    for l in range(b.n_t):
        idx = b.family_indices(l)
        d = full.coeffs.copy()
        if idx.size:
            sub = _solve_multi(G[np.ix_(idx, idx)], Bm[idx], full.alpha, None)
            d[idx] -= sub.coeffs
            info.append(dict(xi=l * b.Delta, order=int(idx.size), residual=sub.residual))
        n0 = data.nT - l * data.q
        ns = list(range(n0 - data.q, n0))
        rows.append(data.control_response(d, ns).mean(axis=0))
        xis.append(l * b.Delta + (data.q + 1) * data.dt / 2)
    if report is not None:
        report["alpha"] = full.alpha
        report["residual_T"] = full.residual
        report["systems"] = info
    vals = np.array(rows)  # (n_xi, n_sigma, n_tags)
    xi = np.array(xis)
    return {tag: ImageField(tag, data.gamma.copy(), xi, vals[:, :, i].copy()) for i, tag in enumerate(tags)}


def _solve_multi(G, Bm, alpha, residual_target):
    if residual_target is None:
        res = tikhonov_solve(G, Bm, alpha)
        return res
    # a common alpha for all tags: the strictest of the per-tag searches
    alphas = [tikhonov_solve(G, Bm[:, i], residual_target=residual_target).alpha for i in range(Bm.shape[1])]
    return tikhonov_solve(G, Bm, min(alphas))


def smooth_image(img: ImageField, sigma_gamma=0.0, sigma_t=0.0, sigma_gamma_end=None, ramp_start=0.8,
                 T=None) -> ImageField:
    """Separable Gaussian smoothing with reflective edges.

    ``sigma_gamma`` is in ``x1`` units and ``sigma_t`` in ``xi`` units. With
    ``sigma_gamma_end`` set, the ``gamma`` width grows linearly from
    ``sigma_gamma`` at ``xi = ramp_start T`` to ``sigma_gamma_end`` at ``xi = T``.
    """
    if sigma_gamma < 0 or sigma_t < 0:
        raise ValueError("smoothing widths must be non-negative")
    v = np.array(img.values, dtype=float)
    hg = img.gamma[1] - img.gamma[0] if img.gamma.size > 1 else 1.0
    hx = img.xi[1] - img.xi[0] if img.xi.size > 1 else 1.0
    if sigma_gamma_end is None or T is None:
        widths = np.full(img.xi.size, float(sigma_gamma))
    else:
        ramp = np.clip((img.xi - ramp_start * T) / ((1 - ramp_start) * T), 0.0, 1.0)
        widths = sigma_gamma + ramp * (sigma_gamma_end - sigma_gamma)
    for i, w in enumerate(widths):
        if w > 0:
            v[i] = gaussian_filter1d(v[i], w / hg, mode="reflect")
    if sigma_t > 0:
        v = gaussian_filter1d(v, sigma_t / hx, axis=0, mode="reflect")
    rec = dict(img.smoothing, sigma_gamma=float(sigma_gamma), sigma_t=float(sigma_t),
               sigma_gamma_end=None if sigma_gamma_end is None else float(sigma_gamma_end),
               ramp_start=float(ramp_start))
    return ImageField(img.tag, img.gamma, img.xi, v, rec)


def recover_map(images, floor=1e-2, max_masked=0.5) -> SemiGeodesicMap:
    """``x = (pi1 / pi0, pi2 / pi0)`` on the image grid.

    Cells with ``|pi0|`` below ``floor`` times its median magnitude are
    marked invalid.
    """
    p0, p1, p2 = (images[t].values for t in TAGS)
    thresh = floor * np.median(np.abs(p0))
    valid = np.abs(p0) >= thresh
    if p0.size and (~valid).mean() > max_masked:
        raise InversionError(f"pi0 image below floor on {(~valid).mean():.0%} of the grid")
    safe = np.where(valid, p0, 1.0)
    x1 = np.where(valid, p1 / safe, np.nan)
    x2 = np.where(valid, p2 / safe, np.nan)
    img = images["pi0"]
    return SemiGeodesicMap(img.gamma, img.xi, x1, x2, valid)


def recover_speed(smap: SemiGeodesicMap, grid: Grid, c_max=np.inf) -> SpeedMap:
    """``c = |dx/dxi|`` by central differences, resampled on ``grid``.

    The Cartesian field is linear scattered-data interpolation, kept only
    inside the polygon bounding the recovered chart. A ray is cut at the
    first cell whose speed exceeds ``c_max``; the images break down near
    ``xi = T`` and the map there can run off to great depth.
    """
    if smap.xi.size < 2:
        raise InversionError("the xi range is too short for differencing")
    d1 = np.gradient(smap.x1, smap.xi, axis=0)
    d2 = np.gradient(smap.x2, smap.xi, axis=0)
    c = np.hypot(d1, d2)
    valid = smap.valid & np.isfinite(c) & (c > 0) & (c <= c_max)
    # neighbours of masked cells enter the stencil; drop them as well
    valid[1:] &= smap.valid[:-1]
    valid[:-1] &= smap.valid[1:]
    # a recovered ray must keep going down; cut it where the map folds back
    step = np.diff(smap.x2, axis=0)
    valid[1:] &= np.isfinite(step) & (step < 0)
    # keep, per ray, the run of valid cells from the boundary downwards
    depth = np.argmin(np.vstack([valid, np.zeros((1, valid.shape[1]), bool)]), axis=0)
    valid &= np.arange(valid.shape[0])[:, None] < depth[None, :]
    c_grid = np.full(grid.shape, np.nan)
    mask = np.zeros(grid.shape, dtype=bool)
    cols = np.flatnonzero(depth >= 2)
    if cols.size >= 2:
        pts = np.column_stack([smap.x1[valid], smap.x2[valid]])
        mask = polygon_mask(_prefix_polygon(smap.x1, smap.x2, depth, cols), grid)
        X1, X2 = grid.mesh()
        vals = griddata(pts, c[valid], (X1[mask], X2[mask]), method="linear")
        c_grid[mask] = vals
        mask &= np.isfinite(c_grid) & (c_grid > 0)
        c_grid[~mask] = np.nan
    return SpeedMap(smap.gamma, smap.xi, smap.x1, smap.x2, np.where(valid, c, np.nan), valid, grid, c_grid, mask)


def _prefix_polygon(x1, x2, depth, cols):
    """Boundary of the chart image restricted to ``xi`` rows ``< depth[j]``."""
    j0, j1 = cols[0], cols[-1]
    left = np.column_stack([x1[: depth[j0], j0], x2[: depth[j0], j0]])
    bottom = np.column_stack([x1[depth[cols] - 1, cols], x2[depth[cols] - 1, cols]])
    right = np.column_stack([x1[depth[j1] - 1:: -1, j1], x2[depth[j1] - 1:: -1, j1]])
    top = np.column_stack([x1[0, cols[::-1]], x2[0, cols[::-1]]])
    return np.vstack([left, bottom, right, top])


def condition_table(source):
    """``(xi, order, cond)`` rows for ``xi_l = l Delta``, ``l = 1..n_t``."""
    data = _as_data(source)
    rows = []
    for l in range(1, data.basis.n_t + 1):
        g = gram_matrix(data, l * data.basis.Delta)
        rows.append((g.xi, g.order, g.cond))
    return np.array(rows).reshape(-1, 3)


def projection_norms(source, tag, alpha=0.0):
    """``<C^xi, B^xi>`` for ``xi_l = l Delta``; estimates ``|P^xi a|^2``."""
    data = _as_data(source)
    out = []
    for l in range(1, data.basis.n_t + 1):
        xi = l * data.basis.Delta
        G = gram_matrix(data, xi)
        B = rhs_vector(data, xi, tag)
        C = tikhonov_solve(G, B, alpha).coeffs
        out.append(float(C @ B.values))
    return np.array(out)


@dataclass(eq=False)
class Reconstruction:
    raw: dict
    smoothed: dict
    map: SemiGeodesicMap
    speed: SpeedMap
    report: dict


def reconstruct(ds: TraceDataset, mode="inverse-data", alpha=1e-5, residual_target=None, sigma_gamma=0.125,
                sigma_t=0.0, sigma_gamma_end=None, ramp_start=0.8, floor=1e-2) -> Reconstruction:
    """Images, map and speed from a dataset (no medium involved)."""
    data = InverseData(ds, mode)
    report = dict(mode=mode)
    raw = amplitude_image(data, alpha, residual_target, report)
    sm = {t: smooth_image(raw[t], sigma_gamma, sigma_t, sigma_gamma_end, ramp_start, ds.T) for t in TAGS}
    smap = recover_map(sm, floor)
    speed = recover_speed(smap, ds.grid, c_max=2.0 * float(ds.manifest["c_star"]))
    G, defect = data.full_gram()
    report.update(sigma_gamma=sigma_gamma, sigma_t=sigma_t, sigma_gamma_end=sigma_gamma_end,
                  ramp_start=ramp_start, gram_symmetry_defect=defect,
                  condition=[dict(xi=float(x), order=int(o), cond=float(c)) for x, o, c in condition_table(data)])
    return Reconstruction(raw, sm, smap, speed, report)


def save_reconstruction(rec: Reconstruction, path, header=None):
    """Persist images, map and speed in the container format."""
    blocks = {"gamma": rec.map.gamma, "xi": rec.map.xi}
    for t in TAGS:
        blocks[f"raw_{t}"] = rec.raw[t].values
        blocks[t] = rec.smoothed[t].values
    sp = rec.speed
    blocks.update(map_x1=rec.map.x1, map_x2=rec.map.x2, c_ray=sp.c, valid=sp.valid, c_grid=sp.c_grid,
                  mask=sp.mask)
    cond = rec.report.get("condition", [])
    blocks["condition"] = np.array([[r["xi"], r["order"], r["cond"]] for r in cond]).reshape(-1, 3)
    head = dict(header or {}, format="reconstruction", grid=sp.grid.to_dict(),
                smoothing=rec.smoothed["pi0"].smoothing, mode=rec.report.get("mode"))
    write_container(path, "reconstruction", head, blocks)


def load_reconstruction(path):
    """``(header, blocks)`` of a saved reconstruction."""
    kind, header, blocks = read_container(path)
    if kind != "reconstruction":
        raise InversionError(f"{path}: expected a reconstruction, found {kind!r}")
    return header, blocks
