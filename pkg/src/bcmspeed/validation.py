"""Comparison of recovered fields with a known medium."""
from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ValidationFailure
from .medium import Grid


def relative_error(c_rec, c_true):
    """Percent error ``100 |c_rec - c_true| / c_true``; NaN where not recovered."""
    c_rec = np.asarray(c_rec, dtype=float)
    c_true = np.asarray(c_true, dtype=float)
    if c_rec.shape != c_true.shape:
        raise ValidationFailure(f"grid mismatch: recovered {c_rec.shape} vs truth {c_true.shape}")
    return 100.0 * np.abs(c_rec - c_true) / c_true


def error_stats(err, mask, threshold=10.0):
    """Summary of a percent-error map over ``mask``.

    Unrecovered (NaN) cells inside the mask count as failures.
    """
    mask = np.asarray(mask, dtype=bool)
    e = np.asarray(err, dtype=float)[mask]
    n = int(e.size)
    if n == 0:
        return dict(n=0, n_missing=0, fraction_below=0.0, threshold=float(threshold),
                    median=float("nan"), p90=float("nan"), max=float("nan"))
    filled = np.where(np.isfinite(e), e, np.inf)
    finite = e[np.isfinite(e)]

    def q(p):
        if not finite.size:
            return float("inf")
        # quantiles that straddle a missing cell come out as inf
        with np.errstate(invalid="ignore"):
            v = float(np.percentile(filled, p))
        return v if not np.isnan(v) else float("inf")

    return dict(n=n, n_missing=int(n - finite.size), fraction_below=float(np.mean(filled < threshold)),
                threshold=float(threshold), median=q(50), p90=q(90),
                max=float(filled.max()))


def map_error(gamma, xi, x1, x2, chart):
    """Distance between a recovered map and a ray-traced chart at image nodes.

    ``chart`` needs ``gamma``, ``xi``, ``x1``, ``x2`` on a grid that covers
    the image nodes (bilinear interpolation).
    """
    pts = np.stack(np.meshgrid(xi, gamma, indexing="ij"), axis=-1)
    f1 = RegularGridInterpolator((chart.xi, chart.gamma), chart.x1)
    f2 = RegularGridInterpolator((chart.xi, chart.gamma), chart.x2)
    return np.hypot(np.asarray(x1) - f1(pts), np.asarray(x2) - f2(pts))


def deep_median(err, mask, grid: Grid, x2_max=-0.6):
    """Median percent error over ``mask`` below the depth ``x2 < x2_max``."""
    _, X2 = grid.mesh()
    sel = np.asarray(mask, bool) & (X2 < x2_max)
    if not sel.any():
        return float("nan")
    e = np.asarray(err, float)[sel]
    return float(np.median(np.where(np.isfinite(e), e, np.inf)))


def wedge_apex(grid: Grid, rho, mask, fit_range, band, background=1.0):
    """Apex of a wedge opening towards ``+x1``.

    The excess mass ``m(x1) = int (rho - background) dx2`` over ``band`` grows
    linearly from the apex; Gaussian blur keeps both column integrals and
    linear ramps, so the zero of a straight-line fit over ``fit_range`` is
    insensitive to smoothing. The apex depth is the half-level upper edge
    of the wedge, fitted by a line over the same columns.

    Returns
    -------
    (x1, x2) : tuple of float
    """
    X1, X2 = grid.mesh()
    rho = np.asarray(rho, float)
    sel = np.asarray(mask, bool) & np.isfinite(rho) & (X2 >= band[0]) & (X2 <= band[1])
    m = np.where(sel, rho - background, 0.0).sum(axis=0) * grid.h2
    x = grid.x1
    cols = np.flatnonzero((x >= fit_range[0]) & (x <= fit_range[1]) & sel.any(axis=0))
    if cols.size < 2:
        raise ValidationFailure("wedge fit range holds fewer than two columns")
    p = np.polyfit(x[cols], m[cols], 1)
    if p[0] <= 0:
        raise ValidationFailure("no wedge-like excess found")
    xa = -p[1] / p[0]
    tops, xs = [], []
    for j in cols:
        col = np.where(sel[:, j], rho[:, j], np.nan)
        if not np.isfinite(col).any():
            continue
        i = int(np.nanargmax(col))
        level = background + 0.5 * (col[i] - background)
        above = np.flatnonzero(np.nan_to_num(col, nan=-np.inf) >= level)
        # rows run downwards from the boundary, so the upper edge is the first row
        tops.append(X2[above.min(), j])
        xs.append(x[j])
    pt = np.polyfit(xs, tops, 1)
    return float(xa), float(np.polyval(pt, xa))
