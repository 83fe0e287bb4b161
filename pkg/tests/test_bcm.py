import copy

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.fft import dct
from scipy.integrate import simpson
from scipy.interpolate import interp1d

from bcmspeed import (ControlBasis, Grid, ImageField, InversionError, InverseData, ScenarioSpec, SemiGeodesicMap,
                      TraceDataset, amplitude_image, build_dataset, condition_table, connecting_apply, gram_matrix,
                      make_scenario, projection_norms, reconstruct, recover_map, recover_speed, rhs_vector,
                      smooth_image, tikhonov_solve, trace_rays)
from bcmspeed.bcm import TAGS, load_reconstruction, save_reconstruction
from bcmspeed.controls import inner
from bcmspeed.validation import map_error


@pytest.fixture(scope="module")
def data(small_ds):
    return InverseData(small_ds)


@pytest.fixture(scope="module")
def test1a_coarse():
    """Test-1 medium with the Test-1a basis at h = 1/64 (no oracle)."""
    m = make_scenario(ScenarioSpec("test1"), h=1 / 64)
    return m, build_dataset(m, ControlBasis(16, 16, 1.0))


@pytest.fixture(scope="module")
def test1a_rec(test1a_coarse):
    return reconstruct(test1a_coarse[1], alpha=1e-5, sigma_gamma=0.125)


# Gram matrices

def test_gram_symmetric_psd(data):
    G, defect = data.full_gram()
    assert defect <= 1e-3
    assert np.array_equal(G, G.T)
    g = gram_matrix(data, 1.0)
    assert g.psd and g.min_eig > -1e-8 * g.max_eig


def test_delayed_gram_is_principal_submatrix(data):
    G, _ = data.full_gram()
    b = data.basis
    for l in (1, 4, 8):
        g = gram_matrix(data, l * b.Delta)
        assert g.order == l * b.n_gamma
        assert np.array_equal(g.matrix, G[np.ix_(g.indices, g.indices)])


def test_condition_monotone(data):
    cond = condition_table(data)[:, 2]
    assert np.all(np.diff(cond) > 0)


def test_gram_off_grid_xi(data):
    with pytest.raises(InversionError, match="not on the grid"):
        gram_matrix(data, 0.3)


# right-hand sides

def test_pi2_rhs_closed_form(small_ds, data):
    # B_k = -int (T - t) f_k dGamma dt, evaluated by Simpson on fine grids
    b = small_ds.basis
    x = np.linspace(-2, 2, 4001)
    t = np.linspace(0, 1, 4097)
    B = rhs_vector(data, 1.0, "pi2").values
    for k in (0, b.index(3, 2), b.index(7, 7), b.size - 5):
        l, m = b.unravel(k)
        fx = simpson(b.spatial(l, x), x=x)
        ft = simpson((1 - t) * b.temporal_matrix(t)[m], x=t)
        assert_allclose(B[k], -fx * ft, rtol=2e-5, atol=1e-12 * np.abs(B).max())


def test_zero_trace_gives_zero_rhs(small_ds):
    kernels = small_ds.kernels.copy()
    kernels[2] = 0.0
    blind = TraceDataset(small_ds.manifest, kernels)
    b = blind.basis
    for tag in ("pi0", "pi1"):
        B = rhs_vector(blind, 1.0, tag).values
        assert np.all(B[b.index(2, np.arange(b.n_t))] == 0.0)
    out = connecting_apply(blind, b.index(2, 3))
    assert not out.values.any()


def test_unknown_tag(data):
    with pytest.raises(InversionError):
        rhs_vector(data, 1.0, "pi3")


# Tikhonov

def test_identity_system(rng):
    B = rng.normal(size=12)
    assert_allclose(tikhonov_solve(np.eye(12), B).coeffs, B, rtol=1e-15)


def test_over_regularized_limit(data):
    G = gram_matrix(data, 1.0)
    B = rhs_vector(data, 1.0, "pi0")
    prev = np.inf
    for a in (1e2, 1e4, 1e6):
        C = tikhonov_solve(G, B, a).coeffs
        assert np.linalg.norm(C) < prev
        prev = np.linalg.norm(C)
        nb = np.linalg.norm(B.values)
        assert np.linalg.norm(a * C - B.values) <= 1.01 * G.max_eig / a * nb


def test_residual_target(data):
    G = gram_matrix(data, 1.0)
    B = rhs_vector(data, 1.0, "pi1")
    res = tikhonov_solve(G, B, residual_target=1e-3)
    assert res.residual <= 1e-3
    looser = tikhonov_solve(G, B, residual_target=1e-2)
    assert looser.alpha > res.alpha


def test_indefinite_system_guidance():
    with pytest.raises(InversionError, match="increase alpha"):
        tikhonov_solve(np.diag([1.0, -1.0]), np.ones(2), 0.0)
    with pytest.raises(InversionError, match="dimension"):
        tikhonov_solve(np.eye(3), np.ones(2))


def test_energy_of_solution_nonnegative(data):
    for l in (2, 5, 8):
        xi = l * data.basis.Delta
        G = gram_matrix(data, xi)
        for tag in TAGS:
            C = tikhonov_solve(G, rhs_vector(data, xi, tag), 1e-6).coeffs
            assert C @ G.matrix @ C >= 0


# connecting operator

def test_connecting_operator_reproduces_gram(data, small_ds):
    # G is the symmetrized matrix; C^T reproduces it up to the symmetry defect
    G, defect = data.full_gram()
    b = data.basis
    x = small_ds.strip_x1
    ks = [0, b.index(3, 4), b.index(5, 7), b.size - 1]
    for i in ks:
        Ci = connecting_apply(data, i)
        for j in ks:
            fj = b.control(j, x, data.t)
            assert_allclose(inner(Ci, fj), G[i, j], rtol=0, atol=defect * np.abs(G).max())


def test_connecting_operator_self_adjoint(data, small_ds):
    b = data.basis
    x = small_ds.strip_x1
    G, defect = data.full_gram()
    off = np.abs(np.triu(G, 1))
    pairs = np.column_stack(np.unravel_index(np.argsort(off, axis=None)[-40::13], G.shape))
    for i, j in pairs:
        lhs = inner(connecting_apply(data, i), b.control(j, x, data.t))
        rhs = inner(connecting_apply(data, j), b.control(i, x, data.t))
        assert abs(lhs - rhs) <= 2 * defect * np.abs(G).max()
        assert abs(lhs) > 100 * defect * np.abs(G).max()


def test_connecting_linear_in_coefficients(data, rng):
    d = rng.normal(size=data.basis.size)
    whole = connecting_apply(data, d).values
    parts = sum(d[k] * connecting_apply(data, k).values for k in range(data.basis.size))
    assert_allclose(whole, parts, atol=1e-12 * np.abs(whole).max())


# projections

@pytest.mark.parametrize("tag", TAGS)
def test_projection_norms_monotone(data, tag):
    p = projection_norms(data, tag, alpha=1e-6)
    assert np.all(p >= 0)
    assert np.all(np.diff(p) >= 0)


# images, smoothing and the map

def synthetic(values, tag="pi0"):
    v = np.asarray(values, dtype=float)
    return ImageField(tag, np.linspace(-1, 1, v.shape[1]), np.linspace(0.05, 0.95, v.shape[0]), v)


def test_smoothing_identity_and_constant(rng):
    img = synthetic(rng.normal(size=(10, 33)))
    assert np.array_equal(smooth_image(img, 0.0, 0.0).values, img.values)
    flat = synthetic(np.full((10, 33), 2.5))
    assert_allclose(smooth_image(flat, 0.3, 0.2).values, 2.5, rtol=1e-14)
    ramp = smooth_image(flat, 0.1, 0.0, sigma_gamma_end=0.4, ramp_start=0.5, T=1.0)
    assert ramp.smoothing["sigma_gamma_end"] == 0.4
    with pytest.raises(ValueError):
        smooth_image(img, -1.0)


def test_smoothing_suppresses_gibbs(test1a_coarse):
    # high-frequency band: cosine modes above the spatial basis resolution
    ds = test1a_coarse[1]
    raw = amplitude_image(ds, 1e-5)["pi1"]
    sm = smooth_image(raw, 0.1875, 0.0)
    kc = ds.basis.n_gamma

    def hf(v):
        return np.sum(dct(v, axis=1, norm="ortho")[:, kc:] ** 2)

    assert hf(raw.values) >= 5 * hf(sm.values)


def test_ratio_invariance(rng):
    base = {t: synthetic(rng.uniform(0.5, 2.0, size=(8, 17)), t) for t in TAGS}
    G, X = np.meshgrid(base["pi0"].gamma, base["pi0"].xi)
    factor = np.exp(0.3 * np.sin(2 * G) + 0.2 * X)
    scaled = {t: ImageField(t, im.gamma, im.xi, im.values * factor) for t, im in base.items()}
    a, b = recover_map(base), recover_map(scaled)
    assert_allclose(b.x1, a.x1, rtol=1e-14)
    assert_allclose(b.x2, a.x2, rtol=1e-14)


def test_map_floor():
    v = np.ones((4, 9))
    v[:, :2] = 1e-6
    imgs = {t: synthetic(v, t) for t in TAGS}
    m = recover_map(imgs)
    assert not m.valid[:, :2].any() and m.valid[:, 2:].all()
    assert np.isnan(m.x1[:, :2]).all()
    with pytest.raises(InversionError, match="below floor"):
        recover_map(imgs, max_masked=0.2)


def test_boundary_consistency(test1a_coarse, test1a_rec):
    # row 1 is the shallowest window lying strictly inside (0, T)
    m = test1a_coarse[0]
    rec = test1a_rec
    ch = trace_rays(m, rec.map.gamma, 1 / 256, 1.0)
    sel = np.abs(rec.map.gamma) <= 0.5
    xi = rec.map.xi[1]
    c_true = interp1d(ch.xi, ch.c, axis=0)(xi)[sel]
    c_rec = rec.speed.c[1][sel]
    inv_p0 = 1 / rec.smoothed["pi0"].values[1][sel]
    assert np.all(rec.speed.valid[1][sel])
    assert np.abs(c_rec / c_true - 1).max() <= 0.03
    assert np.abs(c_rec / inv_p0 - 1).max() <= 0.03
    assert np.abs(inv_p0 / ch.c[0][sel] - 1).max() <= 0.03


def test_test1_map_error(test1a_coarse, test1a_rec):
    m = test1a_coarse[0]
    rec = test1a_rec
    ch = trace_rays(m, np.linspace(-1, 1, 257), 1 / 256, 1.0)
    err = map_error(rec.map.gamma, rec.map.xi, rec.map.x1, rec.map.x2, ch)
    sel = (np.abs(rec.map.gamma)[None, :] <= 0.5) & ((rec.map.xi >= 0.1) & (rec.map.xi <= 0.8))[:, None]
    assert np.nanmax(err[sel]) <= 0.05


def test_speed_positive_on_mask(test1a_rec):
    sp = test1a_rec.speed
    assert np.all(sp.c_grid[sp.mask] > 0)
    assert np.all(sp.c[sp.valid] > 0)
    assert np.isnan(sp.c_grid[~sp.mask]).all()


def test_speed_cut_at_runaway_depth():
    # straight rays at unit speed that run away below xi = 0.6
    gamma = np.linspace(-0.5, 0.5, 11)
    xi = np.linspace(0.05, 0.95, 19)
    depth = np.where(xi <= 0.6, xi, 0.6 + 40 * (xi - 0.6))
    x1 = np.broadcast_to(gamma, (xi.size, gamma.size)).copy()
    x2 = -np.broadcast_to(depth[:, None], x1.shape).copy()
    smap = SemiGeodesicMap(gamma, xi, x1, x2, np.ones(x1.shape, bool))
    grid = Grid(nx=65, ny=49, h1=1 / 32, h2=1 / 32, i0=32)
    loose = recover_speed(smap, grid)
    cut = recover_speed(smap, grid, c_max=2.0)
    assert np.nanmax(loose.c_grid) > 10
    assert_allclose(cut.c_grid[cut.mask], 1.0, rtol=1e-12)
    assert cut.valid[:, 0].sum() == np.sum(xi < 0.575)
    _, X2 = grid.mesh()
    assert X2[cut.mask].min() >= -0.6


def test_pseudo_mode_needs_oracle(test1a_coarse):
    with pytest.raises(InversionError, match="oracle"):
        reconstruct(test1a_coarse[1], mode="pseudo-reconstruction")


def test_pseudo_mode_close_to_inverse_data(small_ds):
    a = reconstruct(small_ds, alpha=1e-4)
    b = reconstruct(small_ds, mode="pseudo-reconstruction", alpha=1e-4)
    both = a.map.valid & b.map.valid
    assert both.mean() > 0.8
    assert np.median(np.abs(a.map.x2 - b.map.x2)[both]) < 0.02


def test_reconstruction_round_trip(small_ds, tmp_path):
    rec = reconstruct(small_ds, alpha=1e-5)
    p = tmp_path / "rec.bcm"
    save_reconstruction(rec, p, {"note": "x"})
    header, blocks = load_reconstruction(p)
    assert header["note"] == "x" and header["mode"] == "inverse-data"
    assert np.array_equal(blocks["c_grid"], rec.speed.c_grid, equal_nan=True)
    assert np.array_equal(blocks["mask"].astype(bool), rec.speed.mask)
    assert blocks["condition"].shape == (small_ds.basis.n_t, 3)
    for t in TAGS:
        assert np.array_equal(blocks[t], rec.smoothed[t].values)


def test_reconstruction_deterministic(small_ds):
    a = reconstruct(small_ds, alpha=1e-5)
    b = reconstruct(copy.deepcopy(small_ds), alpha=1e-5)
    assert np.array_equal(a.speed.c_grid, b.speed.c_grid, equal_nan=True)
