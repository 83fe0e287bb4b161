import numpy as np
import pytest
from numpy.testing import assert_allclose

from bcmspeed import (CausticError, ChecksumError, ControlBasis, DatasetError, ManifestMismatch, ScenarioSpec,
                      build_dataset, load_dataset, load_medium, make_scenario, save_dataset, save_medium,
                      solve_forward)
from bcmspeed.controls import delayed_control, odd_extend
from bcmspeed.datasets import file_digest, finite_speed_defect, read_container, write_container


def test_test1a_sizes():
    m = make_scenario(ScenarioSpec("test1"), h=1 / 16)
    ds = build_dataset(m, ControlBasis(16, 16, 1.0))
    assert ds.n_controls == 256
    assert ds.kernels.shape[0] == 16
    # both trace kinds are available for every control
    for kind in ("S", "JS"):
        tr = ds.control_trace(255, kind)
        assert tr.values.shape == (ds.strip_x1.size, 2 * ds.time.n_T + 1)


def test_empty_basis(test1_medium, tmp_path):
    ds = build_dataset(test1_medium, ControlBasis(0, 0, 1.0))
    assert ds.n_controls == 0
    save_dataset(ds, tmp_path / "empty.bcm")
    back = load_dataset(tmp_path / "empty.bcm")
    assert back.manifest == ds.manifest
    assert back.kernels.size == 0


def test_round_trip(small_ds, tmp_path):
    p = tmp_path / "ds.bcm"
    save_dataset(small_ds, p)
    back = load_dataset(p)
    assert back.manifest == small_ds.manifest
    assert np.array_equal(back.kernels, small_ds.kernels)
    assert np.array_equal(back.oracle_gram, small_ds.oracle_gram)
    assert np.array_equal(back.oracle_rhs, small_ds.oracle_rhs)


def test_rebuild_is_bit_identical(test1_medium, small_ds, tmp_path):
    again = build_dataset(test1_medium, small_ds.basis, oracle=True, workers=3)
    save_dataset(small_ds, tmp_path / "a.bcm")
    save_dataset(again, tmp_path / "b.bcm")
    assert file_digest(tmp_path / "a.bcm") == file_digest(tmp_path / "b.bcm")


def test_corrupt_byte(small_ds, tmp_path):
    p = tmp_path / "ds.bcm"
    save_dataset(small_ds, p)
    raw = bytearray(p.read_bytes())
    raw[-100] ^= 0x01
    p.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_dataset(p)


def test_truncated_and_foreign_files(small_ds, tmp_path):
    p = tmp_path / "ds.bcm"
    save_dataset(small_ds, p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-50])
    with pytest.raises(DatasetError, match="truncated"):
        load_dataset(p)
    p.write_bytes(raw.replace(b"BCMSPEED-CONTAINER 1", b"BCMSPEED-CONTAINER 9", 1))
    with pytest.raises(DatasetError, match="version"):
        load_dataset(p)
    p.write_bytes(b"hello\n\nworld")
    with pytest.raises(DatasetError):
        load_dataset(p)


def test_manifest_guards(small_ds):
    small_ds.require(T=1.0, L=1.0, basis=small_ds.basis)
    with pytest.raises(ManifestMismatch, match="T="):
        small_ds.require(T=1.5)
    with pytest.raises(ManifestMismatch):
        small_ds.require(basis=ControlBasis(8, 8, 1.0, family="tent"))
    with pytest.raises(ManifestMismatch):
        small_ds.require(medium_hash="0" * 64)


def test_delay_shift_identity(test1_medium, small_ds):
    b = small_ds.basis
    tg = small_ds.time
    k, l = b.index(5, 3), 6
    synth = small_ds.control_trace(k, "S", delay_index=l)
    x1 = test1_medium.grid.x1[slice(*small_ds.manifest["control_cols"])]
    f = delayed_control(b.control(k, x1, tg.t()), l * b.Delta, b.T)
    direct = solve_forward(test1_medium, odd_extend(f), strip=tuple(small_ds.manifest["strip"])).trace.values
    assert_allclose(synth.values, direct, atol=1e-12 * np.abs(direct).max())


def test_traces_respect_finite_speed(small_ds):
    b = small_ds.basis
    sup = b.support_halfwidth
    c_star = small_ds.manifest["c_star"]
    for k in (0, b.index(3, 2), b.size - 1):
        m = b.unravel(k)[1]
        tr = small_ds.control_trace(k, "S")
        t0 = m * b.Delta + b.offset - small_ds.grid.h1
        assert finite_speed_defect(tr, -sup, sup, c_star, t0=t0) < 1e-6


def test_caustic_scenario_rejected():
    lens = lambda a, b: 1 - 0.8 * np.exp(-(a ** 2 + (b + 0.35) ** 2) / (2 * 0.12 ** 2))  # noqa: E731
    m = make_scenario(ScenarioSpec("custom", speed=lens, c_star=1.0), h=1 / 32)
    with pytest.raises(CausticError, match="caustic"):
        build_dataset(m, ControlBasis(4, 4, 1.0))


def test_grid_too_small():
    m = make_scenario(ScenarioSpec("test1", T=0.5), h=1 / 16)
    with pytest.raises(DatasetError, match="reflection-free"):
        build_dataset(m, ControlBasis(4, 4, 1.0))


def test_medium_round_trip(test1_medium, tmp_path):
    p = tmp_path / "m.bcm"
    save_medium(test1_medium, p)
    back = load_medium(p)
    assert back.content_hash() == test1_medium.content_hash()
    assert back.c_star == test1_medium.c_star
    with pytest.raises(DatasetError, match="expected a trace dataset"):
        load_dataset(p)


def test_container_dtypes(tmp_path):
    p = tmp_path / "c.bcm"
    blocks = {"f": np.arange(6.0).reshape(2, 3), "i": np.arange(4), "b": np.array([True, False])}
    write_container(p, "misc", {"x": [1, 2]}, blocks)
    kind, header, back = read_container(p)
    assert kind == "misc" and header == {"x": [1, 2]}
    assert np.array_equal(back["f"], blocks["f"])
    assert np.array_equal(back["i"], blocks["i"])
    assert back["b"].tolist() == [1, 0]
