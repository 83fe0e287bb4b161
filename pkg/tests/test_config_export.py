import numpy as np
import pytest
import yaml
from numpy.testing import assert_allclose

from bcmspeed import ConfigError, PipelineConfig
from bcmspeed.export import export_fields, read_csv, read_pgm, write_csv, write_pgm


def test_defaults_follow_scenario():
    cfg = PipelineConfig.from_dict({"scenario": {"kind": "test2"}})
    assert cfg.T == 1.5
    assert cfg["basis"]["n_t"] == 32
    assert cfg.basis().Delta == pytest.approx(1.5 / 32)
    assert cfg.h == pytest.approx(1 / 64)


@pytest.mark.parametrize("bad", [
    {"solver": {"resolution": 0}},
    {"solver": {"cfl": -0.1}},
    {"inversion": {"alpha": -1}},
    {"inversion": {"ramp_start": 1.0}},
    {"mode": "guess"},
    {"scenario": {"kind": "test9"}},
    {"scenario": {"params": {"a": -2.0}}},
    {"basis": {"family": "wavelet"}},
    {"solver": {"typo": 1}},
    {"solver": 3},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(bad)


def test_dump_and_reload(tmp_path):
    cfg = PipelineConfig.from_dict({"scenario": {"kind": "test1"}, "inversion": {"alpha": 1e-6}})
    p = tmp_path / "c.yaml"
    cfg.dump(p)
    again = PipelineConfig.load(p)
    assert again.resolved() == cfg.resolved()
    assert again.inversion_kwargs()["alpha"] == 1e-6


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        PipelineConfig.load(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("scenario: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        PipelineConfig.load(p)


def test_shipped_configs_are_valid():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    names = sorted(p.name for p in root.glob("*.yaml"))
    assert "test1a.yaml" in names and "homogeneous.yaml" in names
    for p in root.glob("*.yaml"):
        cfg = PipelineConfig.load(p)
        assert cfg.basis().T == cfg.T
        with open(p) as fh:
            assert isinstance(yaml.safe_load(fh), dict)


def test_csv_round_trip(tmp_path, rng):
    a = rng.normal(size=(7, 5)) * 10.0 ** rng.integers(-8, 8, size=(7, 5))
    a[2, 3] = np.nan
    p = tmp_path / "a.csv"
    write_csv(p, a, header=["demo"])
    assert np.array_equal(read_csv(p), a, equal_nan=True)
    assert p.read_text().startswith("# demo\n")


def test_pgm_dimensions_and_scaling(tmp_path):
    a = np.linspace(0, 1, 12).reshape(3, 4)
    a[0, 0] = np.nan
    p = tmp_path / "a.pgm"
    assert write_pgm(p, a) == (a[0, 1], 1.0)
    img = read_pgm(p)
    assert img.shape == (3, 4)
    assert img[0, 0] == 0 and img[-1, -1] == 255 and img[0, 1] == 1


def test_export_skips_non_grids(tmp_path):
    fields = {"grid": np.ones((2, 3)), "line": np.arange(4.0), "flag": np.eye(2, dtype=bool)}
    written = export_fields(fields, tmp_path, ("csv", "pgm"))
    names = sorted(p.rsplit("/", 1)[-1] for p in written)
    assert names == ["flag.csv", "flag.pgm", "grid.csv", "grid.pgm"]
    assert_allclose(read_csv(tmp_path / "flag.csv"), np.eye(2))
