"""Pipeline configuration: one YAML file per run, resolved against defaults."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from .controls import ControlBasis
from .errors import ConfigError
from .medium import DEFAULTS, KINDS, ScenarioSpec

MODES = ("inverse-data", "pseudo-reconstruction")

_DEFAULTS = {
    "scenario": {"kind": "test1", "params": {}, "T": None, "L": 1.0, "c_star": None},
    "solver": {"resolution": 64, "cfl": 0.4, "margin": 0.1, "oracle": False, "threads": 1},
    "basis": {"family": "trigonometric", "n_gamma": 16, "n_t": None, "s": 1 / 32, "d_divisor": 64.0,
              "eps": 1e-8, "delta": None},
    "inversion": {"alpha": 1e-5, "residual_target": None, "sigma_gamma": 0.125, "sigma_t": 0.0,
                  "sigma_gamma_end": None, "ramp_start": 0.8, "floor": 1e-2},
    "validation": {"gamma_range": [-0.5, 0.5], "xi_range": [0.1, 0.8], "threshold": 10.0,
                   "min_fraction": 0.8, "max_error": None},
    "output": {"dir": "runs/out", "formats": ["csv", "pgm"]},
    "mode": "inverse-data",
    "seed": 0,
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k != "params":
            if not isinstance(v, dict):
                raise ConfigError(f"config section {path + k!r} must be a mapping")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


@dataclass
class PipelineConfig:
    """Resolved pipeline configuration.

    Sections: ``scenario``, ``solver``, ``basis``, ``inversion``,
    ``validation``, ``output``, plus ``mode`` and ``seed``. ``T`` and ``L``
    live in the scenario section only and are shared by the basis.
    ``validation.xi_range`` is in units of ``T`` and ``gamma_range`` in
    units of ``L``.
    """

    data: dict

    @classmethod
    def from_dict(cls, d):
        if d is None:
            d = {}
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        data = _merge(_DEFAULTS, d)
        sc = data["scenario"]
        if sc["kind"] not in KINDS:
            raise ConfigError(f"unknown scenario kind {sc['kind']!r}; expected one of {KINDS}")
        if sc["T"] is None:
            sc["T"] = DEFAULTS[sc["kind"]]["T"]
        if data["basis"]["n_t"] is None:
            data["basis"]["n_t"] = DEFAULTS[sc["kind"]]["n_t"]
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                d = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        return cls.from_dict(d)

    def validate(self):
        d = self.data
        sv, inv, b = d["solver"], d["inversion"], d["basis"]
        if d["mode"] not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {d['mode']!r}")
        if not float(sv["resolution"]) > 0:
            raise ConfigError("solver.resolution (cells per unit length) must be positive")
        if not 0 < float(sv["cfl"]):
            raise ConfigError("solver.cfl must be positive")
        if int(sv["threads"]) < 1:
            raise ConfigError("solver.threads must be >= 1")
        if inv["alpha"] is not None and float(inv["alpha"]) < 0:
            raise ConfigError("inversion.alpha must be non-negative")
        if inv["residual_target"] is not None and not float(inv["residual_target"]) > 0:
            raise ConfigError("inversion.residual_target must be positive")
        for k in ("sigma_gamma", "sigma_t"):
            if float(inv[k]) < 0:
                raise ConfigError(f"inversion.{k} must be non-negative")
        if not 0 <= float(inv["ramp_start"]) < 1:
            raise ConfigError("inversion.ramp_start must lie in [0, 1)")
        if int(b["n_gamma"]) < 1 or int(b["n_t"]) < 1:
            raise ConfigError("basis sizes must be positive")
        try:
            self.scenario_spec()
            self.basis()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- views ------------------------------------------------------------------
    def __getitem__(self, key):
        return self.data[key]

    @property
    def h(self):
        return 1.0 / float(self.data["solver"]["resolution"])

    @property
    def T(self):
        return float(self.data["scenario"]["T"])

    @property
    def L(self):
        return float(self.data["scenario"]["L"])

    @property
    def mode(self):
        return self.data["mode"]

    def scenario_spec(self) -> ScenarioSpec:
        sc = self.data["scenario"]
        return ScenarioSpec(kind=sc["kind"], params=dict(sc["params"] or {}), T=self.T, L=self.L,
                            n_gamma=int(self.data["basis"]["n_gamma"]), n_t=int(self.data["basis"]["n_t"]),
                            c_star=sc["c_star"])

    def basis(self) -> ControlBasis:
        b = self.data["basis"]
        return ControlBasis(int(b["n_gamma"]), int(b["n_t"]), self.T, self.L, b["family"], float(b["s"]),
                            float(b["d_divisor"]), float(b["eps"]),
                            None if b["delta"] is None else float(b["delta"]))

    def inversion_kwargs(self, mode=None):
        inv = self.data["inversion"]
        opt = lambda v: None if v is None else float(v)  # noqa: E731
        return dict(mode=mode or self.mode, alpha=float(inv["alpha"] or 0.0),
                    residual_target=opt(inv["residual_target"]), sigma_gamma=float(inv["sigma_gamma"]),
                    sigma_t=float(inv["sigma_t"]), sigma_gamma_end=opt(inv["sigma_gamma_end"]),
                    ramp_start=float(inv["ramp_start"]), floor=float(inv["floor"]))

    def resolved(self):
        """Plain-data copy suitable for echoing next to the outputs."""
        return copy.deepcopy(self.data)

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.resolved(), fh, sort_keys=True, default_flow_style=False)
