"""Command-line driver: simulate, reconstruct, validate, export, inspect."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bcm
from .config import MODES, PipelineConfig
from .datasets import (build_dataset, file_digest, load_dataset, load_medium, read_container, save_dataset,
                       save_medium, write_container)
from .errors import BCMError, ConfigError, ValidationFailure
from .export import export_fields, write_csv
from .medium import Grid, make_scenario
from .rays import interior_mask, trace_rays
from .validation import error_stats, relative_error

DATASET = "dataset.bcm"
MEDIUM = "medium.bcm"
RECON = "reconstruction.bcm"


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_plain)


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_json(obj) + "\n")


def _config(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = PipelineConfig.load(args.config)
    if getattr(args, "threads", None):
        cfg.data["solver"]["threads"] = int(args.threads)
    if getattr(args, "seed", None) is not None:
        cfg.data["seed"] = int(args.seed)
    if getattr(args, "mode", None):
        cfg.data["mode"] = args.mode
    cfg.validate()
    return cfg


def _outdir(args, cfg=None):
    out = args.out or (cfg["output"]["dir"] if cfg is not None else ".")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_simulate(args):
    cfg = _config(args)
    out = _outdir(args, cfg)
    basis = cfg.basis()
    sv = cfg["solver"]
    medium = make_scenario(cfg.scenario_spec(), cfg.h, margin=float(sv["margin"]), s=basis.s)
    ds = build_dataset(medium, basis, oracle=bool(sv["oracle"]), cfl=float(sv["cfl"]),
                       workers=int(sv["threads"]))
    dpath, mpath = os.path.join(out, DATASET), os.path.join(out, MEDIUM)
    save_dataset(ds, dpath)
    save_medium(medium, mpath)
    cfg.dump(os.path.join(out, "config.yaml"))
    m = ds.manifest
    print(_json(dict(dataset=dpath, dataset_sha256=file_digest(dpath), medium=mpath, controls=ds.n_controls,
                     grid=m["grid"], time=m["time"], c_star=m["c_star"], oracle=m["oracle"])))
    return 0


def cmd_reconstruct(args):
    cfg = _config(args)
    out = _outdir(args, cfg)
    dpath = args.dataset or os.path.join(out, DATASET)
    ds = load_dataset(dpath)
    ds.require(T=cfg.T, L=cfg.L, basis=cfg.basis())
    rec = bcm.reconstruct(ds, **cfg.inversion_kwargs())
    header = dict(dataset_sha256=file_digest(dpath), inversion=cfg["inversion"])
    bcm.save_reconstruction(rec, os.path.join(out, RECON), header)
    report = dict(rec.report, dataset=os.path.basename(dpath), dataset_sha256=header["dataset_sha256"],
                  valid_fraction=float(rec.speed.valid.mean()), grid_points=int(rec.speed.mask.sum()))
    _write_json(os.path.join(out, "report.json"), report)
    cfg.dump(os.path.join(out, "config.yaml"))
    print(_json(dict(reconstruction=os.path.join(out, RECON), alpha=report["alpha"],
                     residual_T=report["residual_T"], cond_T=report["condition"][-1]["cond"]
                     if report["condition"] else None)))
    return 0


def cmd_validate(args):
    cfg = _config(args)
    out = _outdir(args, cfg)
    rpath = args.recovered or os.path.join(out, RECON)
    tpath = args.truth or os.path.join(out, MEDIUM)
    header, blocks = bcm.load_reconstruction(rpath)
    truth = load_medium(tpath)
    if Grid.from_dict(header["grid"]) != truth.grid:
        raise ValidationFailure("recovered and true fields live on different grids")
    err = relative_error(blocks["c_grid"], truth.c)
    v = cfg["validation"]
    chart = trace_rays(truth, np.linspace(-cfg.L, cfg.L, 257), cfg.T / 256, cfg.T)
    mask = interior_mask(chart, truth.grid, [g * cfg.L for g in v["gamma_range"]],
                         [x * cfg.T for x in v["xi_range"]])
    stats = error_stats(err, mask, float(v["threshold"]))
    ok = stats["n"] > 0 and stats["fraction_below"] >= float(v["min_fraction"])
    if v["max_error"] is not None:
        ok = ok and stats["max"] <= float(v["max_error"])
    stats.update(passed=bool(ok), min_fraction=float(v["min_fraction"]), max_error=v["max_error"])
    _write_json(os.path.join(out, "validation.json"), stats)
    write_container(os.path.join(out, "validation.bcm"), "validation", dict(stats=stats, grid=header["grid"]),
                    {"error_percent": err, "interior_mask": mask})
    print(_json(stats))
    if not ok:
        raise ValidationFailure(f"{stats['fraction_below']:.1%} of the mask is below {v['threshold']}% "
                                f"(required {float(v['min_fraction']):.0%})")
    return 0


def cmd_export(args):
    if not args.input:
        raise ConfigError("--input is required")
    kind, header, blocks = read_container(args.input)
    formats = ("csv", "pgm") if args.format == "all" else (args.format,)
    out = _outdir(args)
    written = export_fields(blocks, out, formats, header=[f"{kind} {os.path.basename(args.input)}"])
    if "condition" in blocks and "csv" in formats:
        p = os.path.join(out, "condition.csv")
        write_csv(p, blocks["condition"], header=["xi,order,cond"])
        if p not in written:
            written.append(p)
    print(_json(dict(kind=kind, written=written)))
    return 0


def cmd_inspect(args):
    path = args.path
    if path.endswith((".yaml", ".yml")):
        print(_json(PipelineConfig.load(path).resolved()))
        return 0
    kind, header, blocks = read_container(path)
    info = dict(kind=kind, sha256=file_digest(path), manifest=header,
                blocks={k: dict(dtype=str(v.dtype), shape=list(v.shape)) for k, v in blocks.items()})
    print(_json(info))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bcmspeed", description="Boundary-control sound-speed reconstruction.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=False):
        sp.add_argument("--config", help="pipeline YAML file")
        sp.add_argument("--out", help="run directory for inputs and outputs (default: output.dir of the config)")
        sp.add_argument("--threads", type=int, help="worker threads for independent solves")
        sp.add_argument("--seed", type=int, help="recorded in the resolved config; no numerical effect")
        if dataset:
            sp.add_argument("--dataset", help="trace dataset file")
            sp.add_argument("--mode", choices=MODES)

    s = sub.add_parser("simulate", help="run the forward solves and write the trace dataset")
    common(s)
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("reconstruct", help="recover images, map and speed from a dataset")
    common(s, dataset=True)
    s.set_defaults(func=cmd_reconstruct)
    s = sub.add_parser("validate", help="compare a reconstruction with the true medium")
    common(s)
    s.add_argument("--recovered", help="reconstruction file")
    s.add_argument("--truth", help="medium file")
    s.set_defaults(func=cmd_validate)
    s = sub.add_parser("export", help="write CSV/PGM files for every 2-D field of a container")
    s.add_argument("--input", help="container file")
    s.add_argument("--format", choices=("csv", "pgm", "all"), default="all")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_export)
    s = sub.add_parser("inspect", help="print a container manifest or a resolved config")
    s.add_argument("path")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BCMError as exc:
        print(f"bcmspeed {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"bcmspeed {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
