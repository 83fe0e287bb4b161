"""Plain-file exports: CSV grids and 8-bit greyscale PGM images."""
from __future__ import annotations

import os

import numpy as np


def write_csv(path, field, header=None):
    """2-D array as comma-separated rows with round-trip precision.

    NaN is written as ``nan``. Optional ``header`` lines are written first,
    prefixed with ``#``.
    """
    a = np.atleast_2d(np.asarray(field, dtype=float))
    if a.ndim != 2:
        raise ValueError("CSV export needs a 2-D array")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for line in (header or []):
            fh.write(f"# {line}\n")
        for row in a:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path):
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def write_pgm(path, field, vmin=None, vmax=None):
    """Binary PGM (P5, maxval 255). NaN maps to 0, finite values to 1..255.

    Returns ``(vmin, vmax)`` used for the scaling.
    """
    a = np.asarray(field, dtype=float)
    if a.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    fin = np.isfinite(a)
    if vmin is None:
        vmin = float(a[fin].min()) if fin.any() else 0.0
    if vmax is None:
        vmax = float(a[fin].max()) if fin.any() else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    img = np.zeros(a.shape, dtype=np.uint8)
    img[fin] = (1 + np.clip(np.rint((a[fin] - vmin) / span * 254), 0, 254)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return vmin, vmax


def read_pgm(path):
    """Read a binary PGM written by :func:`write_pgm`; returns ``uint8`` rows."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pos += 1
    data = np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError(f"{path}: truncated image data")
    return data.reshape(h, w)


def export_fields(fields: dict, out_dir, formats=("csv", "pgm"), header=None):
    """Write every 2-D array of ``fields``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in sorted(fields):
        a = np.asarray(fields[name])
        if a.ndim != 2:
            continue
        a = a.astype(float)
        if "csv" in formats:
            p = os.path.join(out_dir, f"{name}.csv")
            write_csv(p, a, header)
            written.append(p)
        if "pgm" in formats:
            p = os.path.join(out_dir, f"{name}.pgm")
            write_pgm(p, a)
            written.append(p)
    return written
