"""Trace datasets: the measured response operator, persisted.

The stored payload is one discrete impulse response per spatial basis
function, ``K_l(x1, n)``: the trace on the strip when the boundary carries
``phi_l`` at step 0 only. The solver is linear and time-invariant, so the
trace of any control ``phi_l(x1) g(t)`` (including delayed, odd-extended and
integrated ones) is the causal convolution ``K_l * g``; see
:meth:`TraceDataset.control_trace`.

Container layout
----------------
``BCMSPEED-CONTAINER 1`` on the first line, then UTF-8 ``key=json`` lines
(``kind``, ``manifest.*``, ``block.*``), then an empty line. Blocks follow
in header order; each is ``uint64`` little-endian byte count, the raw
little-endian row-major payload, and an 8-byte BLAKE2b checksum.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from .controls import ControlBasis, cumtrapz, odd_extend_array
from .errors import CausticError, ChecksumError, DatasetError, ManifestMismatch
from .medium import Grid, MediumField
from .rays import trace_rays
from .wavefield import TimeGrid, TraceRecord, final_snapshots, impulse_response, time_grid

MAGIC = "BCMSPEED-CONTAINER"
VERSION = 1


def _digest(b):
    return hashlib.blake2b(b, digest_size=8).digest()


def write_container(path, kind, header: dict, blocks: dict):
    """Write a container file. ``blocks`` maps names to numpy arrays."""
    lines = [f"{MAGIC} {VERSION}", "kind=" + json.dumps(kind)]
    for k in sorted(header):
        lines.append(f"manifest.{k}=" + json.dumps(header[k], sort_keys=True))
    payloads = []
    for name, arr in blocks.items():
        a = np.asarray(arr)
        if a.dtype == bool:
            a = a.astype(np.uint8)
        code = {np.dtype(np.float64): "<f8", np.dtype(np.int64): "<i8", np.dtype(np.uint8): "|u1"}.get(a.dtype)
        if code is None:
            a = a.astype(np.float64)
            code = "<f8"
        lines.append(f"block.{name}=" + json.dumps({"dtype": code, "shape": list(a.shape)}))
        payloads.append(np.ascontiguousarray(a, dtype=np.dtype(code)).tobytes())
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n\n").encode("utf-8"))
        for p in payloads:
            fh.write(len(p).to_bytes(8, "little"))
            fh.write(p)
            fh.write(_digest(p))


def read_container(path):
    """Read a container; returns ``(kind, header, blocks)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"\n\n")
    if end < 0:
        raise DatasetError(f"{path}: truncated header")
    text = raw[:end].decode("utf-8").split("\n")
    first = text[0].split()
    if len(first) != 2 or first[0] != MAGIC:
        raise DatasetError(f"{path}: not a container file")
    if int(first[1]) != VERSION:
        raise DatasetError(f"{path}: unsupported container version {first[1]} (expected {VERSION})")
    kind, header, specs = None, {}, []
    for line in text[1:]:
        key, _, val = line.partition("=")
        if key == "kind":
            kind = json.loads(val)
        elif key.startswith("manifest."):
            header[key[9:]] = json.loads(val)
        elif key.startswith("block."):
            specs.append((key[6:], json.loads(val)))
        else:
            raise DatasetError(f"{path}: malformed header line {line!r}")
    pos = end + 2
    blocks = {}
    for name, spec in specs:
        if pos + 8 > len(raw):
            raise DatasetError(f"{path}: truncated before block {name!r}")
        n = int.from_bytes(raw[pos:pos + 8], "little")
        dt = np.dtype(spec["dtype"])
        expect = int(np.prod(spec["shape"], dtype=np.int64)) * dt.itemsize
        if n != expect:
            raise DatasetError(f"{path}: block {name!r} length {n} does not match its shape")
        body = raw[pos + 8:pos + 8 + n]
        chk = raw[pos + 8 + n:pos + 16 + n]
        if len(body) != n or len(chk) != 8:
            raise DatasetError(f"{path}: truncated block {name!r}")
        if _digest(body) != chk:
            raise ChecksumError(f"{path}: checksum mismatch in block {name!r}")
        blocks[name] = np.frombuffer(body, dtype=dt).reshape(spec["shape"]).copy()
        pos += 16 + n
    return kind, header, blocks


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(eq=False)
class TraceDataset:
    """Response-operator data bound to a medium, grid, basis and time grid.

    Attributes
    ----------
    manifest : dict
    kernels : (n_gamma, n_strip, 2 n_T + 1) array
        Impulse responses of the spatial functions on the strip.
    oracle_gram : (N, N) array or None
        Interior products ``(u^{f_i}(T), u^{f_j}(T))_H`` (pseudo-reconstruction).
    oracle_rhs : (3, N) array or None
        Interior products ``(a, u^{f_k}(T))_H`` for ``a = 1, x1, x2``.
    """

    manifest: dict
    kernels: np.ndarray
    oracle_gram: Optional[np.ndarray] = None
    oracle_rhs: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False)

    @cached_property
    def basis(self) -> ControlBasis:
        return ControlBasis.from_dict(self.manifest["basis"])

    @cached_property
    def grid(self) -> Grid:
        return Grid.from_dict(self.manifest["grid"])

    @cached_property
    def time(self) -> TimeGrid:
        d = self.manifest["time"]
        return TimeGrid(float(d["dt"]), int(d["q"]), int(d["n_T"]))

    @property
    def T(self):
        return float(self.manifest["T"])

    @property
    def L(self):
        return float(self.manifest["L"])

    @cached_property
    def strip_x1(self):
        a, b = self.manifest["strip_cols"]
        return self.grid.x1[a:b]

    @cached_property
    def t(self):
        return np.arange(2 * self.time.n_T + 1) * self.time.dt

    @property
    def n_controls(self):
        return self.basis.size

    @property
    def has_oracle(self):
        return self.oracle_gram is not None

    def control_trace(self, k, kind="S", delay_index=None) -> TraceRecord:
        """Trace of one basis control on the strip over ``[0, 2T]``.

        ``kind`` is ``'S'`` for ``R(S f_k)`` or ``'JS'`` for ``R(J S f_k)``.
        ``delay_index`` ``l`` shifts the control by ``T - l Delta`` first.
        """
        b = self.basis
        lsp, m = b.unravel(k)
        nT, dt = self.time.n_T, self.time.dt
        prof = b.temporal_matrix(self.t[: nT + 1])[m]
        if delay_index is not None:
            shift = (b.n_t - delay_index) * self.time.q
            prof = np.concatenate([np.zeros(shift), prof[: nT + 1 - shift]]) if shift else prof
        g = odd_extend_array(prof)
        if kind == "JS":
            g = cumtrapz(g, dt)
        elif kind != "S":
            raise ValueError("kind must be 'S' or 'JS'")
        vals = fftconvolve(self.kernels[lsp], g[None, :], axes=-1)[:, : g.size]
        return TraceRecord(self.strip_x1, self.t, vals, control_id=(lsp, m, kind, delay_index))

    def require(self, T=None, L=None, basis: Optional[ControlBasis] = None, medium_hash=None):
        """Refuse reconstruction inputs that disagree with the manifest."""
        if T is not None and not math.isclose(T, self.T, rel_tol=1e-12):
            raise ManifestMismatch(f"dataset horizon T={self.T} differs from requested T={T}")
        if L is not None and not math.isclose(L, self.L, rel_tol=1e-12):
            raise ManifestMismatch(f"dataset half-width L={self.L} differs from requested L={L}")
        if basis is not None and basis.to_dict() != self.basis.to_dict():
            raise ManifestMismatch("dataset basis differs from the configured basis")
        if medium_hash is not None and medium_hash != self.manifest["medium_sha256"]:
            raise ManifestMismatch("dataset was built for a different medium")


def build_dataset(medium: MediumField, basis: ControlBasis, xi_grid=None, oracle=False, cfl=0.4,
                  workers=1, check_rays=True) -> TraceDataset:
    """Run the forward solves that constitute one measurement of the
    response operator on the strip ``|x1| <= support + c_star T``.

    Parameters
    ----------
    xi_grid : sequence of float, optional
        Delays ``xi_l``; must be multiples of ``Delta``. Defaults to
        ``l Delta`` for ``l = 1..n_t``.
    oracle : bool
        Also record interior products of final snapshots.
    workers : int
        Threads for the independent solves (results do not depend on it).
    """
    T, L = basis.T, basis.L
    if not medium.covers(T, basis.support_halfwidth):
        raise DatasetError("medium grid is smaller than the reflection-free rectangle for (L, T)")
    if xi_grid is None:
        xi_grid = [l * basis.Delta for l in range(1, basis.n_t + 1)]
    xi_grid = [float(x) for x in xi_grid]
    for x in xi_grid:
        r = x / basis.Delta
        if abs(r - round(r)) > 1e-9 or not 0 < round(r) <= basis.n_t:
            raise DatasetError(f"delay {x} is not a multiple of Delta in (0, T]")
    if check_rays and basis.size:
        chart = trace_rays(medium, np.linspace(-L, L, 129), T / 256, T)
        if not chart.regular:
            raise CausticError(f"scenario is not regular: caustic near (gamma, xi) = {chart.caustic}")
    tg = time_grid(medium, T, basis.Delta, cfl)
    g = medium.grid
    sup = basis.support_halfwidth
    bcols = g.columns(-sup, sup)
    xb = g.x1[bcols]
    half = sup + medium.c_star * T
    scols = g.columns(-half, half)
    n2 = 2 * tg.n_T
    manifest = dict(
        format="trace-dataset", medium_sha256=medium.content_hash(), scenario=medium.provenance,
        c_star=medium.c_star, T=T, L=L, grid=g.to_dict(), time=tg.to_dict(), cfl=cfl,
        basis=basis.to_dict(), strip=[-half, half], strip_cols=[scols.start, scols.stop],
        control_cols=[bcols.start, bcols.stop], xi_grid=xi_grid, oracle=bool(oracle),
        payload="impulse responses of spatial functions, axes (l, x1, t), t in [0, 2T]")
    spat = basis.spatial_matrix(xb)

    def one(l):
        return impulse_response(medium, xb, spat[l], tg.dt, n2, (-half, half))

    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as ex:
        ks = list(ex.map(one, range(basis.n_gamma)))
    kernels = np.array(ks).reshape(basis.n_gamma, scols.stop - scols.start, n2 + 1)
    og = orhs = None
    if oracle:
        og, orhs = _oracle_products(medium, basis, xb, spat, tg, workers)
    return TraceDataset(manifest, kernels, og, orhs)


def _oracle_products(medium, basis, xb, spat, tg, workers):
    t = tg.t()
    psi = basis.temporal_matrix(t)
    q = medium.grid.weights() / medium.c ** 2
    X1, X2 = medium.grid.mesh()
    A = np.stack([q, q * X1, q * X2]).reshape(3, -1)

    def one(l):
        return final_snapshots(medium, xb, spat[l], psi, tg.dt).reshape(basis.n_t, -1)

    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as ex:
        snaps = list(ex.map(one, range(basis.n_gamma)))
    # k = l + m n_gamma
    U = np.stack(snaps, axis=1).reshape(basis.size, -1) if basis.size else np.zeros((0, q.size))
    G = (U * q.ravel()) @ U.T
    return 0.5 * (G + G.T), A @ U.T


def save_dataset(ds: TraceDataset, path):
    blocks = {"kernels": ds.kernels}
    if ds.oracle_gram is not None:
        blocks["oracle_gram"] = ds.oracle_gram
        blocks["oracle_rhs"] = ds.oracle_rhs
    write_container(path, "trace-dataset", ds.manifest, blocks)


def load_dataset(path) -> TraceDataset:
    kind, header, blocks = read_container(path)
    if kind != "trace-dataset":
        raise DatasetError(f"{path}: expected a trace dataset, found {kind!r}")
    if "kernels" not in blocks:
        raise DatasetError(f"{path}: missing kernel block")
    return TraceDataset(header, blocks["kernels"], blocks.get("oracle_gram"), blocks.get("oracle_rhs"))


def save_medium(medium: MediumField, path):
    header = dict(format="medium", grid=medium.grid.to_dict(), c_star=medium.c_star,
                  provenance=medium.provenance, sha256=medium.content_hash())
    write_container(path, "medium", header, {"c": medium.c})


def load_medium(path) -> MediumField:
    kind, header, blocks = read_container(path)
    if kind != "medium":
        raise DatasetError(f"{path}: expected a medium, found {kind!r}")
    m = MediumField(Grid.from_dict(header["grid"]), blocks["c"], float(header["c_star"]), header["provenance"])
    if m.content_hash() != header["sha256"]:
        raise ChecksumError(f"{path}: medium content hash mismatch")
    return m


def finite_speed_defect(trace: TraceRecord, lo, hi, c_star, t0=0.0):
    """Largest trace magnitude outside the cone ``dist(x1, [lo, hi]) <= c_star (t - t0)``,
    relative to the overall maximum."""
    dist = np.maximum(np.maximum(lo - trace.x1, trace.x1 - hi), 0.0)
    outside = dist[:, None] > c_star * np.maximum(trace.t[None, :] - t0, 0.0)
    peak = np.abs(trace.values).max()
    if peak == 0:
        return 0.0
    return float(np.abs(np.where(outside, trace.values, 0.0)).max() / peak)
