"""File formats for the pipeline: records, ensembles, histograms,
fit reports, and config/manifest files.

All writes are atomic (temp file in the target directory, then rename)
and all text tables use full round-trip decimal precision, so
write -> read -> write is byte-identical for every format.  Times in
files are microseconds.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .bayesian import RecordSet
from .core import CalibrationParams, DistributionSnapshot, TrajectoryEnsemble

__all__ = [
    "FormatError",
    "FitReportSlice",
    "write_records",
    "read_records",
    "write_ensemble",
    "read_ensemble",
    "write_histogram",
    "read_histogram",
    "write_fit_report",
    "read_fit_report",
    "write_config",
    "read_config",
    "atomic_write_bytes",
    "atomic_write_text",
    "fmt_float",
]

RECORD_MAGIC = b"QTRJREC1"
ENSEMBLE_MAGIC = b"QTRJENS1"
FORMAT_VERSION = 1
# little-endian: version u32, n_traj u64, n_steps u64, dt f64,
# I0 f64, I1 f64, sigma f64, T1 f64, x0 f64, master_seed u64
_REC_HEADER = struct.Struct("<IQQddddddQ")
# little-endian: version u32, n_traj u64, n_slices u64, dt f64, x0 f64,
# master_seed u64
_ENS_HEADER = struct.Struct("<IQQddQ")

_REC_TEXT_FIELDS = (
    "version", "n_traj", "n_steps", "dt_us", "I0", "I1", "sigma",
    "T1_us", "x0", "master_seed",
)


class FormatError(ValueError):
    """Malformed input file; the message names the byte offset or line."""


def atomic_write_bytes(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".qtraj-tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def fmt_float(x: float) -> str:
    """Full round-trip decimal representation."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# record files


def write_records(path: str, records: RecordSet) -> None:
    """Write a RecordSet in the binary record format."""
    cal = records.cal
    header = RECORD_MAGIC + _REC_HEADER.pack(
        FORMAT_VERSION,
        records.n_traj,
        records.n_steps,
        cal.dt,
        cal.I0,
        cal.I1,
        cal.sigma,
        cal.T1,
        records.x0,
        records.master_seed if records.master_seed is not None else 0,
    )
    body = np.ascontiguousarray(records.currents, dtype="<f8").tobytes()
    atomic_write_bytes(path, header + body)


def _read_records_binary(path: str, raw: bytes) -> RecordSet:
    off = len(RECORD_MAGIC)
    if len(raw) < off + _REC_HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)}")
    (version, n_traj, n_steps, dt, i0, i1, sigma, t1, x0, seed) = _REC_HEADER.unpack(
        raw[off : off + _REC_HEADER.size]
    )
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported record format version {version}")
    off += _REC_HEADER.size
    expected = n_traj * n_steps * 8
    if len(raw) - off != expected:
        raise FormatError(
            f"{path}: body has {len(raw) - off} bytes at offset {off}, "
            f"expected {expected}"
        )
    currents = np.frombuffer(raw[off:], dtype="<f8").reshape(n_traj, n_steps).copy()
    cal = CalibrationParams(I0=i0, I1=i1, sigma=sigma, dt=dt, T1=t1)
    return RecordSet(currents=currents, cal=cal, x0=x0, master_seed=seed)


def _read_records_text(path: str, raw: bytes) -> RecordSet:
    try:
        lines = raw.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not a record file ({exc})") from exc
    if not lines:
        raise FormatError(f"{path}: empty file (line 1)")
    head = lines[0].split(",")
    if len(head) != len(_REC_TEXT_FIELDS):
        raise FormatError(
            f"{path}: line 1: expected {len(_REC_TEXT_FIELDS)} header fields, "
            f"got {len(head)}"
        )
    try:
        version = int(head[0])
        n_traj = int(head[1])
        n_steps = int(head[2])
        dt, i0, i1, sigma, t1, x0 = (float(v) for v in head[3:9])
        seed = int(head[9])
    except ValueError as exc:
        raise FormatError(f"{path}: line 1: bad header value ({exc})") from exc
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported record format version {version}")
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n_traj:
        raise FormatError(
            f"{path}: expected {n_traj} data rows, found {len(rows)}"
        )
    currents = np.empty((n_traj, n_steps))
    for i, ln in enumerate(rows):
        parts = ln.split(",")
        if len(parts) != n_steps:
            raise FormatError(
                f"{path}: line {i + 2}: expected {n_steps} values, got {len(parts)}"
            )
        try:
            currents[i] = [float(v) for v in parts]
        except ValueError as exc:
            raise FormatError(f"{path}: line {i + 2}: bad value ({exc})") from exc
    cal = CalibrationParams(I0=i0, I1=i1, sigma=sigma, dt=dt, T1=t1)
    return RecordSet(currents=currents, cal=cal, x0=x0, master_seed=seed)


def read_records(path: str) -> RecordSet:
    """Read a record file, binary or the text alternative."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(RECORD_MAGIC)] == RECORD_MAGIC:
        return _read_records_binary(path, raw)
    return _read_records_text(path, raw)


# ---------------------------------------------------------------------------
# ensemble files


def write_ensemble(path: str, ens: TrajectoryEnsemble) -> None:
    header = ENSEMBLE_MAGIC + _ENS_HEADER.pack(
        FORMAT_VERSION,
        ens.n_traj,
        ens.n_steps + 1,
        ens.dt,
        ens.x0 if ens.x0 is not None else math.nan,
        ens.master_seed if ens.master_seed is not None else 0,
    )
    body = np.ascontiguousarray(ens.values, dtype="<f8").tobytes()
    atomic_write_bytes(path, header + body)


def read_ensemble(path: str) -> TrajectoryEnsemble:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(ENSEMBLE_MAGIC)] != ENSEMBLE_MAGIC:
        raise FormatError(f"{path}: bad magic at byte offset 0")
    off = len(ENSEMBLE_MAGIC)
    if len(raw) < off + _ENS_HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)}")
    version, n_traj, n_slices, dt, x0, seed = _ENS_HEADER.unpack(
        raw[off : off + _ENS_HEADER.size]
    )
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported ensemble format version {version}")
    off += _ENS_HEADER.size
    expected = n_traj * n_slices * 8
    if len(raw) - off != expected:
        raise FormatError(
            f"{path}: body has {len(raw) - off} bytes at offset {off}, "
            f"expected {expected}"
        )
    values = np.frombuffer(raw[off:], dtype="<f8").reshape(n_traj, n_slices).copy()
    return TrajectoryEnsemble(
        n_traj=n_traj,
        n_steps=n_slices - 1,
        dt=dt,
        values=values,
        x0=None if math.isnan(x0) else x0,
        master_seed=seed,
    )


# ---------------------------------------------------------------------------
# histogram / density files


def write_histogram(path: str, snap: DistributionSnapshot) -> None:
    """Text histogram: '# key=value' header lines, then center,density,error."""
    lines = [
        f"# t_us={fmt_float(snap.t)}",
        f"# mass0={fmt_float(snap.mass0)}",
        f"# mass1={fmt_float(snap.mass1)}",
        f"# mass0_err={fmt_float(snap.mass0_err)}",
        f"# mass1_err={fmt_float(snap.mass1_err)}",
    ]
    centers = snap.bin_centers
    for c, d, e in zip(centers, snap.density, snap.errors):
        lines.append(f"{fmt_float(c)},{fmt_float(d)},{fmt_float(e)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_histogram(path: str) -> DistributionSnapshot:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    meta = {"mass0_err": 0.0, "mass1_err": 0.0}
    rows = []
    for i, ln in enumerate(lines):
        if not ln.strip():
            continue
        if ln.startswith("#"):
            try:
                key, val = ln[1:].split("=", 1)
                meta[key.strip()] = float(val)
            except ValueError as exc:
                raise FormatError(f"{path}: line {i + 1}: bad header ({exc})") from exc
            continue
        parts = ln.split(",")
        if len(parts) != 3:
            raise FormatError(
                f"{path}: line {i + 1}: expected center,density,error"
            )
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise FormatError(f"{path}: line {i + 1}: bad value ({exc})") from exc
    for key in ("t_us", "mass0", "mass1"):
        if key not in meta:
            raise FormatError(f"{path}: missing '# {key}=' header line")
    if not rows:
        raise FormatError(f"{path}: no histogram rows")
    arr = np.asarray(rows)
    centers = arr[:, 0]
    # first center is bin_width/2; this recovers the exact width, which
    # adjacent-center differences do not (float cancellation)
    bin_width = float(2.0 * centers[0])
    if bin_width <= 0:
        raise FormatError(f"{path}: nonpositive bin width")
    expected = (np.arange(centers.size) + 0.5) * bin_width
    if not np.allclose(centers, expected, rtol=1e-9, atol=1e-15):
        raise FormatError(f"{path}: bin centers are not uniformly spaced")
    return DistributionSnapshot(
        n_bins=arr.shape[0],
        bin_width=bin_width,
        density=arr[:, 1].copy(),
        errors=arr[:, 2].copy(),
        mass0=meta["mass0"],
        mass1=meta["mass1"],
        t=meta["t_us"],
        mass0_err=meta["mass0_err"],
        mass1_err=meta["mass1_err"],
    )


# ---------------------------------------------------------------------------
# fit report files


@dataclass(frozen=True)
class FitReportSlice:
    t_us: float
    tau_best: float
    chi2_min: float
    tau_err_dchi2_100: float
    tau_err_dchi2_1: float
    n_bins: int


def write_fit_report(path: str, slices: list[FitReportSlice]) -> None:
    """Key-value tree, one dotted block per slice."""
    lines = [f"n_slices = {len(slices)}"]
    for i, s in enumerate(slices):
        p = f"slice.{i}"
        lines.append(f"{p}.t_us = {fmt_float(s.t_us)}")
        lines.append(f"{p}.tau_best = {fmt_float(s.tau_best)}")
        lines.append(f"{p}.chi2_min = {fmt_float(s.chi2_min)}")
        lines.append(f"{p}.tau_err_dchi2_100 = {fmt_float(s.tau_err_dchi2_100)}")
        lines.append(f"{p}.tau_err_dchi2_1 = {fmt_float(s.tau_err_dchi2_1)}")
        lines.append(f"{p}.n_bins = {s.n_bins}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_fit_report(path: str) -> list[FitReportSlice]:
    kv = read_config(path)
    try:
        n = int(kv["n_slices"])
        out = []
        for i in range(n):
            p = f"slice.{i}"
            out.append(
                FitReportSlice(
                    t_us=float(kv[f"{p}.t_us"]),
                    tau_best=float(kv[f"{p}.tau_best"]),
                    chi2_min=float(kv[f"{p}.chi2_min"]),
                    tau_err_dchi2_100=float(kv[f"{p}.tau_err_dchi2_100"]),
                    tau_err_dchi2_1=float(kv[f"{p}.tau_err_dchi2_1"]),
                    n_bins=int(kv[f"{p}.n_bins"]),
                )
            )
    except KeyError as exc:
        raise FormatError(f"{path}: missing fit-report key {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# config / manifest files


def write_config(path: str, items: dict) -> None:
    """Config format: 'key = value' lines in the given order."""
    lines = [f"{k} = {v}" for k, v in items.items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_config(path: str) -> dict:
    """Parse a 'key = value' file into an ordered string dict."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for i, ln in enumerate(f):
            s = ln.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise FormatError(f"{path}: line {i + 1}: expected 'key = value'")
            key, val = s.split("=", 1)
            out[key.strip()] = val.strip()
    return out
