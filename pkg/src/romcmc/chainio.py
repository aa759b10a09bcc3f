"""Chain persistence: an append-only binary log and a CSV export.

Binary log layout (little-endian)::

    header   magic "RCHN" | uint32 version | uint64 dim | int64 seed
             | uint16 len | algorithm tag (len bytes, ASCII)
    records  repeated; one packed record per chain row with the fields of
             ``samplers.META_DTYPE`` in order followed by ``dim`` float64
             sample values

Eval-kind codes: 0 initial state, 1 reduced model only, 2 reduced screening
with a full-model correction, 3 full model only.  ``stage1_accept`` and
``stage2_accept`` use -1 for "stage not run".
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .samplers import META_DTYPE

CHAIN_MAGIC = b"RCHN"
CHAIN_VERSION = 1
_HEAD = struct.Struct("<4sIQqH")

CSV_FIXED = ("stage1_accept", "stage2_prob", "stage2_accept", "indicator_inf_norm", "eval_kind", "enriched",
             "wall_time_ns")


def record_dtype(dim: int) -> np.dtype:
    return np.dtype(META_DTYPE.descr + [("x", "<f8", (dim,))])


class ChainLogWriter:
    """Append rows of a chain to a binary log; a new file gets a header first."""

    def __init__(self, path, dim: int, algorithm: str, seed: int):
        self.path = Path(path)
        self.dim = dim
        self.dtype = record_dtype(dim)
        if not self.path.exists() or self.path.stat().st_size == 0:
            tag = algorithm.encode("ascii")
            with open(self.path, "wb") as fh:
                fh.write(_HEAD.pack(CHAIN_MAGIC, CHAIN_VERSION, dim, int(seed), len(tag)) + tag)
        else:
            hdr = read_header(self.path)
            if hdr["dim"] != dim:
                raise ValueError(f"{path}: existing log has dimension {hdr['dim']}, not {dim}")

    def append(self, samples, meta):
        rows = np.zeros(len(meta), dtype=self.dtype)
        for name in META_DTYPE.names:
            rows[name] = meta[name]
        rows["x"] = samples
        with open(self.path, "ab") as fh:
            fh.write(rows.tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEAD.size)
        magic, version, dim, seed, n = _HEAD.unpack(raw)
        if magic != CHAIN_MAGIC:
            raise ValueError(f"{path}: not a chain log")
        if version != CHAIN_VERSION:
            raise ValueError(f"{path}: unsupported chain log version {version}")
        tag = fh.read(n).decode("ascii")
    return {"dim": dim, "seed": seed, "algorithm": tag, "offset": _HEAD.size + n}


def read_chain_log(path):
    """Return ``(samples, meta, header)``; a trailing partial record is ignored."""
    hdr = read_header(path)
    dt = record_dtype(hdr["dim"])
    data = Path(path).read_bytes()[hdr["offset"]:]
    k = len(data) // dt.itemsize
    rows = np.frombuffer(data[: k * dt.itemsize], dtype=dt)
    meta = np.zeros(k, dtype=META_DTYPE)
    for name in META_DTYPE.names:
        meta[name] = rows[name]
    return rows["x"].copy(), meta, hdr


def write_chain_log(path, record) -> None:
    p = Path(path)
    if p.exists():
        p.unlink()
    w = ChainLogWriter(p, record.dim, record.algorithm, record.seed)
    w.append(record.samples, record.meta)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        if np.isnan(v):
            return "nan"
        return repr(float(v))
    return str(int(v))


def chain_csv_text(samples, meta, timing: bool = True) -> str:
    """CSV with columns ``step, x_1..x_p, stage1_accept, ..., wall_time_ns``.

    With ``timing=False`` the wall-time column is written as 0 so that the
    file depends only on the configuration and seed.
    """
    samples = np.asarray(samples, float)
    dim = samples.shape[1] if samples.ndim == 2 else 0
    buf = io.StringIO()
    header = ["step"] + [f"x_{i + 1}" for i in range(dim)] + list(CSV_FIXED)
    buf.write(",".join(header) + "\n")
    for x, m in zip(samples, meta):
        vals = [str(int(m["step"]))] + [repr(float(v)) for v in x]
        for name in CSV_FIXED:
            v = m[name]
            if name == "wall_time_ns" and not timing:
                v = 0
            vals.append(_fmt(v))
        buf.write(",".join(vals) + "\n")
    return buf.getvalue()


def write_chain_csv(path, samples, meta, timing: bool = True) -> None:
    Path(path).write_text(chain_csv_text(samples, meta, timing))


def read_chain_csv(path):
    """Inverse of :func:`write_chain_csv`; returns ``(samples, meta)``."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    dim = sum(1 for h in header if h.startswith("x_"))
    meta = np.zeros(len(lines) - 1, dtype=META_DTYPE)
    samples = np.zeros((len(lines) - 1, dim))
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        meta["step"][i] = int(parts[0])
        samples[i] = [float(v) for v in parts[1 : 1 + dim]]
        for name, v in zip(CSV_FIXED, parts[1 + dim :]):
            meta[name][i] = float(v)
    return samples, meta
