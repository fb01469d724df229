"""Run archives, CSV tables and key = value summaries.

Binary archive layout (all integers and floats little-endian)::

    bytes 0..7     magic, b"NLMFLOW1" (marginal flow) or b"NLMPATH1" (path store)
    bytes 8..11    uint32 H, length of the header in bytes
    next H bytes   UTF-8 JSON header, keys sorted, separators "," and ":"
    rest           float64 body, row-major

Flow body: ``len(times)`` rows of ``n_cells`` density values.
Path body: ``N`` rows (particles) of ``len(times)`` positions.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .errors import ArchiveError
from .grid import Grid, GridDensity, MarginalFlow
from .particles import PathStore

FLOW_MAGIC = b"NLMFLOW1"
PATH_MAGIC = b"NLMPATH1"
FLOAT_FMT = "%.17g"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    return v


def _pack(magic: bytes, header: dict, body: np.ndarray) -> bytes:
    h = json.dumps(_jsonable(header), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<I", len(h)) + h + np.ascontiguousarray(body, dtype="<f8").tobytes()


def _unpack(data: bytes) -> tuple[bytes, dict, np.ndarray]:
    if len(data) == 0:
        raise ArchiveError("archive is empty")
    if len(data) < 12:
        raise ArchiveError("archive is truncated")
    magic = data[:8]
    if magic not in (FLOW_MAGIC, PATH_MAGIC):
        raise ArchiveError(f"unknown archive magic {magic!r}")
    (hlen,) = struct.unpack("<I", data[8:12])
    if 12 + hlen > len(data):
        raise ArchiveError("archive header is truncated")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveError(f"archive header is not valid JSON: {e}") from e
    raw = data[12 + hlen:]
    if len(raw) % 8:
        raise ArchiveError("archive body is not a whole number of float64 values")
    return magic, header, np.frombuffer(raw, dtype="<f8").astype(np.float64)


def flow_to_bytes(flow: MarginalFlow) -> bytes:
    g = flow.grid
    header = {
        "kind": "flow",
        "s": float(flow.s),
        "times": [float(t) for t in flow.times],
        "x_min": g.x_min,
        "x_max": g.x_max,
        "n_cells": g.n_cells,
        "meta": flow.meta,
    }
    body = np.stack([d.values for d in flow.densities])
    return _pack(FLOW_MAGIC, header, body)


def paths_to_bytes(paths: PathStore) -> bytes:
    header = {
        "kind": "paths",
        "seed": int(paths.seed),
        "N": paths.N,
        "times": [float(t) for t in paths.times],
        "meta": paths.meta,
    }
    return _pack(PATH_MAGIC, header, paths.trajectories)


def from_bytes(data: bytes) -> MarginalFlow | PathStore:
    magic, header, body = _unpack(data)
    times = np.asarray(header.get("times", []), dtype=np.float64)
    if times.size == 0:
        raise ArchiveError("archive holds no times")
    if magic == FLOW_MAGIC:
        n = int(header["n_cells"])
        if body.size != n * times.size:
            raise ArchiveError("flow body size does not match the header")
        grid = Grid(float(header["x_min"]), float(header["x_max"]), n)
        vals = body.reshape(times.size, n)
        dens = [GridDensity(grid, vals[i].copy(), float(times[i])) for i in range(times.size)]
        return MarginalFlow(float(header["s"]), times, dens, header.get("meta", {}))
    N = int(header["N"])
    if body.size != N * times.size:
        raise ArchiveError("path body size does not match the header")
    return PathStore(times, body.reshape(N, times.size).copy(), int(header["seed"]), header.get("meta", {}))


def write_archive(obj: MarginalFlow | PathStore, path: str | Path) -> Path:
    path = Path(path)
    data = flow_to_bytes(obj) if isinstance(obj, MarginalFlow) else paths_to_bytes(obj)
    path.write_bytes(data)
    return path


def read_archive(path: str | Path) -> MarginalFlow | PathStore:
    path = Path(path)
    if not path.is_file():
        raise ArchiveError(f"no archive at {path}")
    return from_bytes(path.read_bytes())


# -- CSV ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def write_csv(path: str | Path, header: list[str], rows: Iterable[Iterable]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_flow_csv(flow: MarginalFlow, path: str | Path) -> Path:
    """Long format ``time,x,u``: one row per time and cell centre."""
    x = flow.grid.centers

    def rows():
        for t, d in zip(flow.times, flow.densities):
            for xi, ui in zip(x, d.values):
                yield (float(t), float(xi), float(ui))

    return write_csv(path, ["time", "x", "u"], rows())


def read_flow_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]


def write_paths_csv(paths: PathStore, path: str | Path) -> Path:
    """Long format ``particle,time,x``."""

    def rows():
        for i in range(paths.N):
            for j, t in enumerate(paths.times):
                yield (i, float(t), float(paths.trajectories[i, j]))

    return write_csv(path, ["particle", "time", "x"], rows())


def write_dict_rows(path: str | Path, rows: list[dict[str, Any]]) -> Path:
    header = list(rows[0].keys()) if rows else []
    return write_csv(path, header, ([r[k] for k in header] for r in rows))


# -- summaries ---------------------------------------------------------------------------


def summary_text(items: dict[str, Any]) -> str:
    """``key = value`` lines in insertion order."""
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in items.items())


def describe_archive(obj: MarginalFlow | PathStore) -> dict[str, Any]:
    if isinstance(obj, MarginalFlow):
        out: dict[str, Any] = {
            "kind": "flow",
            "s": obj.s,
            "times": len(obj.times),
            "t_first": float(obj.times[0]),
            "t_last": float(obj.times[-1]),
            "x_min": obj.grid.x_min,
            "x_max": obj.grid.x_max,
            "n_cells": obj.grid.n_cells,
        }
        for t, d in zip(obj.times, obj.densities):
            out[f"mass@{_fmt(float(t))}"] = d.mass
            out[f"mean@{_fmt(float(t))}"] = d.mean()
            out[f"variance@{_fmt(float(t))}"] = d.variance()
            out[f"sup@{_fmt(float(t))}"] = d.sup()
    else:
        out = {
            "kind": "paths",
            "seed": obj.seed,
            "N": obj.N,
            "times": len(obj.times),
            "t_first": float(obj.times[0]),
            "t_last": float(obj.times[-1]),
        }
        for j, t in enumerate(obj.times):
            x = obj.trajectories[:, j]
            out[f"mean@{_fmt(float(t))}"] = float(x.mean())
            out[f"variance@{_fmt(float(t))}"] = float(x.var())
    for k, v in sorted(obj.meta.items()):
        if isinstance(v, (int, float, str, bool)):
            out[f"meta.{k}"] = v
    return out
