"""File formats: the GFH1 binary map container, detection/trajectory CSV,
and flat key=value config files.

GFH1 container: 16-byte header (magic ``GFH1``, u32 w, u32 h, u32 channels,
little-endian), followed by channels * w * h little-endian float32 values,
each channel stored row-major by y.

CSV: header ``time,id,x,y,confidence``; id is -1 for unassociated
detections. Floats are written with repr-exact precision so files
round-trip and are byte-stable across runs.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Detection, Trajectory
from .errors import DimensionMismatch, FormatError

MAGIC = b"GFH1"
_HEADER = struct.Struct("<4sIII")


def save_maps(path, channels: Sequence[np.ndarray]) -> None:
    """Write a stack of (h, w) arrays as one GFH1 container."""
    channels = [np.asarray(c, dtype=np.float64) for c in channels]
    if not channels:
        raise ValueError("GFH1 container needs at least one channel")
    h, w = channels[0].shape
    for c in channels:
        if c.shape != (h, w):
            raise DimensionMismatch("all channels must share one shape")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, w, h, len(channels)))
        for c in channels:
            f.write(np.ascontiguousarray(c, dtype="<f4").tobytes())


def load_maps(path) -> tuple[int, int, list[np.ndarray]]:
    """Read a GFH1 container; returns (w, h, [float64 arrays of shape (h, w)])."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: shorter than GFH1 header")
    magic, w, h, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * n * w * h
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return w, h, [flat[k * w * h : (k + 1) * w * h].reshape(h, w).astype(np.float64) for k in range(n)]


def _fmt(v: float) -> str:
    return repr(float(v))


def save_detections(path, frames: Sequence[Sequence[Detection]]) -> None:
    lines = ["time,id,x,y,confidence"]
    for dets in frames:
        for d in dets:
            lines.append(f"{d.time},-1,{_fmt(d.x)},{_fmt(d.y)},{_fmt(d.confidence)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_detections(path) -> list[list[Detection]]:
    """Read detections grouped by frame (list index = frame time)."""
    rows = _read_csv(path)
    if not rows:
        return []
    t_max = max(int(r[0]) for r in rows)
    frames: list[list[Detection]] = [[] for _ in range(t_max + 1)]
    for r in rows:
        t = int(r[0])
        frames[t].append(Detection(t, float(r[2]), float(r[3]), float(r[4])))
    return frames


def save_trajectories(path, trajectories: Sequence[Trajectory]) -> None:
    lines = ["time,id,x,y,confidence"]
    for traj in sorted(trajectories, key=lambda tr: tr.id):
        for t, x, y in traj.points:
            lines.append(f"{t},{traj.id},{_fmt(x)},{_fmt(y)},1.0")
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectories(path) -> list[Trajectory]:
    rows = _read_csv(path)
    by_id: dict[int, list[tuple[int, float, float]]] = {}
    for r in rows:
        by_id.setdefault(int(r[1]), []).append((int(r[0]), float(r[2]), float(r[3])))
    out = []
    for tid in sorted(by_id):
        pts = sorted(by_id[tid])
        out.append(Trajectory(tid, tuple(pts)))
    return out


def _read_csv(path) -> list[list[str]]:
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty CSV")
    header = lines[0].split(",")
    if [c.strip() for c in header] != ["time", "id", "x", "y", "confidence"]:
        raise FormatError(f"{path}: unexpected CSV header {lines[0]!r}")
    return [ln.split(",") for ln in lines[1:]]


def parse_kv(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def write_kv(path, mapping: dict) -> None:
    lines = [f"{k} = {mapping[k]}" for k in sorted(mapping)]
    Path(path).write_text("\n".join(lines) + "\n")
