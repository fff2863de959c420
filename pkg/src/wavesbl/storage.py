"""Snapshot files: long-form CSV and a little-endian binary container.

CSV
    Header ``x,t,u`` (1D) or ``x,y,t,u`` (2D), one row per grid node in
    row-major order (x slowest, t fastest). Non-``u`` data (noisy
    observations, smoothed fields) add a trailing ``field`` column holding
    the tag. Floats are written with 17 significant digits, so a round trip
    is exact. Segment bounds are not stored; pass the path to recover them.

Binary (all little-endian)
    ========  =======================  ==================================
    offset    type                     content
    ========  =======================  ==================================
    0         4 bytes                  magic ``b"WSBL"``
    4         uint16                   format version (1)
    6         uint8                    spatial dimension (1 or 2)
    7         uint8                    tag length ``L``
    8         L bytes                  tag, UTF-8
    8+L       uint32                   number of segments ``S``
    ...       (S+1) x uint64           segment bounds (time-level indices)
    ...       uint64 per axis          axis lengths ``nx[, ny], nt``
    ...       float64 per axis         coordinates ``x[, y], t``
    ...       float64                  values, row-major ``(x[, y], t)``
    ========  =======================  ==================================
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .exceptions import ParseError
from .solver import Snapshot
from .switching import MarkovPath

MAGIC = b"WSBL"
VERSION = 1
_TIME_MATCH = 1e-9


def _axes(s: Snapshot):
    return (s.x, s.t) if s.y is None else (s.x, s.y, s.t)


def write_snapshot_csv(s: Snapshot, dest=None) -> str:
    names = ["x", "t"] if s.y is None else ["x", "y", "t"]
    grids = np.meshgrid(*_axes(s), indexing="ij")
    cols = [g.reshape(-1) for g in grids] + [np.asarray(s.u).reshape(-1)]
    data = np.column_stack(cols)
    buf = io.StringIO()
    header = ",".join(names + ["u"]) + ("" if s.tag == "u" else ",field")
    buf.write(header + "\n")
    fmt = ",".join(["%.17g"] * data.shape[1])
    if s.tag != "u":
        fmt += "," + s.tag.replace("%", "%%")
    np.savetxt(buf, data, fmt=fmt)
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text


def _bounds_from_path(t, path: MarkovPath):
    bounds = []
    for tj in list(path.jump_times) + [path.horizon]:
        j = int(np.argmin(np.abs(t - tj)))
        if abs(t[j] - tj) > _TIME_MATCH * max(1.0, abs(tj)):
            raise ParseError(f"no time level matches path time {tj!r}")
        bounds.append(j)
    if bounds[0] != 0 or bounds[-1] != len(t) - 1:
        raise ParseError("path does not span the time axis of the data")
    return tuple(bounds)


def _bounds_from_steps(t):
    # fallback: cut wherever the step changes
    dt = np.diff(t)
    cuts = [0]
    for j in range(1, len(dt)):
        if abs(dt[j] - dt[j - 1]) > 1e-9 * max(dt[j], dt[j - 1]):
            cuts.append(j)
    cuts.append(len(t) - 1)
    return tuple(cuts)


def _find_bad_line(text, ncols, nnum):
    for lineno, line in enumerate(text.splitlines()[1:], start=2):
        parts = line.split(",")
        if len(parts) != ncols:
            return lineno, f"expected {ncols} columns, got {len(parts)}"
        for p in parts[:nnum]:
            try:
                float(p)
            except ValueError:
                return lineno, f"non-numeric entry {p!r}"
    return None, "malformed data"


def read_snapshot_csv(source, path: MarkovPath = None) -> Snapshot:
    """Read a long-form snapshot CSV.

    Segment bounds come from ``path`` when given (every jump time must be a
    time level); otherwise they are placed wherever the time step changes.
    Raises ``ParseError`` with a line number on malformed input.
    """
    if isinstance(source, Path) or "\n" not in str(source):
        text = Path(source).read_text()
    else:
        text = str(source)
    first, _, _ = text.partition("\n")
    header = [h.strip() for h in first.split(",")]
    has_field = header[-1:] == ["field"]
    names = header[:-1] if has_field else header
    if names not in (["x", "t", "u"], ["x", "y", "t", "u"]):
        raise ParseError(f"unexpected header {first!r}", line=1)
    nnum = len(names)
    try:
        data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1,
                          usecols=range(nnum), ndmin=2, dtype=float)
    except ValueError as exc:
        lineno, why = _find_bad_line(text, len(header), nnum)
        raise ParseError(f"{why} ({exc})", line=lineno) from None
    tag = "u"
    if has_field:
        tags = {line.rsplit(",", 1)[-1].strip() for line in text.splitlines()[1:] if line}
        if len(tags) != 1:
            raise ParseError(f"field column must hold one tag, found {sorted(tags)}")
        tag = tags.pop()
    if data.shape[0] == 0:
        raise ParseError("no data rows", line=2)
    axes = [np.unique(data[:, i]) for i in range(nnum - 1)]
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != data.shape[0]:
        raise ParseError(
            f"{data.shape[0]} rows do not fill a {'x'.join(map(str, shape))} grid "
            "(truncated file?)", line=data.shape[0] + 1)
    grids = np.meshgrid(*axes, indexing="ij")
    for i, g in enumerate(grids):
        if not np.array_equal(g.reshape(-1), data[:, i]):
            bad = int(np.flatnonzero(g.reshape(-1) != data[:, i])[0])
            raise ParseError("rows are not in row-major (x, [y,] t) order", line=bad + 2)
    u = data[:, -1].reshape(shape)
    t = axes[-1]
    bounds = _bounds_from_path(t, path) if path is not None else _bounds_from_steps(t)
    y = axes[1] if nnum == 4 else None
    return Snapshot(axes[0], t, u, bounds, y=y, tag=tag)


def write_snapshot_bin(s: Snapshot, dest=None) -> bytes:
    tag = s.tag.encode("utf-8")
    if len(tag) > 255:
        raise ValueError("tag too long")
    axes = _axes(s)
    parts = [MAGIC, struct.pack("<HBB", VERSION, s.ndim_space, len(tag)), tag,
             struct.pack("<I", s.n_segments),
             np.asarray(s.segment_bounds, dtype="<u8").tobytes(),
             np.asarray([len(a) for a in axes], dtype="<u8").tobytes()]
    parts += [np.asarray(a, dtype="<f8").tobytes() for a in axes]
    parts.append(np.ascontiguousarray(s.u, dtype="<f8").tobytes())
    blob = b"".join(parts)
    if dest is not None:
        Path(dest).write_bytes(blob)
    return blob


def read_snapshot_bin(source) -> Snapshot:
    """Inverse of :func:`write_snapshot_bin`; accepts bytes or a file name."""
    blob = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise ParseError(f"binary snapshot truncated at byte {pos}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise ParseError("not a snapshot container (bad magic)")
    version, ndim, tag_len = struct.unpack("<HBB", take(4))
    if version != VERSION:
        raise ParseError(f"unsupported container version {version}")
    if ndim not in (1, 2):
        raise ParseError(f"bad spatial dimension {ndim}")
    tag = bytes(take(tag_len)).decode("utf-8")
    (n_seg,) = struct.unpack("<I", take(4))
    bounds = np.frombuffer(take(8 * (n_seg + 1)), dtype="<u8")
    lengths = np.frombuffer(take(8 * (ndim + 1)), dtype="<u8").astype(int)
    axes = [np.frombuffer(take(8 * n), dtype="<f8").copy() for n in lengths]
    u = np.frombuffer(take(8 * int(np.prod(lengths))), dtype="<f8").reshape(tuple(lengths)).copy()
    if pos != len(view):
        raise ParseError(f"{len(view) - pos} trailing bytes after snapshot data")
    y = axes[1] if ndim == 2 else None
    return Snapshot(axes[0], axes[-1], u, tuple(int(b) for b in bounds), y=y, tag=tag)


def write_snapshot(s: Snapshot, dest, fmt=None):
    """Write by extension (``.csv`` or ``.bin``) unless ``fmt`` is given."""
    fmt = fmt or ("csv" if str(dest).endswith(".csv") else "bin")
    if fmt == "csv":
        write_snapshot_csv(s, dest)
    elif fmt == "bin":
        write_snapshot_bin(s, dest)
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")


def read_snapshot(source, path: MarkovPath = None) -> Snapshot:
    if str(source).endswith(".csv"):
        return read_snapshot_csv(Path(source), path)
    return read_snapshot_bin(source)
