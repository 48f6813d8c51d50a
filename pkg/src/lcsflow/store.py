"""Binary volume/field files, text matrices, 16-bit graymaps and ridge point lists.

Binary layout (all little-endian):

volume  ``ISLEVOL1`` | x_min x_max y_min y_max (f64) | nx ny (u64) | t0 T (f64) | N (u64)
        | N+1 frames of ny*nx f64, row-major with x fastest
field   ``ISLEFLD1`` | x_min x_max y_min y_max (f64) | nx ny (u64) | ncomp (u64) | t (f64)
        | ncomp components of ny*nx f64, row-major with x fastest
"""
from __future__ import annotations

import os
import struct
import warnings
from typing import NamedTuple

import numpy as np

from .errors import FormatError, MonotonicityError
from .fields import FlowMap2D, ScalarField2D
from .grid import Grid2D, TimeAxis
from .lyapunov import SeparationEnvelope

VOLUME_MAGIC = b"ISLEVOL1"
FIELD_MAGIC = b"ISLEFLD1"
_VOL_HEAD = struct.Struct("<8s4d2Q2dQ")
_FLD_HEAD = struct.Struct("<8s4d2QQd")


def _read_exact(path: str, fmt: struct.Struct, kind: str) -> tuple[bytes, tuple]:
    with open(path, "rb") as fh:
        head = fh.read(fmt.size)
    if len(head) < fmt.size:
        raise FormatError(f"{path}: {kind} header truncated ({len(head)} of {fmt.size} bytes)",
                          offset=len(head))
    return head, fmt.unpack(head)


def _grid_from_header(path, ext, nx, ny, offset) -> Grid2D:
    try:
        return Grid2D(*ext, int(nx), int(ny))
    except Exception as exc:
        raise FormatError(f"{path}: invalid grid in header ({exc})", offset=offset) from exc


def save_volume(path: str, envelope: SeparationEnvelope):
    g, ax = envelope.grid, envelope.axis
    with open(path, "wb") as fh:
        fh.write(_VOL_HEAD.pack(VOLUME_MAGIC, *g.extents, g.nx, g.ny, ax.t0, ax.T, ax.n_steps))
        fh.write(np.ascontiguousarray(envelope.frames, dtype="<f8").tobytes())


def load_volume(path: str, validate: bool = True) -> SeparationEnvelope:
    """Load and (by default) validate an envelope volume.

    Checks the magic tag, the header, the exact payload size (a short file
    names the first incomplete frame), ``frame 0 == 0`` and pointwise
    monotonicity across frames.
    """
    _, (magic, *rest) = _read_exact(path, _VOL_HEAD, "volume")
    if magic != VOLUME_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {VOLUME_MAGIC!r}", offset=0)
    x0, x1, y0, y1, nx, ny, t0, T, n = rest
    grid = _grid_from_header(path, (x0, x1, y0, y1), nx, ny, 8)
    if n < 1 or not T > t0:
        raise FormatError(f"{path}: invalid time header t0={t0} T={T} N={n}", offset=56)
    axis = TimeAxis(t0, T, int(n))
    frame_bytes = nx * ny * 8
    expected = _VOL_HEAD.size + (n + 1) * frame_bytes
    size = os.path.getsize(path)
    if size < expected:
        missing = (size - _VOL_HEAD.size) // frame_bytes
        raise FormatError(f"{path}: truncated volume, frame {missing} of {n} missing or incomplete",
                          offset=size)
    if size > expected:
        raise FormatError(f"{path}: {size - expected} trailing bytes after frame {n}", offset=expected)
    frames = np.fromfile(path, dtype="<f8", offset=_VOL_HEAD.size).reshape(n + 1, ny, nx)
    frames = frames.astype(float)
    if validate:
        bad = ~np.isfinite(frames)
        if bad.any():
            k, j, i = (int(v) for v in np.argwhere(bad)[0])
            raise FormatError(f"{path}: non-finite sample in frame {k} at point ({i}, {j})",
                              offset=_VOL_HEAD.size + ((k * ny + j) * nx + i) * 8)
        if np.any(frames[0] != 0):
            j, i = (int(v) for v in np.argwhere(frames[0] != 0)[0])
            raise MonotonicityError(f"{path}: frame 0 must be zero, point ({i}, {j}) is not",
                                    offset=_VOL_HEAD.size + (j * nx + i) * 8)
        dec = frames[1:] < frames[:-1]
        if dec.any():
            k, j, i = (int(v) for v in np.argwhere(dec)[0])
            raise MonotonicityError(
                f"{path}: envelope decreases at point ({i}, {j}) between frames {k} and {k + 1}",
                offset=_VOL_HEAD.size + (((k + 1) * ny + j) * nx + i) * 8)
    return SeparationEnvelope(grid, axis, frames)


class StoredField(NamedTuple):
    grid: Grid2D
    data: np.ndarray  # (ncomp, ny, nx)
    t: float


def save_field(path: str, field, t: float | None = None):
    """Write a scalar field or a flow map (two components) in the binary field format."""
    if isinstance(field, FlowMap2D):
        data = np.stack([field.phi, field.psi])
    elif isinstance(field, ScalarField2D):
        data = field.values[None]
    else:
        raise TypeError(f"cannot store {type(field).__name__}")
    if t is None:
        t = float(getattr(field, "t", 0.0))
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_FLD_HEAD.pack(FIELD_MAGIC, *g.extents, g.nx, g.ny, data.shape[0], t))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_field(path: str) -> StoredField:
    _, (magic, *rest) = _read_exact(path, _FLD_HEAD, "field")
    if magic != FIELD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FIELD_MAGIC!r}", offset=0)
    x0, x1, y0, y1, nx, ny, ncomp, t = rest
    grid = _grid_from_header(path, (x0, x1, y0, y1), nx, ny, 8)
    if ncomp < 1:
        raise FormatError(f"{path}: component count {ncomp}", offset=56)
    expected = _FLD_HEAD.size + ncomp * nx * ny * 8
    size = os.path.getsize(path)
    if size != expected:
        what = "truncated" if size < expected else "oversized"
        raise FormatError(f"{path}: {what} field payload, expected {expected} bytes, found {size}",
                          offset=min(size, expected))
    data = np.fromfile(path, dtype="<f8", offset=_FLD_HEAD.size).reshape(ncomp, ny, nx)
    return StoredField(grid, data.astype(float), float(t))


def load_flowmap(path: str) -> FlowMap2D:
    f = load_field(path)
    if f.data.shape[0] != 2:
        raise FormatError(f"{path}: expected a 2-component flow map, found {f.data.shape[0]}")
    return FlowMap2D(f.grid, f.data[0], f.data[1])


def save_text(path: str, values: np.ndarray):
    """One line per grid row (``j`` ascending), 17 significant digits."""
    np.savetxt(path, np.asarray(values, dtype=float), fmt="%.17g")


def load_text(path: str) -> np.ndarray:
    try:
        return np.atleast_2d(np.loadtxt(path, dtype=float))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_pgm(path: str, values: np.ndarray) -> tuple[float, float]:
    """16-bit binary graymap with linear min/max scaling and a ``.txt`` sidecar.

    The top image row is ``y_max``. A constant field maps to 0.
    """
    v = np.asarray(values, dtype=float)
    lo, hi = float(np.min(v)), float(np.max(v))
    scale = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    pix = np.rint(scale * 65535).astype(">u2")[::-1]
    ny, nx = v.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n65535\n".encode())
        fh.write(pix.tobytes())
    with open(path + ".txt", "w") as fh:
        fh.write(f"min {lo!r}\nmax {hi!r}\nmapping linear 0..65535\nrow0 y_max\n")
    return lo, hi


def load_pgm(path: str) -> tuple[np.ndarray, float, float]:
    """Inverse of :func:`save_pgm` (values recovered up to 16-bit quantisation)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"65535":
        raise FormatError(f"{path}: not a 16-bit binary graymap", offset=0)
    nx, ny = int(parts[1]), int(parts[2])
    body = parts[4]
    if len(body) != 2 * nx * ny:
        raise FormatError(f"{path}: pixel payload has {len(body)} bytes, expected {2 * nx * ny}",
                          offset=len(raw) - len(body))
    pix = np.frombuffer(body, dtype=">u2").reshape(ny, nx)[::-1].astype(float)
    meta = {}
    with open(path + ".txt") as fh:
        for line in fh:
            k, _, val = line.partition(" ")
            meta[k] = val.strip()
    lo, hi = float(meta["min"]), float(meta["max"])
    return lo + pix / 65535 * (hi - lo), lo, hi


def save_ridges(path: str, ridges):
    """Ridge nodes as ``x y value`` lines."""
    xy = ridges.coordinates()
    with open(path, "w") as fh:
        fh.write(f"# x y value  source={ridges.source or '-'} threshold={ridges.threshold!r} "
                 f"smoothing={ridges.smoothing}\n")
        for (x, y), val in zip(xy, ridges.values):
            fh.write(f"{x:.17g} {y:.17g} {val:.17g}\n")


def load_ridge_points(path: str) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # an empty ridge list is a valid file
        return np.atleast_2d(np.loadtxt(path, dtype=float, comments="#")).reshape(-1, 3)
