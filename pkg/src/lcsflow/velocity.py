"""Velocity sources: analytic benchmark flows and gridded time-dependent data.

Every model exposes ``velocity(x, y, t)`` which is vectorised over ``x`` and
``y`` and returns the pair ``(u, v)``.
"""
from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, FormatError
from .fields import bilinear
from .grid import Grid2D


class TimeRangeError(ConfigError):
    """Gridded data queried outside its frame times (no extrapolation)."""


class VelocitySample(NamedTuple):
    u: float
    v: float


@functools.lru_cache(maxsize=16)
def _mesh(grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    X, Y = grid.mesh()
    X.flags.writeable = False
    Y.flags.writeable = False
    return X, Y


class VelocityModel:
    """Base class; subclasses implement :meth:`velocity`."""

    name = "model"
    autonomous = False

    def velocity(self, x, y, t: float):
        raise NotImplementedError

    def sample_grid(self, grid: Grid2D, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Velocity at every node of ``grid``."""
        X, Y = _mesh(grid)
        u, v = self.velocity(X, Y, t)
        return np.broadcast_to(u, grid.shape).astype(float), np.broadcast_to(v, grid.shape).astype(float)

    def time_range(self) -> tuple[float, float]:
        return (-math.inf, math.inf)


def sample(model: VelocityModel, x: float, y: float, t: float) -> VelocitySample:
    u, v = model.velocity(np.asarray(x, float), np.asarray(y, float), t)
    return VelocitySample(float(u), float(v))


# u = STREAM_SIGN * d(psi)/dy, v = -STREAM_SIGN * d(psi)/dx
STREAM_SIGN = -1.0


@dataclass(frozen=True)
class DoubleGyre(VelocityModel):
    """Periodically forced double gyre on ``[0, 2] x [0, 1]``.

    Stream function ``A sin(pi g(x, t)) sin(pi y)`` with
    ``g = a(t) x^2 + b(t) x``, ``a = eps sin(omega t)``, ``b = 1 - 2 a``.
    """

    A: float = 0.1
    eps: float = 0.1
    omega: float = 2 * math.pi / 10
    name = "double-gyre"
    domain = (0.0, 2.0, 0.0, 1.0)

    @property
    def autonomous(self) -> bool:
        return self.eps == 0

    def stream(self, x, y, t):
        a = self.eps * math.sin(self.omega * t)
        g = a * x * x + (1 - 2 * a) * x
        return self.A * np.sin(np.pi * g) * np.sin(np.pi * y)

    def velocity(self, x, y, t):
        a = self.eps * math.sin(self.omega * t)
        b = 1 - 2 * a
        g = (a * x + b) * x
        dgdx = 2 * a * x + b
        pa = math.pi * self.A
        # closed-form derivatives of the stream function
        dpsi_dy = pa * np.sin(np.pi * g) * np.cos(np.pi * y)
        dpsi_dx = pa * np.cos(np.pi * g) * np.sin(np.pi * y) * dgdx
        return STREAM_SIGN * dpsi_dy, -STREAM_SIGN * dpsi_dx


@dataclass(frozen=True)
class QuadSaddle(VelocityModel):
    """``u = x - y^2``, ``v = -y + x^2``."""

    name = "quad-saddle"
    autonomous = True
    domain = (-6.0, 6.0, -6.0, 6.0)

    def velocity(self, x, y, t):
        return x - y * y, -y + x * x


@dataclass(frozen=True)
class DuffingVdP(VelocityModel):
    """Forced-damped Duffing / van der Pol oscillator."""

    forcing: float = 0.1
    name = "duffing"
    domain = (-2.0, 2.0, -1.5, 1.5)

    def velocity(self, x, y, t):
        v = x - x ** 3 + 0.5 * y * (1 - x * x) + self.forcing * math.sin(t)
        return np.asarray(y, float) + 0.0 * x, v


@dataclass(frozen=True)
class LinearSaddle(VelocityModel):
    """``u = rate * x``, ``v = -rate * y``; exact map ``(x e^{rt}, y e^{-rt})``."""

    rate: float = 1.0
    name = "linear-saddle"
    autonomous = True
    domain = (-10.0, 10.0, -1.0, 1.0)

    def velocity(self, x, y, t):
        return self.rate * x, -self.rate * y


@dataclass(frozen=True)
class Uniform(VelocityModel):
    """Spatially constant velocity (zero velocity when both components are 0)."""

    u: float = 0.0
    v: float = 0.0
    name = "uniform"
    autonomous = True
    domain = (0.0, 1.0, 0.0, 1.0)

    def velocity(self, x, y, t):
        shape = np.broadcast(x, y).shape
        return np.full(shape, float(self.u)), np.full(shape, float(self.v))


@dataclass(frozen=True)
class RigidRotation(VelocityModel):
    """Counter-clockwise rotation ``(-omega y, omega x)``."""

    omega: float = 1.0
    name = "rotation"
    autonomous = True
    domain = (-1.0, 1.0, -1.0, 1.0)

    def velocity(self, x, y, t):
        return -self.omega * y, self.omega * x


# ---------------------------------------------------------------------------
# gridded data


@dataclass(frozen=True, eq=False)
class Gridded(VelocityModel):
    """Velocity frames on a grid: bilinear in space, linear in time.

    ``u`` and ``v`` have shape ``(nt, ny, nx)``. Spatial queries outside the
    grid box are clamped to the box; times outside the frame range raise.
    """

    grid: Grid2D
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    name = "gridded"
    source: str = field(default="", compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, float)
        if times.ndim != 1 or times.size < 1:
            raise ConfigError("gridded velocity needs at least one frame time")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ConfigError("frame times must be strictly increasing")
        shape = (times.size, self.grid.ny, self.grid.nx)
        if self.u.shape != shape or self.v.shape != shape:
            raise ConfigError(f"frame arrays must have shape {shape}, got {self.u.shape}, {self.v.shape}")
        object.__setattr__(self, "times", times)

    @property
    def domain(self):
        return self.grid.extents

    def time_range(self):
        return (float(self.times[0]), float(self.times[-1]))

    def _frame_weights(self, t: float):
        t0, t1 = self.time_range()
        if not t0 <= t <= t1:
            raise TimeRangeError(f"time {t} outside gridded frame range [{t0}, {t1}]")
        if self.times.size == 1:
            return 0, 0, 0.0
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), self.times.size - 2)
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, k + 1, w

    def _frames_at(self, t: float):
        k0, k1, w = self._frame_weights(t)
        if w == 0.0:
            return np.asarray(self.u[k0]), np.asarray(self.v[k0])
        if w == 1.0:
            return np.asarray(self.u[k1]), np.asarray(self.v[k1])
        u = (1 - w) * self.u[k0] + w * self.u[k1]
        v = (1 - w) * self.v[k0] + w * self.v[k1]
        return u, v

    def velocity(self, x, y, t):
        uf, vf = self._frames_at(t)
        return bilinear(self.grid, uf, x, y), bilinear(self.grid, vf, x, y)

    def sample_grid(self, grid: Grid2D, t: float):
        if grid == self.grid:
            uf, vf = self._frames_at(t)
            return np.array(uf, dtype=float), np.array(vf, dtype=float)
        return super().sample_grid(grid, t)


HEADER_KEYS = ("nx", "ny", "nt", "x_min", "x_max", "y_min", "y_max", "times", "payload", "endianness")


def save_gridded(header_path: str, grid: Grid2D, times, u: np.ndarray, v: np.ndarray,
                 payload: str | None = None) -> str:
    """Write a gridded velocity header plus its little-endian float64 payload.

    Payload layout: for each frame, the u array then the v array, each
    row-major with x fastest.
    """
    times = np.asarray(times, float)
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    if payload is None:
        payload = os.path.splitext(os.path.basename(header_path))[0] + ".bin"
    lines = [
        f"nx = {grid.nx}",
        f"ny = {grid.ny}",
        f"nt = {times.size}",
        f"x_min = {grid.x_min!r}",
        f"x_max = {grid.x_max!r}",
        f"y_min = {grid.y_min!r}",
        f"y_max = {grid.y_max!r}",
        "times = " + " ".join(repr(float(t)) for t in times),
        f"payload = {payload}",
        "endianness = little",
    ]
    with open(header_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    data = np.stack([u, v], axis=1).astype("<f8")  # (nt, 2, ny, nx)
    data.tofile(os.path.join(os.path.dirname(os.path.abspath(header_path)), payload))
    return header_path


def _parse_header(header_path: str) -> dict:
    entries = {}
    try:
        fh = open(header_path)
    except OSError as exc:
        raise FormatError(f"cannot read gridded header {header_path}: {exc}") from exc
    with fh:
        offset = 0
        for line in fh:
            text = line.split("#", 1)[0].strip()
            if text:
                if "=" not in text:
                    raise FormatError(f"{header_path}: malformed header line {text!r}", offset)
                key, value = (s.strip() for s in text.split("=", 1))
                entries[key] = value
            offset += len(line.encode())
    missing = [k for k in HEADER_KEYS if k not in entries]
    if missing:
        raise FormatError(f"{header_path}: missing header keys {missing}")
    return entries


def load_gridded(header_path: str) -> Gridded:
    """Load a gridded velocity model; the payload is memory-mapped, not copied."""
    h = _parse_header(header_path)
    try:
        nx, ny, nt = int(h["nx"]), int(h["ny"]), int(h["nt"])
        ext = [float(h[k]) for k in ("x_min", "x_max", "y_min", "y_max")]
        times = np.array([float(s) for s in h["times"].replace(",", " ").split()])
    except ValueError as exc:
        raise FormatError(f"{header_path}: unparsable header value ({exc})") from exc
    if h["endianness"].lower() not in ("little", "le", "<"):
        raise FormatError(f"{header_path}: unsupported endianness tag {h['endianness']!r}")
    if times.size != nt:
        raise FormatError(f"{header_path}: nt={nt} but {times.size} frame times listed")
    if nt > 1 and not np.all(np.diff(times) > 0):
        bad = int(np.argmin(np.diff(times) > 0)) + 1
        raise FormatError(f"{header_path}: frame times not strictly increasing at frame {bad}")
    grid = Grid2D(*ext, nx, ny)
    path = os.path.join(os.path.dirname(os.path.abspath(header_path)), h["payload"])
    if not os.path.exists(path):
        raise FormatError(f"payload file {path} not found")
    frame_bytes = 2 * nx * ny * 8
    size = os.path.getsize(path)
    if size < nt * frame_bytes:
        frame = size // frame_bytes
        raise FormatError(
            f"{path}: truncated payload, frame {frame} incomplete "
            f"(expected {nt * frame_bytes} bytes, found {size})",
            offset=size,
        )
    if size > nt * frame_bytes:
        raise FormatError(f"{path}: {size - nt * frame_bytes} trailing bytes after last frame",
                          offset=nt * frame_bytes)
    data = np.memmap(path, dtype="<f8", mode="r", shape=(nt, 2, ny, nx))
    return Gridded(grid, times, data[:, 0], data[:, 1], source=header_path)


# ---------------------------------------------------------------------------

ANALYTIC = {
    "double-gyre": DoubleGyre,
    "quad-saddle": QuadSaddle,
    "duffing": DuffingVdP,
    "linear-saddle": LinearSaddle,
    "rotation": RigidRotation,
}


def parse_model(spec: str, params: dict | None = None) -> VelocityModel:
    """Build a model from a CLI-style selector.

    Accepted: ``double-gyre``, ``quad-saddle``, ``duffing``, ``linear-saddle``,
    ``rotation``, ``zero``, ``uniform:<u>,<v>`` and ``gridded:<header path>``.
    """
    params = dict(params or {})
    if spec.startswith("gridded:"):
        return load_gridded(spec.split(":", 1)[1])
    if spec == "zero":
        return Uniform(0.0, 0.0)
    if spec.startswith("uniform:"):
        try:
            u, v = (float(s) for s in spec.split(":", 1)[1].split(","))
        except ValueError as exc:
            raise ConfigError(f"bad uniform model {spec!r}; expected uniform:<u>,<v>") from exc
        return Uniform(u, v)
    try:
        cls = ANALYTIC[spec]
    except KeyError:
        raise ConfigError(f"unknown model {spec!r}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {spec}: {exc}") from exc


def default_domain(model: VelocityModel) -> tuple[float, float, float, float]:
    return tuple(float(e) for e in model.domain)
