"""Uniform vertex-centred grids and time axes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, UnboundedTimestep, ParameterError

DEFAULT_CFL = 0.5


@dataclass(frozen=True)
class Grid2D:
    """Vertex-centred grid on ``[x_min, x_max] x [y_min, y_max]``.

    Arrays on the grid have shape ``(ny, nx)`` so that the x index runs
    fastest in row-major (C) order.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int
    dx: float = field(init=False)
    dy: float = field(init=False)

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise GridError("point counts must be integers")
        if self.nx < 2 or self.ny < 2:
            raise GridError(f"need at least 2 points per axis, got nx={self.nx}, ny={self.ny}")
        if not (np.isfinite([self.x_min, self.x_max, self.y_min, self.y_max]).all()):
            raise GridError("extents must be finite")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise GridError(
                f"degenerate extents [{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]"
            )
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "dx", (self.x_max - self.x_min) / (self.nx - 1))
        object.__setattr__(self, "dy", (self.y_max - self.y_min) / (self.ny - 1))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def extents(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    @property
    def x(self) -> np.ndarray:
        # the last node is pinned so endpoints are reproduced exactly
        xs = self.x_min + np.arange(self.nx) * self.dx
        xs[-1] = self.x_max
        return xs

    @property
    def y(self) -> np.ndarray:
        ys = self.y_min + np.arange(self.ny) * self.dy
        ys[-1] = self.y_max
        return ys

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y)

    def coordinate(self, i: int, j: int) -> tuple[float, float]:
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise IndexError(f"index ({i}, {j}) outside {self.nx}x{self.ny} grid")
        x = self.x_max if i == self.nx - 1 else self.x_min + i * self.dx
        y = self.y_max if j == self.ny - 1 else self.y_min + j * self.dy
        return (x, y)

    def index(self, x: float, y: float) -> tuple[int, int]:
        """Nearest grid index of a coordinate inside the box."""
        i = int(round((x - self.x_min) / self.dx))
        j = int(round((y - self.y_min) / self.dy))
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise IndexError(f"point ({x}, {y}) outside the grid box")
        return (i, j)

    def clamp(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.clip(x, self.x_min, self.x_max), np.clip(y, self.y_min, self.y_max)

    def refine(self) -> "Grid2D":
        """Same box with the spacing halved."""
        return Grid2D(*self.extents, 2 * (self.nx - 1) + 1, 2 * (self.ny - 1) + 1)

    def to_dict(self) -> dict:
        return dict(x_min=self.x_min, x_max=self.x_max, y_min=self.y_min,
                    y_max=self.y_max, nx=self.nx, ny=self.ny)


def build_grid(extents, nx: int, ny: int) -> Grid2D:
    """Grid2D from ``(x_min, x_max, y_min, y_max)`` and point counts."""
    if len(extents) != 4:
        raise GridError("extents must be (x_min, x_max, y_min, y_max)")
    return Grid2D(*(float(e) for e in extents), nx, ny)


def grid_from_spacing(extents, spacing: float) -> Grid2D:
    """Grid whose spacing is ``spacing`` on both axes (extents must be multiples)."""
    x_min, x_max, y_min, y_max = extents
    nx = round((x_max - x_min) / spacing) + 1
    ny = round((y_max - y_min) / spacing) + 1
    return build_grid(extents, nx, ny)


@dataclass(frozen=True)
class TimeAxis:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ParameterError("time axis needs at least one step")
        if not self.T > self.t0:
            raise ParameterError(f"final time {self.T} must exceed start {self.t0}")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    def time(self, n: int) -> float:
        if n == self.n_steps:
            return self.T
        return self.t0 + n * self.dt

    @property
    def times(self) -> np.ndarray:
        ts = self.t0 + np.arange(self.n_steps + 1) * self.dt
        ts[-1] = self.T
        return ts


def cfl_timestep(u_max: float, v_max: float, grid: Grid2D, cfl: float = DEFAULT_CFL) -> float:
    """Largest stable step ``cfl / (u_max/dx + v_max/dy)``."""
    if u_max < 0 or v_max < 0:
        raise ParameterError("velocity bounds must be non-negative")
    if not 0 < cfl <= 1:
        raise ParameterError(f"CFL number must lie in (0, 1], got {cfl}")
    rate = u_max / grid.dx + v_max / grid.dy
    if rate == 0:
        raise UnboundedTimestep("zero velocity bound gives an unbounded time step; supply a cap")
    return cfl / rate
