"""Grid-sampled data containers shared across modules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grid import Grid2D


def _snap(f):
    # node coordinates that round to just below an integer would otherwise be
    # interpolated from the neighbouring cell with weight 1 - eps
    r = np.rint(f)
    return np.where(np.abs(f - r) <= 8 * np.finfo(float).eps * np.maximum(1.0, np.abs(f)), r, f)


def _cell_coords(grid: Grid2D, x, y):
    fx = _snap((np.clip(x, grid.x_min, grid.x_max) - grid.x_min) / grid.dx)
    fy = _snap((np.clip(y, grid.y_min, grid.y_max) - grid.y_min) / grid.dy)
    i0 = np.clip(np.floor(fx).astype(np.intp), 0, grid.nx - 2)
    j0 = np.clip(np.floor(fy).astype(np.intp), 0, grid.ny - 2)
    return i0, j0, fx - i0, fy - j0


def bilinear(grid: Grid2D, values: np.ndarray, x, y) -> np.ndarray:
    """Bilinear interpolation of node ``values`` at points ``(x, y)``.

    Points outside the box are clamped onto it first. The result never leaves
    the range of the four surrounding node values.
    """
    i0, j0, wx, wy = _cell_coords(grid, x, y)
    v00 = values[j0, i0]
    v10 = values[j0, i0 + 1]
    v01 = values[j0 + 1, i0]
    v11 = values[j0 + 1, i0 + 1]
    return (1 - wy) * ((1 - wx) * v00 + wx * v10) + wy * ((1 - wx) * v01 + wx * v11)


def _keys(t):
    # Catmull-Rom cubic convolution weights for offsets -1, 0, 1, 2
    t2 = t * t
    t3 = t2 * t
    return (
        0.5 * (-t3 + 2 * t2 - t),
        0.5 * (3 * t3 - 5 * t2 + 2),
        0.5 * (-3 * t3 + 4 * t2 + t),
        0.5 * (t3 - t2),
    )


def bicubic(grid: Grid2D, values: np.ndarray, x, y) -> np.ndarray:
    """Catmull-Rom bicubic interpolation (not monotone; may overshoot)."""
    i0, j0, wx, wy = _cell_coords(grid, x, y)
    kx = _keys(wx)
    ky = _keys(wy)
    out = 0.0
    for b in range(4):
        jj = np.clip(j0 + b - 1, 0, grid.ny - 1)
        row = 0.0
        for a in range(4):
            ii = np.clip(i0 + a - 1, 0, grid.nx - 1)
            row = row + kx[a] * values[jj, ii]
        out = out + ky[b] * row
    return out


@dataclass
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")


@dataclass
class LambdaField(ScalarField2D):
    """Largest Cauchy-Green eigenvalue per grid point."""


@dataclass
class FtleField(ScalarField2D):
    t: float = 0.0

    def display(self, clamp_negative: bool = True) -> np.ndarray:
        """Values for plotting; negatives (compression) optionally shown as 0."""
        return np.maximum(self.values, 0.0) if clamp_negative else self.values.copy()


@dataclass
class IsleField:
    grid: Grid2D
    r: float
    gamma: np.ndarray
    tau: np.ndarray  # NaN where no crossing occurred

    @property
    def crossed(self) -> np.ndarray:
        return ~np.isnan(self.tau)


@dataclass
class FlowMap2D:
    """Arrival coordinates ``(phi, psi)`` of a flow map at every grid node.

    Construction clamps arrivals into the closed domain box; ``clamped``
    counts the nodes that needed it.
    """

    grid: Grid2D
    phi: np.ndarray
    psi: np.ndarray
    clamped: int = field(default=0)

    def __post_init__(self):
        g = self.grid
        phi = np.asarray(self.phi, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        if phi.shape != g.shape or psi.shape != g.shape:
            raise ConfigError(f"map arrays {phi.shape}, {psi.shape} do not match grid {g.shape}")
        out = (phi < g.x_min) | (phi > g.x_max) | (psi < g.y_min) | (psi > g.y_max)
        n_out = int(np.count_nonzero(out))
        if n_out:
            phi = np.clip(phi, g.x_min, g.x_max)
            psi = np.clip(psi, g.y_min, g.y_max)
        self.phi, self.psi = phi, psi
        self.clamped = int(self.clamped) + n_out

    @classmethod
    def identity(cls, grid: Grid2D) -> "FlowMap2D":
        X, Y = grid.mesh()
        return cls(grid, X, Y)

    def displacement_norm(self, mask=None) -> float:
        X, Y = self.grid.mesh()
        d2 = (self.phi - X) ** 2 + (self.psi - Y) ** 2
        if mask is not None:
            d2 = d2[mask]
        return float(np.sqrt(d2.sum()))


def interior_mask(grid: Grid2D, margin: int) -> np.ndarray:
    """True on nodes at least ``margin`` cells away from every wall."""
    mask = np.zeros(grid.shape, dtype=bool)
    if margin == 0:
        mask[:] = True
    elif 2 * margin < min(grid.nx, grid.ny):
        mask[margin:-margin, margin:-margin] = True
    return mask


def relative_l2(a: FlowMap2D, b: FlowMap2D, mask=None, component: str | None = None) -> float:
    """``||a - b||_2 / ||b - id||_2`` over ``mask`` (all nodes by default).

    ``component`` selects ``"phi"`` or ``"psi"``; both are pooled otherwise.
    """
    if a.grid != b.grid:
        raise ConfigError("flow maps live on different grids")
    X, Y = b.grid.mesh()
    if mask is None:
        mask = np.ones(b.grid.shape, dtype=bool)
    num = 0.0
    den = 0.0
    if component in (None, "phi"):
        num += np.sum((a.phi - b.phi)[mask] ** 2)
        den += np.sum((b.phi - X)[mask] ** 2)
    if component in (None, "psi"):
        num += np.sum((a.psi - b.psi)[mask] ** 2)
        den += np.sum((b.psi - Y)[mask] ** 2)
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return float(np.sqrt(num / den))
