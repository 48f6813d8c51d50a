"""Backward level-set solves over one time interval.

Solving ``Psi_t + u . grad(Psi) = 0`` backward from ``t_hi`` (where ``Psi``
is the identity) down to ``t_lo`` yields the one-step forward flow map
``Phi_{t_lo}^{t_hi}``. Space: WENO5 upwinding; time: forward Euler or the
two-stage TVD Runge-Kutta scheme.
"""
from __future__ import annotations

import math
from enum import Enum

import numba
import numpy as np

from .errors import CflViolation, UnboundedTimestep
from .fields import FlowMap2D, ScalarField2D
from .grid import DEFAULT_CFL, Grid2D, cfl_timestep
from .velocity import VelocityModel

WENO_EPS = 1e-6
# normal velocities below this fraction of the peak speed count as tangential
TANGENTIAL_TOL = 1e-10


class SubstepScheme(str, Enum):
    EULER1 = "euler1"
    TVDRK2 = "tvdrk2"


@numba.njit(cache=True)
def _weno5_point(v1, v2, v3, v4, v5):
    s1 = 13.0 / 12.0 * (v1 - 2 * v2 + v3) ** 2 + 0.25 * (v1 - 4 * v2 + 3 * v3) ** 2
    s2 = 13.0 / 12.0 * (v2 - 2 * v3 + v4) ** 2 + 0.25 * (v2 - v4) ** 2
    s3 = 13.0 / 12.0 * (v3 - 2 * v4 + v5) ** 2 + 0.25 * (3 * v3 - 4 * v4 + v5) ** 2
    a1 = 0.1 / (s1 + WENO_EPS) ** 2
    a2 = 0.6 / (s2 + WENO_EPS) ** 2
    a3 = 0.3 / (s3 + WENO_EPS) ** 2
    p1 = v1 / 3 - 7 * v2 / 6 + 11 * v3 / 6
    p2 = -v2 / 6 + 5 * v3 / 6 + v4 / 3
    p3 = v3 / 3 + 5 * v4 / 6 - v5 / 6
    return (a1 * p1 + a2 * p2 + a3 * p3) / (a1 + a2 + a3)


_F8 = numba.float64
_weno5 = numba.vectorize([_F8(_F8, _F8, _F8, _F8, _F8)], cache=True)(_weno5_point)


@numba.vectorize([_F8(numba.boolean, _F8, _F8, _F8, _F8, _F8, _F8)], cache=True)
def _weno5_upwind(plus, d0, d1, d2, d3, d4, d5):
    # d0..d5 are the six one-sided differences around the node, left to right
    if plus:
        return _weno5_point(d5, d4, d3, d2, d1)
    return _weno5_point(d0, d1, d2, d3, d4)


def weno5_derivative(stencil, spacing: float, bias: str) -> float:
    """Fifth-order WENO approximation of ``f'`` from six consecutive samples.

    ``bias="minus"`` (left-biased, D-) evaluates at ``stencil[3]`` using
    ``f[i-3] .. f[i+2]``; ``bias="plus"`` (right-biased, D+) evaluates at
    ``stencil[2]`` using ``f[i-2] .. f[i+3]``.
    """
    f = np.asarray(stencil, dtype=float)
    if f.shape[-1] != 6:
        raise ValueError("WENO5 needs exactly six stencil values")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    d = np.diff(f, axis=-1) / spacing
    if bias == "minus":
        out = _weno5(d[..., 0], d[..., 1], d[..., 2], d[..., 3], d[..., 4])
    elif bias == "plus":
        out = _weno5(d[..., 4], d[..., 3], d[..., 2], d[..., 1], d[..., 0])
    else:
        raise ValueError("bias must be 'minus' or 'plus'")
    return out if np.ndim(out) else float(out)


class _Walls:
    """Per-node Dirichlet classification of the four walls at one time.

    A wall node is Dirichlet when the characteristic of the *backward* solve
    enters the domain there, i.e. where the forward velocity points out.
    """

    def __init__(self, u: np.ndarray, v: np.ndarray):
        tol = TANGENTIAL_TOL * max(float(np.max(np.abs(u))), float(np.max(np.abs(v))), 1e-300)
        self.left = u[:, 0] < -tol
        self.right = u[:, -1] > tol
        self.bottom = v[0, :] < -tol
        self.top = v[-1, :] > tol

    def impose(self, psi: np.ndarray, X: np.ndarray, Y: np.ndarray):
        """Write identity labels onto Dirichlet wall nodes (in place)."""
        for sl, mask in (((slice(None), 0), self.left), ((slice(None), -1), self.right),
                         ((0, slice(None)), self.bottom), ((-1, slice(None)), self.top)):
            if mask.any():
                psi[0][sl][mask] = X[sl][mask]
                psi[1][sl][mask] = Y[sl][mask]


def _pad_x(psi: np.ndarray, walls: _Walls, grid: Grid2D, Y: np.ndarray) -> np.ndarray:
    ny, nx = grid.shape
    P = np.empty((2, ny, nx + 6))
    P[:, :, 3:-3] = psi
    off = np.arange(1, 4) * grid.dx
    # Neumann: constant extension of the wall value
    P[:, :, :3] = psi[:, :, :1]
    P[:, :, -3:] = psi[:, :, -1:]
    m = walls.left
    if m.any():
        P[0, m, :3] = grid.x_min - off[::-1]
        P[1, m, :3] = Y[m, :1]
    m = walls.right
    if m.any():
        P[0, m, -3:] = grid.x_max + off
        P[1, m, -3:] = Y[m, -1:]
    return P


def _pad_y(psi: np.ndarray, walls: _Walls, grid: Grid2D, X: np.ndarray) -> np.ndarray:
    ny, nx = grid.shape
    P = np.empty((2, ny + 6, nx))
    P[:, 3:-3, :] = psi
    off = (np.arange(1, 4) * grid.dy)[:, None]
    P[:, :3, :] = psi[:, :1, :]
    P[:, -3:, :] = psi[:, -1:, :]
    m = walls.bottom
    if m.any():
        P[0, :3, m] = X[:1, m].T
        P[1, :3, m] = (grid.y_min - off[::-1]).T
    m = walls.top
    if m.any():
        P[0, -3:, m] = X[-1:, m].T
        P[1, -3:, m] = (grid.y_max + off).T
    return P


def _upwind(P: np.ndarray, vel: np.ndarray, h: float, axis: int, n: int) -> np.ndarray:
    """Upwinded WENO5 derivative along ``axis`` for the backward solve.

    The backward update transports with ``-vel``, so positive ``vel`` takes
    the right-biased derivative and the rest the left-biased one.
    """
    d = np.diff(P, axis=axis) / h
    sl = [slice(None)] * d.ndim
    parts = []
    for k in range(6):
        sl[axis] = slice(k, k + n)
        parts.append(d[tuple(sl)])
    return _weno5_upwind(vel > 0, *parts)


def transport_rate(psi: np.ndarray, u: np.ndarray, v: np.ndarray, walls: _Walls,
                   grid: Grid2D, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``u . grad(psi)`` for both label components, shape ``(2, ny, nx)``."""
    ny, nx = grid.shape
    dx_ = _upwind(_pad_x(psi, walls, grid, Y), u, grid.dx, axis=2, n=nx)
    dy_ = _upwind(_pad_y(psi, walls, grid, X), v, grid.dy, axis=1, n=ny)
    return u * dx_ + v * dy_


def apply_boundary(component: ScalarField2D, model: VelocityModel, grid: Grid2D, t: float,
                   label: int) -> tuple[np.ndarray, np.ndarray]:
    """Impose the wall conditions on one label component at time ``t``.

    Dirichlet wall nodes are overwritten (in place) with their own coordinate
    ``label`` (0 for x, 1 for y). Returns the ghost-padded arrays used by the
    x- and y-direction WENO stencils (three ghost layers per side): linear
    extension of the identity labels on Dirichlet walls and constant
    extension elsewhere.
    """
    u, v = model.sample_grid(grid, t)
    walls = _Walls(u, v)
    X, Y = grid.mesh()
    psi = np.stack([X, Y]).astype(float)
    psi[label] = component.values
    walls.impose(psi, X, Y)
    component.values[...] = psi[label]
    return _pad_x(psi, walls, grid, Y)[label], _pad_y(psi, walls, grid, X)[label]


def speed_bound(model: VelocityModel, grid: Grid2D, times) -> tuple[float, float]:
    um = vm = 0.0
    for t in times:
        u, v = model.sample_grid(grid, t)
        um = max(um, float(np.max(np.abs(u))))
        vm = max(vm, float(np.max(np.abs(v))))
    return um, vm


def required_substeps(model: VelocityModel, grid: Grid2D, t_lo: float, t_hi: float,
                      cfl: float = DEFAULT_CFL) -> int:
    """Minimal number of equal substeps keeping ``[t_lo, t_hi]`` CFL-stable."""
    um, vm = speed_bound(model, grid, (t_hi, 0.5 * (t_lo + t_hi), t_lo))
    try:
        dt = cfl_timestep(um, vm, grid, cfl)
    except UnboundedTimestep:
        return 1
    return max(1, math.ceil((t_hi - t_lo) / dt * (1 - 1e-12)))


def identity_labels(grid: Grid2D) -> np.ndarray:
    X, Y = grid.mesh()
    return np.stack([X, Y]).astype(float)


def solve_backward(model: VelocityModel, grid: Grid2D, t_lo: float, t_hi: float,
                   scheme: SubstepScheme, n_sub: int, psi: np.ndarray | None = None) -> np.ndarray:
    """March labels from ``t_hi`` down to ``t_lo`` in ``n_sub`` equal substeps.

    ``psi`` (shape ``(2, ny, nx)``) is the terminal data at ``t_hi``; the
    identity labels by default. Returns the labels at ``t_lo``.
    """
    scheme = SubstepScheme(scheme)
    X, Y = grid.mesh()
    psi = identity_labels(grid) if psi is None else np.array(psi, dtype=float)
    h = (t_hi - t_lo) / n_sub
    ua, va = model.sample_grid(grid, t_hi)
    walls_a = _Walls(ua, va)
    for s in range(n_sub):
        tb = t_lo if s == n_sub - 1 else t_hi - (s + 1) * h
        walls_a.impose(psi, X, Y)
        rate = transport_rate(psi, ua, va, walls_a, grid, X, Y)
        ub, vb = model.sample_grid(grid, tb)
        walls_b = _Walls(ub, vb)
        if scheme is SubstepScheme.EULER1:
            psi = psi + h * rate
        else:
            pred = psi + h * rate
            walls_b.impose(pred, X, Y)
            rate2 = transport_rate(pred, ub, vb, walls_b, grid, X, Y)
            psi = 0.5 * ((pred + h * rate2) + psi)
        walls_b.impose(psi, X, Y)
        ua, va, walls_a = ub, vb, walls_b
    return psi


def substep_map(model: VelocityModel, grid: Grid2D, t_lo: float, t_hi: float,
                scheme: SubstepScheme | str = SubstepScheme.TVDRK2, cfl: float = DEFAULT_CFL,
                subdivide: bool = False) -> FlowMap2D:
    """One-step forward flow map ``Phi_{t_lo}^{t_hi}`` on ``grid``.

    With ``subdivide=False`` an interval longer than the CFL bound is refused
    with :class:`CflViolation` carrying the required substep count; with
    ``subdivide=True`` the interval is split into that many equal substeps.
    """
    if not t_hi > t_lo:
        raise ValueError(f"t_hi={t_hi} must exceed t_lo={t_lo}")
    n_sub = required_substeps(model, grid, t_lo, t_hi, cfl)
    if n_sub > 1 and not subdivide:
        raise CflViolation(
            f"interval [{t_lo}, {t_hi}] exceeds the CFL bound; needs {n_sub} substeps", n_sub)
    psi = solve_backward(model, grid, t_lo, t_hi, SubstepScheme(scheme), n_sub)
    return FlowMap2D(grid, psi[0], psi[1])
