"""Long-time forward flow maps built from one-step maps.

The on-the-fly construction walks the checkpoints ``t_0 < t_1 < ... < t_N``
forwards, builds ``Phi_{t_n}^{t_{n+1}}`` with a backward Liouville solve over
that interval only, and composes it onto the running total. The legacy
construction solves one long backward problem from ``T`` to ``t_0``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, SolverError
from .fields import FlowMap2D, bicubic, bilinear
from .grid import DEFAULT_CFL, Grid2D, TimeAxis
from .liouville import SubstepScheme, identity_labels, required_substeps, solve_backward
from .velocity import VelocityModel

log = logging.getLogger(__name__)

Observer = Callable[[int, FlowMap2D], None]


def compose(total: FlowMap2D, step: FlowMap2D, method: str = "bilinear") -> FlowMap2D:
    """``step o total``: evaluate the interpolated ``step`` map at ``total``'s arrivals.

    Bilinear interpolation is monotone and is the default; ``"bicubic"`` is
    available for experiments but can overshoot.
    """
    if total.grid != step.grid:
        raise ConfigError("cannot compose maps on different grids")
    interp = {"bilinear": bilinear, "bicubic": bicubic}.get(method)
    if interp is None:
        raise ConfigError(f"unknown interpolation {method!r}")
    g = step.grid
    X, Y = g.mesh()
    if np.array_equal(step.phi, X) and np.array_equal(step.psi, Y):
        # an identity step leaves the total unchanged; interpolation would round
        return FlowMap2D(g, total.phi.copy(), total.psi.copy())
    phi = interp(g, step.phi, total.phi, total.psi)
    psi = interp(g, step.psi, total.phi, total.psi)
    return FlowMap2D(g, phi, psi)


def phase_flow_double(flowmap: FlowMap2D) -> FlowMap2D:
    """``Phi_0^{2t} = Phi_0^t o Phi_0^t``; valid for autonomous flows only."""
    return compose(flowmap, flowmap)


@dataclass
class FlowRunRecord:
    axis: TimeAxis
    final: FlowMap2D
    maps: dict = field(default_factory=dict)  # checkpoint index -> composed map
    clamp_counts: list = field(default_factory=list)
    substeps: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)


def forward_flow_run(model: VelocityModel, grid: Grid2D, axis: TimeAxis,
                     scheme: SubstepScheme | str = SubstepScheme.TVDRK2,
                     observer: Optional[Observer] = None, cfl: float = DEFAULT_CFL,
                     keep_every: int = 0, method: str = "bilinear") -> FlowRunRecord:
    """Build ``Phi_{t_0}^{t_n}`` for every checkpoint, forwards in time.

    Velocity data is only requested for times inside the current interval,
    so frames can be streamed. ``observer(n, map)`` is called after each
    composition; ``keep_every=k`` stores every k-th composed map (and the
    last one) in the record.
    """
    scheme = SubstepScheme(scheme)
    total = FlowMap2D.identity(grid)
    rec = FlowRunRecord(axis, total)
    if keep_every:
        rec.maps[0] = total
    times = axis.times
    for n in range(axis.n_steps):
        t_lo, t_hi = float(times[n]), float(times[n + 1])
        start = time.perf_counter()
        try:
            k = required_substeps(model, grid, t_lo, t_hi, cfl)
            labels = solve_backward(model, grid, t_lo, t_hi, scheme, k)
        except SolverError as exc:
            raise SolverError(f"checkpoint {n + 1}: {exc}") from exc
        step = FlowMap2D(grid, labels[0], labels[1])
        total = compose(total, step, method)
        if not (np.isfinite(total.phi).all() and np.isfinite(total.psi).all()):
            raise SolverError(f"checkpoint {n + 1}: non-finite flow map")
        if observer is not None:
            observer(n + 1, total)
        rec.clamp_counts.append(step.clamped + total.clamped)
        rec.substeps.append(k)
        rec.wall_times.append(time.perf_counter() - start)
        if keep_every and ((n + 1) % keep_every == 0 or n + 1 == axis.n_steps):
            rec.maps[n + 1] = total
        log.debug("checkpoint %d/%d t=%.4g substeps=%d", n + 1, axis.n_steps, t_hi, k)
    rec.final = total
    return rec


def legacy_backward_run(model: VelocityModel, grid: Grid2D, axis: TimeAxis,
                        scheme: SubstepScheme | str = SubstepScheme.TVDRK2,
                        cfl: float = DEFAULT_CFL) -> FlowMap2D:
    """``Phi_{t_0}^T`` from a single backward solve starting at ``T``.

    Uses the same substeps as :func:`forward_flow_run` on ``axis`` so the two
    constructions can be compared on identical discretisations. Needs
    velocity from ``T`` backwards, i.e. all frames available up front.
    """
    scheme = SubstepScheme(scheme)
    psi = identity_labels(grid)
    times = axis.times
    for n in range(axis.n_steps - 1, -1, -1):
        t_lo, t_hi = float(times[n]), float(times[n + 1])
        k = required_substeps(model, grid, t_lo, t_hi, cfl)
        psi = solve_backward(model, grid, t_lo, t_hi, scheme, k, psi)
    return FlowMap2D(grid, psi[0], psi[1])


def legacy_checkpoint_maps(model: VelocityModel, grid: Grid2D, axis: TimeAxis,
                           scheme: SubstepScheme | str = SubstepScheme.TVDRK2,
                           observer: Optional[Observer] = None,
                           cfl: float = DEFAULT_CFL) -> FlowMap2D:
    """Every intermediate map via a fresh backward solve per checkpoint (quadratic cost)."""
    final = FlowMap2D.identity(grid)
    for n in range(1, axis.n_steps + 1):
        sub = TimeAxis(axis.t0, float(axis.times[n]), n)
        final = legacy_backward_run(model, grid, sub, scheme, cfl)
        if observer is not None:
            observer(n, final)
    return final


def rk4_step(model: VelocityModel, x, y, t: float, h: float):
    k1x, k1y = model.velocity(x, y, t)
    k2x, k2y = model.velocity(x + 0.5 * h * k1x, y + 0.5 * h * k1y, t + 0.5 * h)
    k3x, k3y = model.velocity(x + 0.5 * h * k2x, y + 0.5 * h * k2y, t + 0.5 * h)
    k4x, k4y = model.velocity(x + h * k3x, y + h * k3y, t + h)
    return (x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            y + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y))


def lagrangian_trace(model: VelocityModel, seeds, t0: float, t1: float,
                     dt_sub: float, freeze_box=None) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 integration of particle paths from ``t0`` to ``t1``.

    ``seeds`` has shape ``(k, 2)``. Returns ``(arrivals, failed)``; arrivals
    are not clamped to any domain, and seeds whose state becomes non-finite
    are frozen and flagged in ``failed``. With ``freeze_box=(x0, x1, y0, y1)``
    a particle that leaves the box is clamped onto it and stops there, which
    mimics the exit convention of the Eulerian maps on open domains.
    """
    if not dt_sub > 0:
        raise ConfigError("dt_sub must be positive")
    pts = np.array(seeds, dtype=float).reshape(-1, 2)
    x = pts[:, 0].copy()
    y = pts[:, 1].copy()
    failed = np.zeros(x.shape, dtype=bool)
    stopped = np.zeros(x.shape, dtype=bool)
    span = t1 - t0
    n = max(1, math.ceil(abs(span) / dt_sub * (1 - 1e-12))) if span else 0
    h = span / n if n else 0.0
    with np.errstate(all="ignore"):
        for s in range(n):
            nx_, ny_ = rk4_step(model, x, y, t0 + s * h, h)
            failed |= ~(np.isfinite(nx_) & np.isfinite(ny_))
            if freeze_box is not None:
                bx0, bx1, by0, by1 = freeze_box
                out = (nx_ < bx0) | (nx_ > bx1) | (ny_ < by0) | (ny_ > by1)
                nx_ = np.clip(nx_, bx0, bx1)
                ny_ = np.clip(ny_, by0, by1)
                hold = failed | stopped
                stopped |= out
            else:
                hold = failed
            x = np.where(hold, x, nx_)
            y = np.where(hold, y, ny_)
    return np.column_stack([x, y]), failed


def lagrangian_flow_map(model: VelocityModel, grid: Grid2D, t0: float, t1: float,
                        dt_sub: float, freeze: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RK4 arrivals of every grid node: ``(phi, psi, failed)``.

    Unclamped by default; ``freeze=True`` stops particles where they leave the grid box.
    """
    X, Y = grid.mesh()
    arr, failed = lagrangian_trace(model, np.column_stack([X.ravel(), Y.ravel()]), t0, t1, dt_sub,
                                   grid.extents if freeze else None)
    return (arr[:, 0].reshape(grid.shape), arr[:, 1].reshape(grid.shape),
            failed.reshape(grid.shape))


def dilate(mask: np.ndarray, cells: int) -> np.ndarray:
    """Grow a boolean mask by ``cells`` steps of 8-neighbour adjacency."""
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(cells):
        p = np.pad(out, 1, mode="edge")
        grown = out.copy()
        for dj in (0, 1, 2):
            for di in (0, 1, 2):
                grown |= p[dj:dj + out.shape[0], di:di + out.shape[1]]
        out = grown
    return out


def staying_mask(stay: np.ndarray, margin: int) -> np.ndarray:
    """Seeds that stay inside and lie at least ``margin`` cells from any that leave."""
    stay = np.asarray(stay, dtype=bool)
    return stay & ~dilate(~stay, margin)


def oracle_interior(model: VelocityModel, grid: Grid2D, t0: float, t1: float, dt_sub: float = 1e-3,
                    margin: int = 2) -> tuple[np.ndarray, FlowMap2D]:
    """Exit-frozen RK4 map and the seeds where it is a fair reference.

    A seed counts when its path never leaves the box and it lies at least
    ``margin`` cells from every seed whose path does. Across that divide the
    clamped map jumps by O(1), so a strip of width O(dx) is wrong at every
    resolution.
    """
    pf, qf, failed = lagrangian_flow_map(model, grid, t0, t1, dt_sub, freeze=True)
    pu, qu, _ = lagrangian_flow_map(model, grid, t0, t1, dt_sub)
    stay = (pf == pu) & (qf == qu) & ~failed
    return staying_mask(stay, margin), FlowMap2D(grid, pf, qf)

