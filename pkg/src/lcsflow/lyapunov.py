"""Cauchy-Green stretching, FTLE, separation envelopes and ISLE fields."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ParameterError
from .fields import FlowMap2D, FtleField, IsleField, LambdaField
from .flowmap import rk4_step
from .grid import Grid2D, TimeAxis
from .velocity import VelocityModel

LAMBDA_FLOOR = 1e-14


def deformation_gradient(flowmap: FlowMap2D):
    """``(dphi/dx, dphi/dy, dpsi/dx, dpsi/dy)``.

    Central differences inside, second-order one-sided differences on the
    walls.
    """
    g = flowmap.grid
    if g.nx < 3 or g.ny < 3:
        raise ConfigError("deformation gradient needs at least 3 points per axis")
    dphi_dy, dphi_dx = np.gradient(flowmap.phi, g.dy, g.dx, edge_order=2)
    dpsi_dy, dpsi_dx = np.gradient(flowmap.psi, g.dy, g.dx, edge_order=2)
    return dphi_dx, dphi_dy, dpsi_dx, dpsi_dy


def cauchy_green_lambda(flowmap: FlowMap2D) -> LambdaField:
    """Largest eigenvalue of ``C = F^T F`` at every node, floored at 1e-14."""
    a11, a12, a21, a22 = deformation_gradient(flowmap)
    c11 = a11 * a11 + a21 * a21
    c12 = a11 * a12 + a21 * a22
    c22 = a12 * a12 + a22 * a22
    half_tr = 0.5 * (c11 + c22)
    # written so the identity gives exactly 1
    lam = half_tr + np.hypot(0.5 * (c11 - c22), c12)
    return LambdaField(flowmap.grid, np.maximum(lam, LAMBDA_FLOOR))


def ftle(lam: LambdaField, t: float) -> FtleField:
    """``ln(sqrt(lambda)) / |t|``; negative values (compression) are kept."""
    if t == 0:
        raise ParameterError("FTLE needs a non-zero integration time")
    return FtleField(lam.grid, 0.5 * np.log(lam.values) / abs(t), t=t)


class SeparationEnvelope:
    """Running maximum of ``sqrt(lambda)`` over the checkpoints of a time axis.

    ``frames[n]`` is the envelope at ``t_n``; ``frames[0]`` is identically 0
    and frames are non-decreasing in ``n`` at every node.
    """

    def __init__(self, grid: Grid2D, axis: TimeAxis, frames: Optional[np.ndarray] = None):
        self.grid = grid
        self.axis = axis
        shape = (axis.n_steps + 1,) + grid.shape
        if frames is None:
            self.frames = np.zeros(shape)
            self.filled = 0
        else:
            frames = np.asarray(frames, dtype=float)
            if frames.shape != shape:
                raise ConfigError(f"envelope frames have shape {frames.shape}, expected {shape}")
            self.frames = frames
            self.filled = axis.n_steps

    @property
    def complete(self) -> bool:
        return self.filled == self.axis.n_steps

    def update(self, n: int, lam: LambdaField):
        if n != self.filled + 1:
            raise ParameterError(f"envelope update {n} out of order (last stored {self.filled})")
        np.maximum(np.sqrt(lam.values), self.frames[n - 1], out=self.frames[n])
        self.filled = n

    def __call__(self, n: int, flowmap: FlowMap2D):
        """Observer hook for :func:`forward_flow_run`."""
        self.update(n, cauchy_green_lambda(flowmap))


def update_envelope(envelope: SeparationEnvelope, n: int, lam: LambdaField):
    envelope.update(n, lam)


def _check_r(r: float):
    if not r > 1:
        raise ParameterError(f"separation factor must exceed 1, got {r}")


def crossing_times(envelope: SeparationEnvelope, r: float) -> np.ndarray:
    """Earliest time the envelope reaches ``r`` at every node (NaN if never).

    Linear interpolation inside the first bracket ``s_n <= r <= s_{n+1}``.
    """
    _check_r(r)
    S = envelope.frames[: envelope.filled + 1]
    t = envelope.axis.times[: envelope.filled + 1]
    reached = S >= r
    has = reached.any(axis=0)
    k = np.argmax(reached, axis=0)  # first index with s >= r; never 0 since s_0 = 0
    k = np.where(has, k, 1)
    s_hi = np.take_along_axis(S, k[None], axis=0)[0]
    s_lo = np.take_along_axis(S, (k - 1)[None], axis=0)[0]
    t_lo = t[k - 1]
    dt = t[k] - t_lo
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(s_hi > s_lo, (r - s_lo) / (s_hi - s_lo), 0.0)
    tau = t_lo + frac * dt
    return np.where(has, tau, np.nan)


def crossing_time(envelope: SeparationEnvelope, index: tuple[int, int], r: float) -> Optional[float]:
    """Crossing time at grid index ``(i, j)``; ``None`` when never reached."""
    _check_r(r)
    i, j = index
    s = envelope.frames[: envelope.filled + 1, j, i]
    t = envelope.axis.times
    hits = np.nonzero(s >= r)[0]
    if hits.size == 0:
        return None
    k = int(hits[0])
    if s[k] == s[k - 1]:
        return float(t[k - 1])
    return float(t[k - 1] + (r - s[k - 1]) / (s[k] - s[k - 1]) * (t[k] - t[k - 1]))


def isle(envelope: SeparationEnvelope, r: float) -> IsleField:
    """``ln r / |tau_r|`` where the envelope reaches ``r``, and 0 elsewhere."""
    tau = crossing_times(envelope, r)
    gamma = np.zeros_like(tau)
    ok = ~np.isnan(tau)
    gamma[ok] = math.log(r) / np.abs(tau[ok] - envelope.axis.t0)
    return IsleField(envelope.grid, r, gamma, tau)


@dataclass
class FsleResult:
    gamma: Optional[float]
    tau: Optional[float]
    diagnostic: str = ""


def fsle_neighbor_oracle(model: VelocityModel, x0, eps: float, r: float, dt_sub: float,
                         t0: float = 0.0, horizon: float = 10.0) -> FsleResult:
    """Finite-size exponent from ``x0`` and its four axis neighbours at distance ``eps``.

    The target separation is ``r * eps``; the first time any neighbour's
    distance from ``x0`` reaches it gives ``tau`` and ``gamma = ln r / tau``.
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    _check_r(r)
    if not dt_sub > 0:
        raise ParameterError("dt_sub must be positive")
    cx, cy = float(x0[0]), float(x0[1])
    x = np.array([cx, cx + eps, cx - eps, cx, cx])
    y = np.array([cy, cy, cy, cy + eps, cy - eps])
    target = r * eps
    n = max(1, math.ceil(horizon / dt_sub * (1 - 1e-12)))
    h = horizon / n
    d_prev = np.hypot(x[1:] - x[0], y[1:] - y[0])
    with np.errstate(all="ignore"):
        for s in range(n):
            x, y = rk4_step(model, x, y, t0 + s * h, h)
            if not (np.isfinite(x).all() and np.isfinite(y).all()):
                return FsleResult(None, None, f"integration failed at t={t0 + (s + 1) * h:g}")
            d = np.hypot(x[1:] - x[0], y[1:] - y[0])
            hit = d >= target
            if hit.any():
                # linear interpolation of each crossing pair inside the step
                frac = np.where(hit, (target - d_prev) / np.where(d > d_prev, d - d_prev, 1.0), np.inf)
                frac = np.clip(frac, 0.0, 1.0)
                tau = (s + float(np.min(frac[hit]))) * h
                return FsleResult(math.log(r) / tau, tau)
            d_prev = d
    return FsleResult(None, None, "separation never reached r*eps within the horizon")
