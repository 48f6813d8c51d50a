"""Discrete ridge (generalised maximum) detection and checks linking FTLE, lambda and ISLE ridges."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError
from .fields import FtleField, LambdaField, ScalarField2D, bilinear, interior_mask
from .grid import Grid2D
from .lyapunov import SeparationEnvelope, isle

DEFAULT_PERCENTILE = 90.0
BOUNDARY_BAND = 3


@dataclass
class RidgeSet:
    grid: Grid2D
    i: np.ndarray
    j: np.ndarray
    values: np.ndarray
    normals: np.ndarray  # (k, 2) unit vectors in physical coordinates
    source: str = ""
    threshold: float = float("nan")
    smoothing: int = 1

    def __len__(self):
        return int(self.i.size)

    @property
    def points(self) -> set[tuple[int, int]]:
        return set(zip(self.i.tolist(), self.j.tolist()))

    def coordinates(self) -> np.ndarray:
        g = self.grid
        return np.column_stack([g.x_min + self.i * g.dx, g.y_min + self.j * g.dy])

    def subset(self, keep) -> "RidgeSet":
        return RidgeSet(self.grid, self.i[keep], self.j[keep], self.values[keep],
                        self.normals[keep], self.source, self.threshold, self.smoothing)

    def components(self) -> list["RidgeSet"]:
        """8-connected components, largest first."""
        lookup = {p: n for n, p in enumerate(zip(self.i.tolist(), self.j.tolist()))}
        seen = np.zeros(len(self), dtype=bool)
        comps = []
        for start in range(len(self)):
            if seen[start]:
                continue
            seen[start] = True
            queue = deque([start])
            members = []
            while queue:
                n = queue.popleft()
                members.append(n)
                ci, cj = int(self.i[n]), int(self.j[n])
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        m = lookup.get((ci + di, cj + dj))
                        if m is not None and not seen[m]:
                            seen[m] = True
                            queue.append(m)
            comps.append(np.array(sorted(members)))
        comps.sort(key=len, reverse=True)
        return [self.subset(c) for c in comps]

    def largest(self) -> "RidgeSet":
        comps = self.components()
        if not comps:
            return self
        return comps[0]


def rank_normalize(values: np.ndarray) -> np.ndarray:
    """Dense rank scaled to [0, 1]; unchanged by any strictly increasing transform."""
    uniq, inverse = np.unique(values, return_inverse=True)
    if uniq.size < 2:
        return np.zeros(values.shape)
    return inverse.reshape(values.shape) / (uniq.size - 1)


def box_smooth(values: np.ndarray, passes: int = 1) -> np.ndarray:
    out = values
    for _ in range(passes):
        p = np.pad(out, 1, mode="edge")
        acc = np.zeros_like(out)
        for a in range(3):
            for b in range(3):
                acc += p[a:a + out.shape[0], b:b + out.shape[1]]
        out = acc / 9.0
    return out


def detect_ridges(field: ScalarField2D, percentile: float = DEFAULT_PERCENTILE,
                  smoothing: int = 1, band: int = BOUNDARY_BAND, source: str = "",
                  thin: bool = True) -> RidgeSet:
    """Grid nodes that are generalised maxima of ``field``.

    A node qualifies when its value is at or above the ``percentile``
    order statistic, the smaller Hessian eigenvalue is negative, and the
    derivative along that eigenvector changes sign from + to - across the
    node (sampled half a cell either side). The curvature test runs on the
    rank-normalised, box-smoothed field, so the detected set depends only on
    the ordering of the values. Nodes within ``band`` cells of a wall are
    skipped.
    """
    if not 0 < percentile < 100:
        raise ParameterError("percentile must lie strictly between 0 and 100")
    g = field.grid
    f = np.asarray(field.values, dtype=float)
    if not np.isfinite(f).all():
        raise ConfigError("ridge detection needs a finite field")
    threshold = float(np.percentile(f, percentile, method="lower"))
    empty = RidgeSet(g, np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros((0, 2)),
                     source, threshold, smoothing)
    ranks = rank_normalize(f)
    q = box_smooth(ranks, smoothing)
    # curvature and normal from the smoothed ranks, crest location from the raw ranks
    gy, gx = np.gradient(ranks, g.dy, g.dx)
    hxx = np.zeros_like(q)
    hyy = np.zeros_like(q)
    hxx[:, 1:-1] = (q[:, 2:] - 2 * q[:, 1:-1] + q[:, :-2]) / g.dx ** 2
    hyy[1:-1, :] = (q[2:, :] - 2 * q[1:-1, :] + q[:-2, :]) / g.dy ** 2
    hxy = np.gradient(np.gradient(q, g.dx, axis=1), g.dy, axis=0)
    half_diff = 0.5 * (hxx - hyy)
    rad = np.hypot(half_diff, hxy)
    mu_min = 0.5 * (hxx + hyy) - rad
    cand = (f >= threshold) & (mu_min < 0) & interior_mask(g, band)
    jj, ii = np.nonzero(cand)
    if ii.size == 0:
        return empty
    # eigenvector of the smaller eigenvalue: (hxy, mu - hxx) or (mu - hyy, hxy)
    a, b, d, mu = hxx[jj, ii], hxy[jj, ii], hyy[jj, ii], mu_min[jj, ii]
    n1 = np.column_stack([b, mu - a])
    n2 = np.column_stack([mu - d, b])
    use2 = np.hypot(*n2.T) > np.hypot(*n1.T)
    n = np.where(use2[:, None], n2, n1)
    norm = np.hypot(n[:, 0], n[:, 1])
    degenerate = norm == 0
    n[degenerate] = (1.0, 0.0)
    norm[degenerate] = 1.0
    n = n / norm[:, None]
    step = 0.5 * min(g.dx, g.dy)
    x = g.x_min + ii * g.dx
    y = g.y_min + jj * g.dy
    xp, yp = x + step * n[:, 0], y + step * n[:, 1]
    xm, ym = x - step * n[:, 0], y - step * n[:, 1]
    d_plus = bilinear(g, gx, xp, yp) * n[:, 0] + bilinear(g, gy, xp, yp) * n[:, 1]
    d_minus = bilinear(g, gx, xm, ym) * n[:, 0] + bilinear(g, gy, xm, ym) * n[:, 1]
    keep = (d_minus >= 0) & (d_plus <= 0) & (d_minus > d_plus)
    if thin:
        # drop shoulders: a detected node whose neighbour along the normal is a
        # higher detected node sits beside the crest, not on it
        found = np.zeros(g.shape, dtype=bool)
        found[jj[keep], ii[keep]] = True
        k = np.rint(np.arctan2(n[:, 1] / g.dy, n[:, 0] / g.dx) / (np.pi / 4)).astype(int) % 8
        di = np.array([1, 1, 0, -1, -1, -1, 0, 1])[k]
        dj = np.array([0, 1, 1, 1, 0, -1, -1, -1])[k]
        centre = f[jj, ii]
        shoulder = np.zeros_like(keep)
        for sgn in (1, -1):
            qj, qi = jj + sgn * dj, ii + sgn * di
            shoulder |= found[qj, qi] & (f[qj, qi] > centre)
        keep &= ~shoulder
    return RidgeSet(g, ii[keep], jj[keep], f[jj[keep], ii[keep]], n[keep], source,
                    threshold, smoothing)


def ridge_min(field: ScalarField2D | np.ndarray, ridges: RidgeSet) -> float:
    """Smallest ``field`` value over the ridge nodes."""
    if len(ridges) == 0:
        raise ParameterError("ridge set is empty")
    vals = field.values if isinstance(field, ScalarField2D) else np.asarray(field)
    return float(np.min(vals[ridges.j, ridges.i]))


@dataclass
class Theorem1Report:
    sigma_ridges: RidgeSet
    lambda_ridges: RidgeSet
    percentile: float
    lambda_percentile: float
    only_sigma: list = field(default_factory=list)
    only_lambda: list = field(default_factory=list)

    @property
    def identical(self) -> bool:
        return not self.only_sigma and not self.only_lambda


def verify_theorem1(sigma: FtleField, lam: LambdaField, percentile: float = DEFAULT_PERCENTILE,
                    **kwargs) -> Theorem1Report:
    """Compare the ridge sets of the FTLE and the lambda field.

    ``lambda`` is a strictly increasing function of ``sigma`` for fixed
    ``t``, so the percentile order statistic of one corresponds to the same
    percentile of the other.
    """
    if sigma.grid != lam.grid:
        raise ConfigError("fields live on different grids")
    rs = detect_ridges(sigma, percentile, source="ftle", **kwargs)
    rl = detect_ridges(lam, percentile, source="lambda", **kwargs)
    a, b = rs.points, rl.points
    return Theorem1Report(rs, rl, percentile, percentile, sorted(a - b), sorted(b - a))


@dataclass
class TubeMask:
    mask: np.ndarray
    rho: float
    ridges: RidgeSet
    mode: str = "normal"


def tube_mask(ridges: RidgeSet, rho: float, mode: str = "normal", chunk: int = 2048) -> TubeMask:
    """Grid nodes near ``ridges`` (brute force over ridge nodes).

    ``mode="normal"`` keeps a node when it is a normal offset of length at
    most ``rho`` from some ridge node, allowing half a cell diagonal of
    slack along the tangent (the discrete ridge is sampled once per cell);
    this leaves out the round caps past the ridge ends. ``mode="ball"``
    keeps every node within distance ``rho``. Both masks grow with ``rho``
    and only contain nodes within ``rho`` of the ridge.
    """
    if mode not in ("normal", "ball"):
        raise ParameterError(f"unknown tube mode {mode!r}")
    g = ridges.grid
    mask = np.zeros(g.shape, dtype=bool)
    if len(ridges):
        X, Y = g.mesh()
        pts = ridges.coordinates()
        nx_, ny_ = ridges.normals[:, 0], ridges.normals[:, 1]
        slack = 0.5 * math.hypot(g.dx, g.dy) * (1 + 1e-9)
        tol = rho * (1 + 1e-9)
        xs, ys = X.ravel(), Y.ravel()
        flat = mask.ravel()
        for start in range(0, xs.size, chunk):
            sl = slice(start, start + chunk)
            ox = xs[sl, None] - pts[None, :, 0]
            oy = ys[sl, None] - pts[None, :, 1]
            near = ox * ox + oy * oy <= tol * tol
            if mode == "normal":
                near &= np.abs(ox * ny_ - oy * nx_) <= slack
            flat[sl] = near.any(axis=1)
        mask = flat.reshape(g.shape)
    return TubeMask(mask, rho, ridges, mode)


@dataclass
class Theorem2Report:
    fraction: float
    r: float
    rho: float
    m: float
    precondition_ok: bool
    tube_size: int
    note: str = ""


def verify_theorem2(envelope: SeparationEnvelope, ridges: RidgeSet, r: float, rho: float,
                    sqrt_lambda: np.ndarray | None = None, mode: str = "normal") -> Theorem2Report:
    """Fraction of the ``rho``-tube around ``ridges`` where the ISLE for ``r`` is positive.

    ``m`` is the minimum of ``sqrt(lambda)`` at the final time over the ridge
    (the envelope's last frame is used when ``sqrt_lambda`` is not given).
    A violated precondition ``r < m`` is reported rather than raised.
    """
    if len(ridges) == 0:
        return Theorem2Report(0.0, r, rho, float("nan"), False, 0, "empty ridge set")
    field_ = envelope.frames[envelope.filled] if sqrt_lambda is None else sqrt_lambda
    m = ridge_min(field_, ridges)
    tube = tube_mask(ridges, rho, mode)
    gamma = isle(envelope, r).gamma
    n = int(tube.mask.sum())
    frac = float(np.count_nonzero(gamma[tube.mask] > 0)) / n if n else 0.0
    ok = r < m
    note = "" if ok else f"precondition violated: r={r:g} >= ridge minimum {m:g}"
    return Theorem2Report(frac, r, rho, m, ok, n, note)


@dataclass
class SeparationSuggestion:
    r: float
    rate: float
    t: float
    ridge_min_ftle: float
    warning: str = ""


def suggest_separation_factor(sigma: FtleField, ridges: RidgeSet, t: float,
                              rate: float) -> SeparationSuggestion:
    """``r = exp(rate * t)``; warns when ``rate`` is not below the ridge's minimum FTLE."""
    m = ridge_min(sigma, ridges) if len(ridges) else float("nan")
    warning = ""
    if not rate < m:
        warning = f"rate {rate:g} is not below the ridge minimum FTLE {m:g}"
    return SeparationSuggestion(math.exp(rate * t), rate, t, m, warning)
