"""Command implementations shared by the HTTP service and the CLI.

Each ``cmd_*`` takes a validated request model, writes its files and returns
a JSON-ready summary dict. Errors are raised as :class:`LcsError`
subclasses, whose ``exit_code`` the CLI passes through.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from typing import Optional

import numpy as np

from .errors import ConfigError, FormatError, LcsError, ParameterError, SolverError
from .fields import FlowMap2D, FtleField, LambdaField, relative_l2
from .flowmap import (forward_flow_run, lagrangian_flow_map, lagrangian_trace, legacy_checkpoint_maps,
                      staying_mask)
from .grid import Grid2D, TimeAxis, build_grid, cfl_timestep, grid_from_spacing
from .liouville import SubstepScheme, speed_bound
from .lyapunov import SeparationEnvelope, cauchy_green_lambda, ftle, isle
from .ridge import detect_ridges, ridge_min, suggest_separation_factor, verify_theorem2
from .schemas import (BenchRequest, ConvergenceRequest, FtleRequest, IsleRequest, RidgesRequest,
                      RunConfig, TraceRequest)
from .store import (FIELD_MAGIC, VOLUME_MAGIC, load_field, load_volume, save_field, save_pgm,
                    save_ridges, save_text, save_volume)
from .velocity import TimeRangeError, VelocityModel, default_domain, parse_model

log = logging.getLogger(__name__)

SUMMARY_NAME = "summary.json"


def _write_summary(out_dir: str, name: str, summary: dict) -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, default=float)
    return path


def _ensure_dir(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create output directory {path}: {exc}") from exc


def resolve(config: RunConfig) -> tuple[VelocityModel, Grid2D, TimeAxis]:
    """Build model, grid and time axis, checking every precondition before any compute."""
    model = parse_model(config.model, config.params)
    extents = tuple(config.extents) if config.extents else default_domain(model)
    if config.nx is not None:
        nx = config.nx
        if config.ny is not None:
            ny = config.ny
        else:
            ny = round((extents[3] - extents[2]) / (extents[1] - extents[0]) * (nx - 1)) + 1
        grid = build_grid(extents, nx, ny)
    else:
        spacing = config.spacing
        if spacing is None:
            spacing = (extents[1] - extents[0]) / 256
        grid = grid_from_spacing(extents, spacing)
    axis = TimeAxis(config.t0, config.T, config.checkpoints)
    lo, hi = model.time_range()
    if axis.t0 < lo or axis.T > hi:
        raise TimeRangeError(f"run [{axis.t0}, {axis.T}] outside the model's data range [{lo}, {hi}]")
    return model, grid, axis


def cmd_simulate(config: RunConfig) -> dict:
    """Forward run with the envelope observer; writes the volume and the final map."""
    model, grid, axis = resolve(config)
    _ensure_dir(config.output)
    env = SeparationEnvelope(grid, axis)
    dumps = []

    def observer(n, fmap):
        env(n, fmap)
        if config.keep_every and (n % config.keep_every == 0 or n == axis.n_steps):
            path = os.path.join(config.output, f"map_{n:05d}.fld")
            save_field(path, fmap, t=axis.time(n) - axis.t0)
            dumps.append(path)

    start = time.perf_counter()
    rec = forward_flow_run(model, grid, axis, config.scheme, observer, config.cfl,
                           method=config.composition)
    elapsed = time.perf_counter() - start
    vol = os.path.join(config.output, "envelope.vol")
    final = os.path.join(config.output, "flowmap_final.fld")
    save_volume(vol, env)
    save_field(final, rec.final, t=axis.T - axis.t0)
    summary = {
        "command": "simulate",
        "config": config.model_dump(),
        "grid": grid.to_dict(),
        "axis": {"t0": axis.t0, "T": axis.T, "N": axis.n_steps},
        "volume": vol,
        "flowmap": final,
        "map_dumps": dumps,
        "clamp_counts": rec.clamp_counts,
        "clamp_total": int(sum(rec.clamp_counts)),
        "substeps": rec.substeps,
        "checkpoint_seconds": rec.wall_times,
        "wall_seconds": elapsed,
        "envelope_max": float(env.frames[-1].max()),
    }
    summary["summary"] = _write_summary(config.output, SUMMARY_NAME, summary)
    return summary


def _sniff(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read(8)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def _write_scalar(out_dir: str, stem: str, grid: Grid2D, values: np.ndarray, t: float = 0.0) -> dict:
    field = FtleField(grid, values, t=t) if np.isfinite(values).all() else None
    txt = os.path.join(out_dir, stem + ".txt")
    pgm = os.path.join(out_dir, stem + ".pgm")
    save_text(txt, values)
    finite = np.where(np.isfinite(values), values, 0.0)
    lo, hi = save_pgm(pgm, finite)
    out = {"text": txt, "image": pgm, "min": lo, "max": hi}
    if field is not None:
        fld = os.path.join(out_dir, stem + ".fld")
        save_field(fld, field, t=t)
        out["field"] = fld
    return out


def cmd_ftle(req: FtleRequest) -> dict:
    """FTLE from a flow-map file, or from a volume (``ln s_n / t_n`` of the envelope)."""
    magic = _sniff(req.input)
    _ensure_dir(req.output)
    if magic == VOLUME_MAGIC:
        env = load_volume(req.input)
        n = env.axis.n_steps if req.checkpoint is None else req.checkpoint
        if not 1 <= n <= env.axis.n_steps:
            raise ParameterError(f"checkpoint {n} outside 1..{env.axis.n_steps}")
        t = req.t if req.t is not None else env.axis.time(n) - env.axis.t0
        lam = LambdaField(env.grid, np.maximum(env.frames[n] ** 2, 1e-14))
        source = "envelope"
        grid = env.grid
    elif magic == FIELD_MAGIC:
        stored = load_field(req.input)
        if stored.data.shape[0] != 2:
            raise FormatError(f"{req.input}: expected a flow map (2 components)")
        fmap = FlowMap2D(stored.grid, stored.data[0], stored.data[1])
        t = req.t if req.t is not None else stored.t
        lam = cauchy_green_lambda(fmap)
        source = "flowmap"
        grid = stored.grid
    else:
        raise FormatError(f"{req.input}: unrecognised file (magic {magic!r})", offset=0)
    sigma = ftle(lam, t)
    shown = sigma.display(req.clamp_negative_ftle) if req.clamp_negative_ftle else sigma.values
    files = _write_scalar(req.output, "ftle", grid, shown, t)
    summary = {"command": "ftle", "input": req.input, "source": source, "t": t,
               "clamped_negative": req.clamp_negative_ftle,
               "negative_nodes": int(np.count_nonzero(sigma.values < 0)), **files}
    summary["summary"] = _write_summary(req.output, "ftle_summary.json", summary)
    return summary


def _r_tag(r: float) -> str:
    return f"{r:g}".replace(".", "p")


_volume_cache: dict = {}


def cached_volume(path: str) -> SeparationEnvelope:
    """Load a volume once per (path, size, mtime); repeated ISLE queries reuse it."""
    try:
        st = os.stat(path)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    key = (os.path.abspath(path), st.st_size, st.st_mtime_ns)
    env = _volume_cache.get(key)
    if env is None:
        env = load_volume(path)
        _volume_cache.clear()
        _volume_cache[key] = env
    return env


def cmd_isle(req: IsleRequest) -> dict:
    """One ISLE field (and its crossing-time field) per ``r`` from a single volume load."""
    env = cached_volume(req.volume)
    _ensure_dir(req.output)
    peak = float(env.frames[env.filled].max())
    fields, rejected, warnings = [], [], []
    for r in req.r:
        try:
            fld = isle(env, r)
        except ParameterError as exc:
            rejected.append({"r": r, "error": str(exc)})
            continue
        tag = _r_tag(r)
        gfiles = _write_scalar(req.output, f"isle_r{tag}", env.grid, fld.gamma)
        tau_txt = os.path.join(req.output, f"tau_r{tag}.txt")
        save_text(tau_txt, fld.tau)
        support = int(np.count_nonzero(fld.gamma > 0))
        if support == 0:
            warnings.append(f"r={r:g} exceeds the envelope maximum {peak:g}; field is all zero")
        fields.append({"r": r, "support": support, "tau": tau_txt, **gfiles})
    summary = {"command": "isle", "volume": req.volume, "envelope_max": peak, "fields": fields,
               "rejected": rejected, "warnings": warnings}
    summary["summary"] = _write_summary(req.output, "isle_summary.json", summary)
    return summary


def _load_scalar(path: str, t: Optional[float]):
    magic = _sniff(path)
    if magic == VOLUME_MAGIC:
        env = load_volume(path)
        tt = env.axis.T - env.axis.t0 if t is None else t
        lam = LambdaField(env.grid, np.maximum(env.frames[-1] ** 2, 1e-14))
        return ftle(lam, tt), env
    stored = load_field(path)
    if stored.data.shape[0] == 2:
        fmap = FlowMap2D(stored.grid, stored.data[0], stored.data[1])
        return ftle(cauchy_green_lambda(fmap), stored.t if t is None else t), None
    return FtleField(stored.grid, stored.data[0], t=stored.t if t is None else t), None


def cmd_ridges(req: RidgesRequest) -> dict:
    """Ridge nodes of a scalar field (flow maps are turned into FTLE first)."""
    sigma, env = _load_scalar(req.input, req.t)
    _ensure_dir(req.output)
    ridges = detect_ridges(sigma, req.percentile, smoothing=req.smoothing, source="ftle")
    comps = ridges.components()
    main = comps[0] if comps else ridges
    path = os.path.join(req.output, "ridges.txt")
    save_ridges(path, ridges)
    main_path = os.path.join(req.output, "ridge_main.txt")
    save_ridges(main_path, main)
    summary = {"command": "ridges", "input": req.input, "percentile": req.percentile,
               "smoothing": req.smoothing, "threshold": ridges.threshold, "count": len(ridges),
               "components": [len(c) for c in comps], "points": path, "main_ridge": main_path,
               "main_min": ridge_min(sigma, main) if len(main) else None}
    if req.rate is not None and len(main):
        sug = suggest_separation_factor(sigma, main, sigma.t, req.rate)
        summary["suggested_r"] = sug.r
        if sug.warning:
            summary["warning"] = sug.warning
    if req.volume or env is not None:
        if env is None:
            env = load_volume(req.volume)
        if env.grid != sigma.grid:
            raise ConfigError("volume and field grids differ")
        if req.r is not None and len(main):
            rho = req.rho_cells * min(sigma.grid.dx, sigma.grid.dy)
            rep = verify_theorem2(env, main, req.r, rho)
            summary["tube"] = {"r": req.r, "rho": rho, "fraction": rep.fraction,
                               "precondition_ok": rep.precondition_ok, "m": rep.m, "note": rep.note}
    summary["summary"] = _write_summary(req.output, "ridges_summary.json", summary)
    return summary


MACHINE_LEVEL = 1e-10


def fit_slope(h, err) -> Optional[float]:
    """Log-log slope; ``None`` when every error is at machine level or one is exactly 0."""
    h, err = np.asarray(h, float), np.asarray(err, float)
    if np.all(err <= MACHINE_LEVEL) or np.any(err <= 0):
        return None
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def convergence_study(model: VelocityModel, extents, spacings, T: float, checkpoints: int,
                      dt_ref: float, scheme=SubstepScheme.TVDRK2, t0: float = 0.0,
                      interior_cells: Optional[int] = None) -> dict:
    """Flow-map errors against RK4 arrivals over a list of grid spacings.

    The reference stops particles where they leave the box. With
    ``interior_cells=k`` the errors are taken only over seeds whose path
    stays inside and that lie at least ``k`` cells from any seed that leaves;
    by default every node counts.
    """
    spacings = sorted(spacings, reverse=True)
    if len(spacings) < 3:
        raise ConfigError("a convergence study needs at least three grids")
    grids = [grid_from_spacing(extents, h) for h in spacings]
    finest = grids[-1]
    strides = []
    for g in grids:
        sx = (finest.nx - 1) / (g.nx - 1)
        sy = (finest.ny - 1) / (g.ny - 1)
        strides.append((round(sx), round(sy)) if sx == round(sx) and sy == round(sy) else None)
    ref_start = time.perf_counter()
    ref = None
    if all(s is not None for s in strides):
        phi, psi, failed = lagrangian_flow_map(model, finest, t0, t0 + T, dt_ref, freeze=True)
        if failed.any():
            raise SolverError(f"reference trace failed at {int(failed.sum())} seeds")
        ref = (phi, psi, _stays(model, finest, t0, T, dt_ref, phi, psi, interior_cells))
    ref_seconds = time.perf_counter() - ref_start
    rows = []
    axis = TimeAxis(t0, t0 + T, checkpoints)
    for g, stride in zip(grids, strides):
        if ref is not None:
            sx, sy = stride
            rphi, rpsi = ref[0][::sy, ::sx], ref[1][::sy, ::sx]
            stay = None if ref[2] is None else ref[2][::sy, ::sx]
        else:
            rphi, rpsi, failed = lagrangian_flow_map(model, g, t0, t0 + T, dt_ref, freeze=True)
            if failed.any():
                raise SolverError(f"reference trace failed at {int(failed.sum())} seeds")
            stay = _stays(model, g, t0, T, dt_ref, rphi, rpsi, interior_cells)
        mask = None if stay is None else staying_mask(stay, interior_cells)
        rmap = FlowMap2D(g, rphi, rpsi)
        start = time.perf_counter()
        rec = forward_flow_run(model, g, axis, scheme)
        rows.append({"dx": g.dx, "nx": g.nx, "ny": g.ny,
                     "error_phi": relative_l2(rec.final, rmap, mask, component="phi"),
                     "error_psi": relative_l2(rec.final, rmap, mask, component="psi"),
                     "nodes": int(g.nx * g.ny if mask is None else mask.sum()),
                     "seconds": time.perf_counter() - start})
    h = [row["dx"] for row in rows]
    slopes = {c: fit_slope(h, [row[f"error_{c}"] for row in rows]) for c in ("phi", "psi")}
    notes = []
    for c, s in slopes.items():
        if s is None:
            errs = [row[f"error_{c}"] for row in rows]
            why = "errors at machine level" if max(errs) <= MACHINE_LEVEL else "an error is exactly zero"
            notes.append(f"slope fit for {c} skipped: {why}")
    return {"rows": rows, "slope_phi": slopes["phi"], "slope_psi": slopes["psi"], "notes": notes,
            "reference_seconds": ref_seconds, "dt_ref": dt_ref, "interior_cells": interior_cells}


def _stays(model, grid, t0, T, dt_ref, phi_frozen, psi_frozen, interior_cells):
    if interior_cells is None:
        return None
    phi, psi, _ = lagrangian_flow_map(model, grid, t0, t0 + T, dt_ref)
    return (phi == phi_frozen) & (psi == psi_frozen)


def cmd_convergence(req: ConvergenceRequest) -> dict:
    model = parse_model(req.model, req.params)
    extents = tuple(req.extents) if req.extents else default_domain(model)
    # the RK4 reference step shrinks with the finest grid (never above the requested dt)
    dt_ref = min(req.dt_ref, req.dt_ref * min(req.spacings) * 128) if req.scale_dt else req.dt_ref
    res = convergence_study(model, extents, req.spacings, req.T, req.checkpoints, dt_ref,
                            req.scheme, req.t0, req.interior_cells)
    _ensure_dir(req.output)
    table = os.path.join(req.output, "convergence.txt")
    with open(table, "w") as fh:
        fh.write("# dx error_phi error_psi\n")
        for row in res["rows"]:
            fh.write(f"{row['dx']:.17g} {row['error_phi']:.17g} {row['error_psi']:.17g}\n")
        fh.write(f"# slope_phi {res['slope_phi']}\n# slope_psi {res['slope_psi']}\n")
    summary = {"command": "convergence", "model": req.model, "T": req.T, "table": table, **res}
    summary["summary"] = _write_summary(req.output, "convergence_summary.json", summary)
    return summary


def bench_checkpoints(model: VelocityModel, grid: Grid2D, t0: float, T: float, cfl: float) -> int:
    """Checkpoint count ``M`` whose interval meets the CFL bound with a single substep (so ``M`` grows like N)."""
    umax, vmax = speed_bound(model, grid, [float(t) for t in np.linspace(t0, T, 9)])
    return max(1, math.ceil((T - t0) / cfl_timestep(umax, vmax, grid, cfl) * (1 - 1e-12)))


def cmd_bench(req: BenchRequest) -> dict:
    """Wall-clock of the envelope run per grid size ``N`` (points along x)."""
    if len(req.sizes) < 1:
        raise ConfigError("bench needs at least one size")
    model = parse_model(req.model, req.params)
    extents = tuple(req.extents) if req.extents else default_domain(model)
    rows = []
    for n in req.sizes:
        ny = round((extents[3] - extents[2]) / (extents[1] - extents[0]) * (n - 1)) + 1
        grid = build_grid(extents, n, ny)
        m = bench_checkpoints(model, grid, req.t0, req.T, req.cfl)
        axis = TimeAxis(req.t0, req.T, m)
        env = SeparationEnvelope(grid, axis)
        start = time.perf_counter()
        if req.legacy:
            legacy_checkpoint_maps(model, grid, axis, req.scheme, env, req.cfl)
        else:
            forward_flow_run(model, grid, axis, req.scheme, env, req.cfl)
        rows.append({"N": n, "ny": ny, "M": m, "seconds": time.perf_counter() - start})
    ratios = [rows[k + 1]["seconds"] / rows[k]["seconds"] for k in range(len(rows) - 1)]
    size_ratios = [rows[k + 1]["N"] / rows[k]["N"] for k in range(len(rows) - 1)]
    orders = [math.log(r) / math.log(s) for r, s in zip(ratios, size_ratios)]
    summary = {"command": "bench", "model": req.model, "legacy": req.legacy, "rows": rows,
               "ratios": ratios, "observed_orders": orders}
    if req.output:
        _ensure_dir(req.output)
        summary["summary"] = _write_summary(req.output, "bench_summary.json", summary)
    return summary


def cmd_trace(req: TraceRequest) -> dict:
    model = parse_model(req.model, req.params)
    arrivals, failed = lagrangian_trace(model, req.seeds, req.t0, req.t1, req.dt_sub)
    summary = {"command": "trace", "model": req.model, "t0": req.t0, "t1": req.t1,
               "dt_sub": req.dt_sub, "arrivals": arrivals.tolist(), "failed": failed.tolist()}
    if req.output:
        _ensure_dir(req.output)
        path = os.path.join(req.output, "trace.txt")
        with open(path, "w") as fh:
            fh.write("# x0 y0 x1 y1 failed\n")
            for (a, b), (c, d), f in zip(req.seeds, arrivals, failed):
                fh.write(f"{a:.17g} {b:.17g} {c:.17g} {d:.17g} {int(f)}\n")
        summary["points"] = path
    return summary
