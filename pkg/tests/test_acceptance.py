"""Acceptance criteria, each run at its stated tolerance.

Every check goes through the ``criterion`` fixture, so the session ends
with a PASS/FAIL line per criterion (and per part). Informational numbers
that are not criteria go through ``note``.
"""
import math
import time

import numpy as np
import pytest

from conftest import envelope_run, ftle_rel_l2
from lcsflow.commands import bench_checkpoints, convergence_study
from lcsflow.fields import FlowMap2D, interior_mask, relative_l2
from lcsflow.flowmap import forward_flow_run, lagrangian_trace, legacy_backward_run, legacy_checkpoint_maps
from lcsflow.grid import TimeAxis, build_grid
from lcsflow.lyapunov import SeparationEnvelope, cauchy_green_lambda, crossing_times, ftle, isle
from lcsflow.ridge import detect_ridges, ridge_min, verify_theorem1, verify_theorem2
from lcsflow.velocity import DoubleGyre, LinearSaddle, QuadSaddle, RigidRotation, Uniform, load_gridded, save_gridded

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


# 1 -------------------------------------------------------------------------------------

def test_c1_convergence_order(criterion):
    res = convergence_study(DoubleGyre(), (0, 2, 0, 1), [1 / 16, 1 / 32, 1 / 64, 1 / 128], 10.0, 100, 1e-3)
    errs = ", ".join(f"{r['error_phi']:.2e}/{r['error_psi']:.2e}" for r in res["rows"])
    for comp in ("phi", "psi"):
        s = res[f"slope_{comp}"]
        criterion(f"C1 {comp}", s is not None and 1.7 <= s <= 2.3,
                  f"fitted slope {s:.3f} (band [1.7, 2.3]); errors phi/psi {errs}")


# 2 -------------------------------------------------------------------------------------

def test_c2_ftle_matches_lagrangian(dg257, dg257_reference, criterion):
    sig_ref = ftle(cauchy_green_lambda(dg257_reference), 10.0)
    err = ftle_rel_l2(dg257.sigma.values, sig_ref.values)
    criterion("C2 sigma", err <= 5e-2, f"sigma relative L2 {err:.3e} (<= 5e-2)")


def test_c2_ridge_overlap(dg257, dg257_reference, criterion):
    sig_ref = ftle(cauchy_green_lambda(dg257_reference), 10.0)
    a, b = detect_ridges(dg257.sigma).points, detect_ridges(sig_ref).points
    jac = len(a & b) / len(a | b) if a | b else 1.0
    criterion("C2 ridges", jac >= 0.6, f"Jaccard {jac:.3f} over {len(a)} / {len(b)} nodes (>= 0.6)")


# 3 -------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def saddle_run():
    g = build_grid((-10, 10, -1, 1), 201, 21)
    axis = TimeAxis(0, 3, 300)
    env = SeparationEnvelope(g, axis)
    rec = forward_flow_run(LinearSaddle(), g, axis, observer=env, keep_every=100)
    return g, axis, env, rec


@pytest.mark.parametrize("t_index,t", [(100, 1.0), (200, 2.0)])
def test_c3_linear_saddle_ftle(saddle_run, t_index, t, criterion):
    g, axis, env, rec = saddle_run
    X, Y = g.mesh()
    # node and difference neighbours still inside at time t
    inner = (np.abs(X) + 2 * g.dx <= 10 * math.exp(-t)) & interior_mask(g, 3)
    sigma = ftle(cauchy_green_lambda(rec.maps[t_index]), t).values
    dev = float(np.max(np.abs(sigma[inner] - 1)))
    criterion(f"C3 sigma t={t:g}", dev <= 1e-3, f"max |sigma - 1| {dev:.2e} on {int(inner.sum())} nodes (<= 1e-3)")


@pytest.mark.parametrize("r", [2.0, 5.0, 10.0])
def test_c3_linear_saddle_isle(saddle_run, r, criterion):
    g, axis, env, rec = saddle_run
    X, Y = g.mesh()
    inner = (np.abs(X) + 2 * g.dx <= 10 / r) & interior_mask(g, 3)
    gamma = isle(env, r).gamma
    dev = float(np.max(np.abs(gamma[inner] - 1)))
    criterion(f"C3 gamma r={r:g}", dev <= 1e-2, f"max |gamma - 1| {dev:.2e} on {int(inner.sum())} nodes (<= 1e-2)")


# 4 -------------------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["dg257", "qs129", "duffing201"])
def test_c4_theorem1(name, request, criterion):
    run = request.getfixturevalue(name)
    rep = verify_theorem1(run.sigma, run.lam)
    criterion(f"C4 {name}", rep.identical and len(rep.sigma_ridges) > 0,
              f"{len(rep.sigma_ridges)} sigma / {len(rep.lambda_ridges)} lambda ridge nodes, "
              f"symmetric difference {len(rep.only_sigma) + len(rep.only_lambda)}")


# 5 -------------------------------------------------------------------------------------

def _tube_fraction(run, mode="normal"):
    main = detect_ridges(run.sigma).largest()
    rep = verify_theorem2(run.env, main, 20.0, 3 * run.grid.dx, np.sqrt(run.lam.values), mode)
    return rep, main


def test_c5_theorem2_tube(dg513, criterion):
    rep, main = _tube_fraction(dg513)
    criterion("C5", rep.fraction >= 0.95 and rep.precondition_ok,
              f"513x257: fraction {rep.fraction:.4f} of {rep.tube_size} tube nodes (>= 0.95), "
              f"ridge sqrt(lambda) min {rep.m:.1f} > r=20: {rep.precondition_ok}")


def test_c5_desk_grid_note(dg257, dg513, note):
    rep, _ = _tube_fraction(dg257)
    ball, _ = _tube_fraction(dg513, "ball")
    note("C5 note", f"257x129 normal tube {rep.fraction:.4f}; 513x257 ball tube {ball.fraction:.4f}")


# 6 -------------------------------------------------------------------------------------

@pytest.mark.parametrize("name,target", [("dg257", 0.3), ("qs129", 0.8), ("duffing201", 0.4)])
def test_c6_ridge_minimum(name, target, request, criterion):
    run = request.getfixturevalue(name)
    main = detect_ridges(run.sigma).largest()
    m = ridge_min(run.sigma, main)
    criterion(f"C6 {name}", abs(m - target) <= 0.1,
              f"min sigma on main ridge {m:.3f} ({len(main)} nodes), target {target} +/- 0.1")


def test_c6_double_gyre_fine_grid_note(dg513, note):
    main = detect_ridges(dg513.sigma).largest()
    note("C6 note", f"513x257 double gyre: min sigma on main ridge {ridge_min(dg513.sigma, main):.3f}")


# 7 -------------------------------------------------------------------------------------

R_LIST = (1.5, 2.0, 3.0, 5.0, 10.0, 20.0)


def test_c7_envelope_monotone(dg257, qs129, duffing201, criterion):
    ok = all(np.all(np.diff(run.env.frames, axis=0) >= 0) and np.all(run.env.frames[0] == 0)
             for run in (dg257, qs129, duffing201))
    criterion("C7 envelope", ok, "s_n <= s_{n+1} at every node and checkpoint; s_0 = 0 (exact)")


def test_c7_tau_monotone(dg257, qs129, criterion):
    bad = 0
    for run in (dg257, qs129):
        taus = [crossing_times(run.env, r) for r in R_LIST]
        for a, b in zip(taus, taus[1:]):
            both = ~np.isnan(a) & ~np.isnan(b)
            bad += int(np.count_nonzero(a[both] > b[both]))
    criterion("C7 tau", bad == 0, f"tau_r1 <= tau_r2 for r in {R_LIST}: {bad} violations (exact)")


def test_c7_support_shrinkage(dg257, qs129, criterion):
    bad = 0
    for run in (dg257, qs129):
        sup = [isle(run.env, r).gamma > 0 for r in R_LIST]
        bad += sum(int(np.count_nonzero(b & ~a)) for a, b in zip(sup, sup[1:]))
    criterion("C7 support", bad == 0, f"support of gamma_r nested in r: {bad} violations (exact)")


def test_c7_clamping(criterion):
    g = build_grid((-6, 6, -6, 6), 65, 65)
    lo_x, hi_x, lo_y, hi_y = g.extents
    outside = []

    def check(n, fmap):
        outside.append(int(np.count_nonzero((fmap.phi < lo_x) | (fmap.phi > hi_x)
                                            | (fmap.psi < lo_y) | (fmap.psi > hi_y))))

    rec = forward_flow_run(QuadSaddle(), g, TimeAxis(0, 2, 20), observer=check)
    criterion("C7 clamping", sum(outside) == 0 and sum(rec.clamp_counts) > 0,
              f"quad saddle: {sum(rec.clamp_counts)} clamp events, {sum(outside)} arrivals outside the box (exact)")


def test_c7_remark1_zero(dg257, criterion):
    peak = float(dg257.env.frames[-1].max())
    bad = 0
    for r in R_LIST + (2 * peak,):
        out = isle(dg257.env, r)
        bad += int(np.count_nonzero(out.gamma[~out.crossed] != 0.0))
    above = isle(dg257.env, 2 * peak).gamma
    criterion("C7 remark1", bad == 0 and np.all(above == 0.0),
              f"gamma = 0 exactly where no crossing ({bad} violations); r above max gives all-zero field")


def test_c7_identity(criterion):
    g = build_grid((0, 2, 0, 1), 257, 129)
    lam = cauchy_green_lambda(FlowMap2D.identity(g))
    sig = ftle(lam, 10.0)
    dl, ds = float(np.max(np.abs(lam.values - 1))), float(np.max(np.abs(sig.values)))
    criterion("C7 identity", dl <= 1e-12 and ds <= 1e-12, f"max |lambda - 1| {dl:.1e}, max |sigma| {ds:.1e} (<= 1e-12)")


# 8 -------------------------------------------------------------------------------------

def _bench(sizes, T, legacy):
    model = DoubleGyre()
    rows = []
    for n in sizes:
        g = build_grid((0, 2, 0, 1), n, (n - 1) // 2 + 1)
        m = bench_checkpoints(model, g, 0.0, T, 0.5)
        axis = TimeAxis(0, T, m)
        env = SeparationEnvelope(g, axis)
        start = time.perf_counter()
        if legacy:
            legacy_checkpoint_maps(model, g, axis, observer=env)
        else:
            forward_flow_run(model, g, axis, observer=env)
        rows.append((n, m, time.perf_counter() - start))
    return rows


def test_c8_forward_scaling(criterion):
    rows = _bench([129, 257, 513], 1.0, False)
    ratios = [b[2] / a[2] for a, b in zip(rows, rows[1:])]
    desc = "; ".join(f"N={n} M={m} {s:.2f}s" for n, m, s in rows)
    criterion("C8 forward", all(6 <= r <= 12 for r in ratios),
              f"{desc}; ratios {', '.join(f'{r:.2f}' for r in ratios)} (each in [6, 12])")


def test_c8_legacy_scaling(criterion):
    rows = _bench([129, 257], 0.25, True)
    ratio = rows[1][2] / rows[0][2]
    desc = "; ".join(f"N={n} M={m} {s:.2f}s" for n, m, s in rows)
    criterion("C8 legacy", 12 <= ratio <= 24,
              f"{desc}; ratio {ratio:.2f}, order {math.log2(ratio):.2f} (in [12, 24], one order above [6, 12])")


# 9 -------------------------------------------------------------------------------------

def _clear_of_walls(model, g, T, cells, steps=100):
    """Nodes whose RK4 path stays ``cells`` cells away from every wall."""
    X, Y = g.mesh()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    x0, x1, y0, y1 = g.extents
    gap = cells * max(g.dx, g.dy)
    clear = np.ones(len(pts), dtype=bool)
    h = T / steps
    for k in range(steps + 1):
        d = np.minimum.reduce([pts[:, 0] - x0, x1 - pts[:, 0], pts[:, 1] - y0, y1 - pts[:, 1]])
        clear &= d >= gap
        if k < steps:
            pts, _ = lagrangian_trace(model, pts, k * h, (k + 1) * h, 1e-3)
    return clear.reshape(g.shape)


@pytest.mark.parametrize("case", ["uniform", "rotation"])
@pytest.mark.parametrize("scheme", ["tvdrk2", "euler1"])
def test_c9_simple_fields(case, scheme, criterion):
    if case == "uniform":
        model, g = Uniform(0.3, -0.2), build_grid((0, 2, 0, 2), 81, 81)
    else:
        model, g = RigidRotation(), build_grid((-1, 1, -1, 1), 81, 81)
    axis = TimeAxis(0, 1, 10)
    fwd = forward_flow_run(model, g, axis, scheme).final
    leg = legacy_backward_run(model, g, axis, scheme)
    mask = _clear_of_walls(model, g, 1.0, 10)
    err = relative_l2(fwd, leg, mask)
    whole = relative_l2(fwd, leg)
    criterion(f"C9 {case} {scheme}", err <= 1e-6,
              f"relative L2 {err:.2e} on {int(mask.sum())} nodes 10 cells clear of the walls (<= 1e-6); "
              f"whole box {whole:.1e}")


def test_c9_quad_saddle(qs129, qs129_legacy, criterion):
    err = relative_l2(qs129.final, qs129_legacy, interior_mask(qs129.grid, 3))
    criterion("C9 quad-saddle", err <= 1e-3, f"T=5 129x129 map relative L2 {err:.3e} (<= 1e-3)")


# gridded -------------------------------------------------------------------------------

def test_gridded_double_gyre(tmp_path, criterion):
    g = build_grid((0, 2, 0, 1), 129, 65)
    times = np.round(np.arange(0, 10 + 1e-9, 0.05), 10)
    dg = DoubleGyre()
    frames = [dg.sample_grid(g, float(t)) for t in times]
    hdr = save_gridded(str(tmp_path / "dg.hdr"), g, times, np.stack([f[0] for f in frames]),
                       np.stack([f[1] for f in frames]))
    axis = TimeAxis(0, 10, 100)
    analytic = envelope_run(dg, g, axis)
    gridded = envelope_run(load_gridded(hdr), g, axis)
    err = ftle_rel_l2(gridded.sigma.values, analytic.sigma.values)
    criterion("Gridded", err <= 1e-2, f"FTLE relative L2 gridded vs analytic {err:.3e} (<= 1e-2)")
