import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from lcsflow.errors import ConfigError, ParameterError
from lcsflow.fields import FlowMap2D, LambdaField
from lcsflow.flowmap import forward_flow_run
from lcsflow.grid import TimeAxis, build_grid
from lcsflow.lyapunov import (LAMBDA_FLOOR, SeparationEnvelope, cauchy_green_lambda, crossing_time,
                              crossing_times, deformation_gradient, fsle_neighbor_oracle, ftle, isle,
                              update_envelope)
from lcsflow.velocity import DoubleGyre, LinearSaddle, Uniform


def _saddle_map(grid, t):
    X, Y = grid.mesh()
    return _raw_map(grid, X * math.exp(t), Y * math.exp(-t))


def _raw_map(grid, phi, psi):
    # bypass clamping: the analytic saddle map leaves the box
    m = FlowMap2D.identity(grid)
    m.phi, m.psi = phi, psi
    return m


def _envelope_from(grid, axis, sqrt_lam_frames):
    env = SeparationEnvelope(grid, axis)
    for n, s in enumerate(sqrt_lam_frames, start=1):
        env.update(n, LambdaField(grid, np.broadcast_to(np.asarray(s, float) ** 2, grid.shape).copy()))
    return env


def _saddle_envelope(grid, axis):
    return _envelope_from(grid, axis, [math.exp(t) for t in axis.times[1:]])


# -- cauchy_green_lambda / ftle ---------------------------------------------------------

def test_identity_map_lambda_is_one_and_ftle_zero():
    g = build_grid((0, 2, 0, 1), 33, 17)
    lam = cauchy_green_lambda(FlowMap2D.identity(g))
    assert np.array_equal(lam.values, np.ones(g.shape))
    assert np.array_equal(ftle(lam, 3.0).values, np.zeros(g.shape))


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_linear_saddle_map_lambda(t):
    g = build_grid((-1, 1, -1, 1), 21, 21)
    lam = cauchy_green_lambda(_saddle_map(g, t))
    np.testing.assert_allclose(lam.values, math.exp(2 * t), rtol=1e-12)
    np.testing.assert_allclose(ftle(lam, t).values, 1.0, rtol=1e-12)


def test_deformation_gradient_second_order_on_walls():
    # quadratic map: central and one-sided second-order differences are exact
    g = build_grid((0, 1, 0, 1), 11, 11)
    X, Y = g.mesh()
    a11, a12, a21, a22 = deformation_gradient(_raw_map(g, X ** 2 + Y, X * Y))
    np.testing.assert_allclose(a11, 2 * X, atol=1e-12)
    np.testing.assert_allclose(a12, 1.0, atol=1e-12)
    np.testing.assert_allclose(a21, Y, atol=1e-12)
    np.testing.assert_allclose(a22, X, atol=1e-12)


def test_lambda_closed_form_against_eigvalsh():
    g = build_grid((0, 1, 0, 1), 9, 9)
    X, Y = g.mesh()
    m = _raw_map(g, np.sin(3 * X) + Y ** 2, np.cos(2 * Y) * X)
    a11, a12, a21, a22 = deformation_gradient(m)
    F = np.stack([np.stack([a11, a12], -1), np.stack([a21, a22], -1)], -2)
    C = np.swapaxes(F, -1, -2) @ F
    expect = np.linalg.eigvalsh(C)[..., -1]
    np.testing.assert_allclose(cauchy_green_lambda(m).values, np.maximum(expect, LAMBDA_FLOOR), rtol=1e-10)


def test_lambda_floor_applied():
    g = build_grid((0, 1, 0, 1), 5, 5)
    const = _raw_map(g, np.full(g.shape, 0.5), np.full(g.shape, 0.5))
    assert np.all(cauchy_green_lambda(const).values == LAMBDA_FLOOR)


def test_lambda_needs_three_points():
    g = build_grid((0, 1, 0, 1), 2, 5)
    with pytest.raises(ConfigError):
        cauchy_green_lambda(FlowMap2D.identity(g))


@pytest.mark.parametrize("t", [0.1, 1.0, 7.5, -2.0])
def test_ftle_of_exp_two_t_is_one(t):
    g = build_grid((0, 1, 0, 1), 5, 5)
    lam = LambdaField(g, np.full(g.shape, math.exp(2 * abs(t))))
    np.testing.assert_allclose(ftle(lam, t).values, 1.0, rtol=1e-14)


def test_ftle_zero_time_rejected():
    g = build_grid((0, 1, 0, 1), 5, 5)
    with pytest.raises(ParameterError):
        ftle(LambdaField(g, np.ones(g.shape)), 0.0)


def test_ftle_keeps_negatives_and_display_clamps():
    g = build_grid((0, 1, 0, 1), 5, 5)
    vals = np.linspace(0.1, 4, 25).reshape(5, 5)
    f = ftle(LambdaField(g, vals), 1.0)
    assert f.values.min() < 0
    assert f.display().min() == 0.0
    np.testing.assert_array_equal(f.display(clamp_negative=False), f.values)


@pytest.mark.slow
def test_double_gyre_lambda_matches_oracle_lambda(dg257, dg257_reference):
    lam_ref = cauchy_green_lambda(dg257_reference).values
    err = np.linalg.norm(dg257.lam.values - lam_ref) / np.linalg.norm(lam_ref)
    assert err <= 5e-2, f"lambda relative L2 {err:.3e}"


# -- envelope ----------------------------------------------------------------------------

def test_envelope_first_update_is_sqrt_lambda():
    g = build_grid((0, 1, 0, 1), 5, 5)
    env = SeparationEnvelope(g, TimeAxis(0, 1, 2))
    assert np.array_equal(env.frames[0], np.zeros(g.shape))
    lam = LambdaField(g, np.full(g.shape, 4.0))
    update_envelope(env, 1, lam)
    assert np.array_equal(env.frames[1], np.full(g.shape, 2.0))


def test_envelope_smaller_sqrt_lambda_leaves_it_unchanged():
    g = build_grid((0, 1, 0, 1), 5, 5)
    env = _envelope_from(g, TimeAxis(0, 1, 2), [3.0, 1.5])
    assert np.array_equal(env.frames[2], env.frames[1])


def test_envelope_rejects_out_of_order_updates():
    g = build_grid((0, 1, 0, 1), 5, 5)
    env = SeparationEnvelope(g, TimeAxis(0, 1, 3))
    with pytest.raises(ParameterError):
        env.update(2, LambdaField(g, np.ones(g.shape)))
    env.update(1, LambdaField(g, np.ones(g.shape)))
    with pytest.raises(ParameterError):
        env.update(1, LambdaField(g, np.ones(g.shape)))


def test_linear_saddle_envelope_is_exp_t():
    g = build_grid((-1, 1, -1, 1), 11, 11)
    axis = TimeAxis(0, 2, 8)
    env = _saddle_envelope(g, axis)
    for n, t in enumerate(axis.times):
        expect = 0.0 if n == 0 else math.exp(t)
        np.testing.assert_allclose(env.frames[n], expect, rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 50.0), min_size=2, max_size=12), st.integers(0, 10 ** 6))
def test_envelope_is_monotone_in_time(levels, seed):
    rng = np.random.default_rng(seed)
    g = build_grid((0, 1, 0, 1), 4, 3)
    axis = TimeAxis(0, 1, len(levels))
    env = _envelope_from(g, axis, [lv * rng.random(g.shape) for lv in levels])
    assert np.all(np.diff(env.frames, axis=0) >= 0)


# -- crossing times / isle ------------------------------------------------------------

def test_crossing_time_midpoint_bracket():
    g = build_grid((0, 1, 0, 1), 3, 3)
    env = _envelope_from(g, TimeAxis(0, 2, 2), [2.0, 4.0])
    assert crossing_time(env, (1, 1), 3.0) == pytest.approx(1.5, abs=1e-15)
    np.testing.assert_allclose(crossing_times(env, 3.0), 1.5, atol=1e-15)


def test_crossing_inside_first_interval_from_zero_envelope():
    # s_0 = 0, so r below the first checkpoint value resolves inside [t0, t1]
    g = build_grid((0, 1, 0, 1), 3, 3)
    env = _envelope_from(g, TimeAxis(0, 2, 2), [4.0, 8.0])
    assert crossing_time(env, (0, 0), 2.0) == pytest.approx(0.5)


def test_crossing_absent_above_final_value():
    g = build_grid((0, 1, 0, 1), 3, 3)
    env = _envelope_from(g, TimeAxis(0, 2, 2), [2.0, 4.0])
    assert crossing_time(env, (0, 0), 4.5) is None
    assert np.isnan(crossing_times(env, 4.5)).all()


def test_flat_segment_takes_earliest_time():
    g = build_grid((0, 1, 0, 1), 3, 3)
    env = _envelope_from(g, TimeAxis(0, 3, 3), [2.0, 3.0, 3.0])
    assert crossing_time(env, (2, 2), 3.0) == pytest.approx(2.0)
    np.testing.assert_allclose(crossing_times(env, 3.0), 2.0)


@pytest.mark.parametrize("r", [1.0, 0.5, -2.0])
def test_crossing_rejects_r_not_above_one(r):
    g = build_grid((0, 1, 0, 1), 3, 3)
    env = _envelope_from(g, TimeAxis(0, 1, 1), [2.0])
    with pytest.raises(ParameterError):
        crossing_time(env, (0, 0), r)
    with pytest.raises(ParameterError):
        isle(env, r)


def test_linear_saddle_crossing_converges_to_two():
    g = build_grid((-1, 1, -1, 1), 3, 3)
    errs = []
    for n in (10, 20, 40, 80):
        env = _saddle_envelope(g, TimeAxis(0, 3, n))
        errs.append(abs(crossing_time(env, (1, 1), math.e ** 2) - 2.0))
    dts = [3 / n for n in (10, 20, 40, 80)]
    assert all(e <= dt for e, dt in zip(errs, dts))
    assert errs[-1] < errs[0]


@pytest.mark.parametrize("r", [2.0, 5.0, 10.0])
def test_linear_saddle_isle_is_one(r):
    g = build_grid((-1, 1, -1, 1), 5, 5)
    env = _saddle_envelope(g, TimeAxis(0, 3, 3000))
    np.testing.assert_allclose(isle(env, r).gamma, 1.0, atol=1e-6)


def test_isle_zero_where_no_crossing():
    g = build_grid((0, 1, 0, 1), 3, 3)
    frames = np.ones(g.shape) * 2.0
    frames[1, 1] = 6.0
    env = _envelope_from(g, TimeAxis(0, 1, 1), [frames])
    out = isle(env, 5.0)
    assert out.gamma[1, 1] > 0
    mask = np.ones(g.shape, dtype=bool)
    mask[1, 1] = False
    assert np.all(out.gamma[mask] == 0.0)
    assert np.all(np.isnan(out.tau[mask]))
    assert out.crossed.sum() == 1


def _random_envelope(seed, n=8):
    rng = np.random.default_rng(seed)
    g = build_grid((0, 1, 0, 1), 6, 5)
    axis = TimeAxis(0, 2, n)
    return _envelope_from(g, axis, [20 * rng.random(g.shape) for _ in range(n)])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(1.01, 15.0), st.floats(1.01, 15.0))
def test_tau_monotone_in_r(seed, r1, r2):
    r1, r2 = sorted((r1, r2))
    env = _random_envelope(seed)
    t1, t2 = crossing_times(env, r1), crossing_times(env, r2)
    both = ~np.isnan(t1) & ~np.isnan(t2)
    assert np.all(t1[both] <= t2[both])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(1.01, 15.0), st.floats(1.01, 15.0))
def test_isle_support_shrinks_with_r(seed, r1, r2):
    r1, r2 = sorted((r1, r2))
    env = _random_envelope(seed)
    s1, s2 = isle(env, r1).gamma > 0, isle(env, r2).gamma > 0
    assert not np.any(s2 & ~s1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(1.01, 15.0))
def test_crossing_bracket_contains_r(seed, r):
    env = _random_envelope(seed)
    tau = crossing_times(env, r)
    times = env.axis.times
    S = env.frames
    for j, i in zip(*np.nonzero(~np.isnan(tau))):
        k = min(int(np.searchsorted(times, tau[j, i], side="left")), len(times) - 1)
        k = max(k, 1)
        if times[k - 1] == tau[j, i] and k > 1 and S[k - 1, j, i] >= r:
            k -= 1
        assert S[k - 1, j, i] <= r <= S[k, j, i]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 10.0))
def test_ftle_and_lambda_share_argmax_sets(seed, t):
    from lcsflow.ridge import detect_ridges
    rng = np.random.default_rng(seed)
    g = build_grid((0, 1, 0, 1), 16, 16)
    lam = LambdaField(g, np.exp(4 * rng.random(g.shape)))
    sig = ftle(lam, t)
    assume(np.unique(sig.values).size == np.unique(lam.values).size)
    a = detect_ridges(sig, 80)
    b = detect_ridges(lam, 80)
    assert a.points == b.points
    assert np.argmax(sig.values) == np.argmax(lam.values)


def test_volume_isle_reuses_envelope_for_many_r():
    g = build_grid((-1, 1, -1, 1), 5, 5)
    env = _saddle_envelope(g, TimeAxis(0, 3, 300))
    before = env.frames.copy()
    for r in (2, 3, 5, 10):
        isle(env, r)
    assert np.array_equal(env.frames, before)


# -- FSLE oracle --------------------------------------------------------------------------

def test_fsle_zero_velocity_absent():
    res = fsle_neighbor_oracle(Uniform(0, 0), (0.5, 0.5), 1e-3, 2.0, 1e-2, horizon=1.0)
    assert res.gamma is None and res.tau is None
    assert res.diagnostic


@pytest.mark.parametrize("eps", [1e-4, 1e-2, 0.1])
def test_fsle_linear_saddle_rate_one(eps):
    res = fsle_neighbor_oracle(LinearSaddle(), (0.0, 0.0), eps, math.e, 1e-3, horizon=3.0)
    assert res.gamma == pytest.approx(1.0, rel=1e-6)


def test_fsle_integration_failure_reports_diagnostic():
    class Blowup(Uniform):
        def velocity(self, x, y, t):
            return np.asarray(x) ** 3 * 1e200, 0 * np.asarray(y)

    res = fsle_neighbor_oracle(Blowup(), (2.0, 0.0), 1e-3, 1e9, 1e-2, horizon=1.0)
    assert res.gamma is None
    assert "failed" in res.diagnostic


@pytest.mark.parametrize("kw", [dict(eps=0.0), dict(r=1.0), dict(dt_sub=0.0)])
def test_fsle_argument_checks(kw):
    args = dict(eps=1e-3, r=2.0, dt_sub=1e-2)
    args.update(kw)
    with pytest.raises(ParameterError):
        fsle_neighbor_oracle(LinearSaddle(), (0, 0), **args)


@pytest.mark.slow
def test_fsle_matches_isle_at_double_gyre_ridge_point(dg257):
    from lcsflow.ridge import detect_ridges
    g = dg257.grid
    main = detect_ridges(dg257.sigma).largest()
    k = int(np.argmax(main.values))
    i, j = int(main.i[k]), int(main.j[k])
    x0 = (g.x_min + i * g.dx, g.y_min + j * g.dy)
    r = 4.0
    gamma_isle = isle(dg257.env, r).gamma[j, i]
    res = fsle_neighbor_oracle(DoubleGyre(), x0, g.dx / 4, r, 1e-3, horizon=10.0)
    assert gamma_isle > 0 and res.gamma is not None
    assert abs(res.gamma - gamma_isle) <= 0.2 * gamma_isle, (res.gamma, gamma_isle)


def test_forward_run_observer_fills_envelope():
    g = build_grid((0, 1, 0, 1), 9, 9)
    axis = TimeAxis(0, 1, 4)
    env = SeparationEnvelope(g, axis)
    forward_flow_run(Uniform(0, 0), g, axis, observer=env)
    assert env.complete
    assert np.array_equal(env.frames[1:], np.ones((4,) + g.shape))
