"""Shared fixtures.

The expensive benchmark runs are session-scoped so the acceptance suite and
the module tests that quote the same benchmark share one computation.
Acceptance outcomes are collected through the ``criterion`` fixture and
printed as one PASS/FAIL line each at the end of the session.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pytest

from lcsflow.fields import FlowMap2D, FtleField, LambdaField
from lcsflow.flowmap import forward_flow_run, lagrangian_flow_map, legacy_backward_run
from lcsflow.grid import Grid2D, TimeAxis, build_grid
from lcsflow.lyapunov import SeparationEnvelope, cauchy_green_lambda, ftle
from lcsflow.velocity import DoubleGyre, DuffingVdP, QuadSaddle, VelocityModel

RESULTS: dict = {}


def _record(cid: str, ok: bool, detail: str):
    RESULTS[cid] = (bool(ok), detail)


@pytest.fixture
def criterion():
    """``criterion(id, ok, detail)`` records an acceptance outcome and asserts it."""

    def check(cid: str, ok: bool, detail: str):
        _record(cid, ok, detail)
        assert ok, f"{cid}: {detail}"

    return check


@pytest.fixture
def note():
    """Informational acceptance line that never fails the test."""

    def add(cid: str, detail: str):
        RESULTS[cid] = (None, detail)

    return add


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    groups: dict = {}
    for cid in sorted(RESULTS, key=_order):
        groups.setdefault(_head(cid), []).append(cid)
    for head, cids in groups.items():
        verdicts = [RESULTS[c][0] for c in cids if RESULTS[c][0] is not None]
        if verdicts:
            tag = "PASS" if all(verdicts) else "FAIL"
            terminalreporter.write_line(f"{tag} {head} ({sum(verdicts)}/{len(verdicts)} checks pass)")
        for cid in cids:
            ok, detail = RESULTS[cid]
            part = "info" if ok is None else ("pass" if ok else "fail")
            terminalreporter.write_line(f"    {part} {cid}: {detail}")


def _head(cid: str) -> str:
    return cid.split()[0]


def _order(cid: str):
    head = _head(cid).lstrip("C")
    return (int(head) if head.isdigit() else 99, cid)


@dataclass
class Run:
    model: VelocityModel
    grid: Grid2D
    axis: TimeAxis
    final: FlowMap2D
    env: Optional[SeparationEnvelope]
    lam: LambdaField
    sigma: FtleField
    clamp_total: int = 0


def envelope_run(model, grid, axis, **kw) -> Run:
    env = SeparationEnvelope(grid, axis)
    rec = forward_flow_run(model, grid, axis, observer=env, **kw)
    lam = cauchy_green_lambda(rec.final)
    return Run(model, grid, axis, rec.final, env, lam, ftle(lam, axis.T - axis.t0),
               int(sum(rec.clamp_counts)))


@pytest.fixture(scope="session")
def dg257():
    return envelope_run(DoubleGyre(), build_grid((0, 2, 0, 1), 257, 129), TimeAxis(0, 10, 100))


@pytest.fixture(scope="session")
def dg257_reference(dg257):
    # the double-gyre box is invariant, so the plain RK4 trace never leaves it
    phi, psi, failed = lagrangian_flow_map(DoubleGyre(), dg257.grid, 0.0, 10.0, 1e-3)
    assert not failed.any()
    return FlowMap2D(dg257.grid, phi, psi)


@pytest.fixture(scope="session")
def dg257_legacy(dg257):
    return legacy_backward_run(DoubleGyre(), dg257.grid, dg257.axis)


@pytest.fixture(scope="session")
def dg513():
    return envelope_run(DoubleGyre(), build_grid((0, 2, 0, 1), 513, 257), TimeAxis(0, 10, 100))


@pytest.fixture(scope="session")
def qs129():
    return envelope_run(QuadSaddle(), build_grid((-6, 6, -6, 6), 129, 129), TimeAxis(0, 5, 100))


@pytest.fixture(scope="session")
def qs129_legacy(qs129):
    return legacy_backward_run(QuadSaddle(), qs129.grid, qs129.axis)


@pytest.fixture(scope="session")
def duffing201():
    return envelope_run(DuffingVdP(), build_grid((-2, 2, -1.5, 1.5), 201, 151), TimeAxis(0, 10, 200))


def ftle_rel_l2(a: np.ndarray, b: np.ndarray, mask=None) -> float:
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    return float(np.linalg.norm((a - b)[mask]) / np.linalg.norm(b[mask]))
