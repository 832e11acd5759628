"""Closed-loop integration and the three-stage run.

Free flow pins the integrator: with u = 0 every oscillator stays on its
energy shell, so the drift measures the scheme alone and the error
against the exact rotation must fall ~2^4 per step halving.  The rest of
the oracle is structural: events localized to the bisection tolerance,
dwell spacing between sign flips, stages in order with rho decreasing
under the bang law, and the terminal tail stepping down onto the stop.
"""

import csv
import filecmp
import math
from functools import lru_cache
from types import SimpleNamespace

import numpy as np
import pytest

from oscdamp.canonical import build_canonical
from oscdamp.geometry import QuadratureConfig
from oscdamp.local import build_controller
from oscdamp.matching import build_plan
from oscdamp.model import build_system
from oscdamp.sim import (
    STAGE_DONE,
    STAGE_HIGH_ENERGY,
    STAGE_ORDER,
    STAGE_REDUCED,
    STAGE_TERMINAL,
    SimConfig,
    integrate_stage,
    run_three_stage,
)

C_AB1 = 1.7278975033285064  # the mu-derived demo value for omega = 1


def free_field(t, x, prev_u):
    return 0.0, {}


def exact_free_state(omegas, x0, t):
    """Componentwise rotation e^{At} x0 of the uncontrolled system."""
    out = np.empty_like(x0)
    for i, w in enumerate(omegas):
        c, s = math.cos(w * t), math.sin(w * t)
        xi, eta = x0[2 * i], x0[2 * i + 1]
        out[2 * i] = xi * c + (eta / w) * s
        out[2 * i + 1] = -w * xi * s + eta * c
    return out


def energies(omegas, X):
    om = np.asarray(omegas, dtype=np.float64)
    return 0.5 * ((X[..., 1::2] ** 2).sum(axis=-1)
                  + (om ** 2 * X[..., 0::2] ** 2).sum(axis=-1))


@lru_cache(maxsize=1)
def demo_run():
    """One full run for one oscillator from rho0 = 5 pi, shared below."""
    plan = build_plan(build_canonical([1.0]), build_controller(1), C_AB1)
    traj = run_three_stage([6.0, 8.0], [1.0], plan,
                           SimConfig(step=0.01, max_time=200.0))
    return traj, plan


def test_free_flow_conserves_energy():
    sys2 = build_system([1.0, math.sqrt(2.0)])
    x0 = np.array([0.7, -0.3, 0.4, 1.1])
    seg, event_time = integrate_stage(free_field, x0, (0.0, 200.0), None,
                                      A=sys2.A, B=sys2.B, step=0.01)
    assert event_time is None and seg.event_time is None
    assert seg.t_end == pytest.approx(200.0, abs=1e-9)
    E = energies(sys2.omegas, seg.x)
    assert np.max(np.abs(E - E[0])) <= 1e-6 * E[0]


def test_free_flow_fourth_order():
    sys2 = build_system([1.0, math.sqrt(2.0)])
    x0 = np.array([0.7, -0.3, 0.4, 1.1])
    errs = []
    for h in (0.01, 0.005):
        seg, _ = integrate_stage(free_field, x0, (0.0, 50.0), None,
                                 A=sys2.A, B=sys2.B, step=h)
        ref = exact_free_state(sys2.omegas, x0, seg.t_end)
        errs.append(float(np.linalg.norm(seg.x_end - ref)))
    # the coarse error must sit well above roundoff for the ratio to mean
    # anything; halving the step then buys close to 2^4
    assert errs[0] > 1e-9
    assert 10.0 <= errs[0] / errs[1] <= 24.0


def test_event_localized_to_bisection_tolerance():
    # xdot = (1, 0) puts the crossing of x1 = 3/8 strictly inside a step
    A = np.zeros((2, 2))
    B = np.array([1.0, 0.0])

    def field(t, x, prev_u):
        return 1.0, {}

    def event(t, x, extras):
        return x[0] >= 0.375

    seg, te = integrate_stage(field, np.zeros(2), (0.0, 1.0), event,
                              A=A, B=B, step=0.01)
    assert te is not None
    assert abs(te - 0.375) <= 2e-9
    assert seg.event_time == te and seg.t[-1] == te and seg.t_end == te
    assert abs(seg.x_end[0] - 0.375) <= 2e-9
    assert seg.x_end[1] == 0.0

    # already past the threshold: a zero-step segment at t0
    seg, te = integrate_stage(field, [0.5, 0.0], (0.0, 1.0), event,
                              A=A, B=B, step=0.01)
    assert te == 0.0 and seg.steps == 0 and seg.t.size == 1


def test_dwell_spaces_sign_flips():
    sys1 = build_system([1.0])

    def alternator(t, x, prev_u):
        return (1.0 if prev_u is None else -prev_u), {}

    seg, _ = integrate_stage(alternator, [1.0, 0.0], (0.0, 1.0), None,
                             A=sys1.A, B=sys1.B, step=0.01, dwell_min=0.05)
    u = seg.u
    flip_t = seg.t[1:][u[1:] * u[:-1] < 0.0]
    gaps = np.diff(flip_t)
    # rounding of the accumulated time can defer a flip by one step but
    # never admit an early one
    assert flip_t.size >= 10
    assert np.min(gaps) >= 0.05 - 1e-12
    assert np.max(gaps) <= 0.06 + 1e-12

    seg, _ = integrate_stage(alternator, [1.0, 0.0], (0.0, 0.2), None,
                             A=sys1.A, B=sys1.B, step=0.01, dwell_min=0.0)
    assert np.all(seg.u[1:] * seg.u[:-1] < 0.0)


def test_config_validation():
    assert SimConfig().dwell_min == 0.05
    assert SimConfig(step=0.02).dwell_min == pytest.approx(0.1)
    with pytest.raises(ValueError):
        SimConfig(step=0.0)
    with pytest.raises(ValueError):
        SimConfig(step=-0.01)
    with pytest.raises(ValueError):
        SimConfig(max_time=0.0)
    with pytest.raises(ValueError):
        SimConfig(step=0.01, dwell_min=0.005)
    with pytest.raises(ValueError):
        SimConfig(record_every=0)
    with pytest.raises(ValueError):
        SimConfig(stage1_to_2_radius=-1.0)


def test_run_input_validation():
    plan = SimpleNamespace(Theta=1.25, U=0.2, C_of_AB=C_AB1)
    with pytest.raises(ValueError):
        run_three_stage([1.0, 0.0, 0.0], [1.0], plan)
    with pytest.raises(ValueError):
        run_three_stage([0.0, 0.0], [1.0], plan)


def test_three_stage_structure():
    traj, plan = demo_run()
    assert traj.done is True and traj.error is None
    assert np.all(np.diff(traj.t) > 0.0)

    order = [STAGE_ORDER.index(s) for s in traj.stage]
    assert order == sorted(order)
    assert traj.stage[0] == STAGE_HIGH_ENERGY
    assert traj.stage[-1] == STAGE_DONE
    assert set(traj.stage) == set(STAGE_ORDER)

    for name in (STAGE_HIGH_ENERGY, STAGE_REDUCED, STAGE_TERMINAL):
        assert traj.stage_times[name] > 0.0
    assert sum(traj.stage_times.values()) == pytest.approx(traj.total_time,
                                                           abs=1e-12)
    # rho0 = (pi/2) z(6, 8) = 5 pi at omega = 1
    assert traj.rho0 == pytest.approx(5.0 * math.pi, abs=1e-5)
    assert np.max(np.abs(traj.u)) <= 1.0 + 1e-12


def test_three_stage_per_stage_behaviour():
    traj, plan = demo_run()
    st = np.array(traj.stage)

    he = st == STAGE_HIGH_ENERGY
    rho_he = traj.rho[he]
    assert not np.any(np.isnan(rho_he))
    # rho decreases under the full bang; a held control can overshoot a
    # switching crossing by O(step) at worst
    assert np.max(np.diff(rho_he)) <= 0.5 * 0.01
    au = np.abs(traj.u[he])
    assert np.all((au == 1.0) | (au == 0.0))
    assert np.all(np.isnan(traj.T_local[he]))

    red = st == STAGE_REDUCED
    au = np.abs(traj.u[red])
    assert np.all((np.abs(au - plan.U) <= 1e-12) | (au <= 1e-12))

    tail = (st == STAGE_TERMINAL) | (st == STAGE_DONE)
    dts = np.diff(traj.t[tail])
    assert dts.size > 10
    assert np.max(dts) <= 0.01 + 1e-12
    assert np.min(dts) < 0.005          # the tail cap shrinks the hold
    assert not np.any(np.isnan(traj.T_local[tail]))
    assert np.linalg.norm(traj.x[-1]) <= 1e-2

    # the closure defect stays bounded: the free flow leaves the gauge
    # invariant and the momentum sum is capped on the unit shell
    assert np.nanmax(np.abs(traj.h_resid)) <= 1.0 + 1e-6


def test_summary_and_samples():
    traj, _ = demo_run()
    s = traj.summary()
    assert set(s) == {"total_time", "stage_times", "rho0",
                      "ratio_T_over_rho0"}
    assert s["ratio_T_over_rho0"] == pytest.approx(traj.total_time / traj.rho0)
    s2 = traj.summary(tau_oracle=10.0)
    assert s2["tau_oracle"] == 10.0
    assert s2["ratio_T_over_tau"] == pytest.approx(traj.total_time / 10.0)

    rows = traj.samples
    assert len(rows) == traj.t.size
    t0, x0, u0, stage0, rho0, T0, h0 = rows[0]
    assert t0 == traj.t[0] and stage0 == STAGE_HIGH_ENERGY
    assert rho0 == pytest.approx(traj.rho0)


def test_skips_stages_already_inside_handover_set():
    _, plan = demo_run()
    traj = run_three_stage([0.05, 0.0], [1.0], plan,
                           SimConfig(step=0.01, max_time=50.0))
    assert traj.done is True and traj.error is None
    assert traj.stage_times[STAGE_HIGH_ENERGY] == 0.0
    assert traj.stage_times[STAGE_REDUCED] == 0.0
    assert traj.stage_times[STAGE_TERMINAL] > 0.0
    # the zero-step entry sample still carries its gauge value
    assert traj.rho0 == pytest.approx(0.025 * math.pi, abs=1e-6)


def test_max_time_runs_out():
    _, plan = demo_run()
    traj = run_three_stage([6.0, 8.0], [1.0], plan,
                           SimConfig(step=0.01, max_time=5.0))
    assert traj.done is False and traj.error is None
    assert traj.total_time == pytest.approx(5.0, abs=1e-9)
    assert traj.stage[-1] == STAGE_HIGH_ENERGY
    assert traj.stage_times[STAGE_REDUCED] == 0.0
    assert traj.stage_times[STAGE_TERMINAL] == 0.0


def test_gauge_failure_is_reported_not_raised():
    # the momentum residual has a quadrature floor far above 1e-14, so the
    # solver must report non-convergence at the very first sample
    plan = SimpleNamespace(Theta=1.0, U=0.2, C_of_AB=1.0)
    cfg = SimConfig(gauge_tol=1e-14,
                    quadrature=QuadratureConfig(points_per_axis=64))
    traj = run_three_stage([8.0, 6.0, -5.0, 7.0], [1.0, math.sqrt(2.0)],
                           plan, cfg)
    assert traj.done is False
    assert "gauge solver stalled" in traj.error
    assert traj.t.size == 0
    assert traj.total_time == 0.0
    assert math.isnan(traj.rho0)


def test_csv_round_trip(tmp_path):
    traj, _ = demo_run()
    path = tmp_path / "run.csv"
    traj.to_csv(path)
    text = path.read_text()
    assert text.endswith("\n")
    lines = text.splitlines()
    assert lines[0] == "t,x1,y1,u,stage,rho,T_local,h_resid"
    assert len(lines) == traj.t.size + 1

    rows = list(csv.reader(lines[1:]))
    for k, row in enumerate(rows):
        assert float(row[0]) == traj.t[k]      # repr round-trips exactly
        assert float(row[1]) == traj.x[k][0]
        assert float(row[3]) == traj.u[k]
        assert row[4] == traj.stage[k]
    # absent values are empty fields, never the string nan
    first, last = rows[0], rows[-1]
    assert first[4] == STAGE_HIGH_ENERGY and first[6] == "" and first[5] != ""
    assert last[4] == STAGE_DONE and last[6] != ""
    assert "nan" not in text

    again = tmp_path / "run2.csv"
    traj.to_csv(again)
    assert filecmp.cmp(path, again, shallow=False)
