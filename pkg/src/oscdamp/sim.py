"""Closed-loop three-stage simulation with event-localized stage switches.

The full damping pipeline on the physical state x in R^{2N}:

  HighEnergy  u = -sign(B, p(x))         while rho(x) > stage1_to_2_radius,
  Reduced     u = -U sign(B, p(x))       until D^{-1}x enters G_Theta,
  Terminal    u = v(D^{-1}x) + (C, x)    until |x| or the time-to-go is
                                         below the termination tolerances,

integrated with fixed-step RK4 under sample-and-hold: the control is
computed at the step start and held through the step, with a minimal
dwell between sign flips so that momentum-solver noise at the switching
surface cannot chatter.  Stage switches and termination are events,
localized by bisection on the held-control step to 1e-9 in time.

The only deviation from a strictly fixed step is the terminal tail: once
the time-to-go T drops toward the step size, the step is capped at T/4.
A held control is a poor approximation over a step comparable to the
whole remaining horizon; without the cap the state orbits the origin at
the step scale and the T <= T_done event can be straddled invisibly
between samples.

The gauge solver is the cost hotspot, so its maximizing momentum is
warm-started from step to step and rho is recomputed (never interpolated)
at every sample; the monotonicity of rho during HighEnergy is a real
check on the integration, not an artifact of bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .canonical import build_canonical
from .geometry import QuadratureConfig, gauge_rho
from .highenergy import bang_u
from .local import build_controller, local_control, solve_T
from .matching import MatchingPlan, in_G_Theta
from .model import build_system

__all__ = [
    "STAGE_HIGH_ENERGY",
    "STAGE_REDUCED",
    "STAGE_TERMINAL",
    "STAGE_DONE",
    "STAGE_ORDER",
    "GaugeFailure",
    "SimConfig",
    "StageSegment",
    "Trajectory",
    "integrate_stage",
    "run_three_stage",
]

STAGE_HIGH_ENERGY = "HighEnergy"
STAGE_REDUCED = "Reduced"
STAGE_TERMINAL = "Terminal"
STAGE_DONE = "Done"
STAGE_ORDER = (STAGE_HIGH_ENERGY, STAGE_REDUCED, STAGE_TERMINAL, STAGE_DONE)


class GaugeFailure(RuntimeError):
    """Momentum solver failed to converge mid-run."""


@dataclass
class SimConfig:
    """Integration and switching knobs for the three-stage run."""

    step: float = 0.01
    max_time: float = 1e4
    stage1_to_2_radius: float | None = None   # None: 2 * C(A,B) from the plan
    deadband: float = 1e-9
    dwell_min: float | None = None            # None: 5 * step
    x_done: float = 1e-6
    T_done: float = 1e-3
    record_every: int = 1
    # the momentum-solve residual has a grid-dependent floor (a few 1e-7
    # on the default N = 2 grid); rho itself is second-order accurate in
    # the residual, so this tolerance costs ~1e-13 in rho
    gauge_tol: float = 1e-6
    quadrature: QuadratureConfig = dc_field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if self.step <= 0.0:
            raise ValueError("step must be positive")
        if self.max_time <= 0.0:
            raise ValueError("max_time must be positive")
        if self.dwell_min is None:
            self.dwell_min = 5.0 * self.step
        if self.dwell_min < self.step:
            raise ValueError("dwell_min must be at least one step")
        if self.stage1_to_2_radius is not None and self.stage1_to_2_radius <= 0.0:
            raise ValueError("stage1_to_2_radius must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be a positive integer")


class _Recorder:
    """Per-sample column accumulator (rho/T_local/h_resid NaN = absent)."""

    def __init__(self):
        self.t, self.x, self.u, self.stage = [], [], [], []
        self.rho, self.T_local, self.h_resid = [], [], []

    def add(self, t, x, u, stage, extras):
        self.t.append(float(t))
        self.x.append(np.array(x, dtype=np.float64))
        self.u.append(float(u))
        self.stage.append(stage)
        self.rho.append(float(extras.get("rho", math.nan)))
        self.T_local.append(float(extras.get("T_local", math.nan)))
        self.h_resid.append(float(extras.get("h_resid", math.nan)))

    def replace_last(self, t, x, u, stage, extras):
        self.drop_last()
        self.add(t, x, u, stage, extras)

    def drop_last(self):
        for col in (self.t, self.x, self.u, self.stage,
                    self.rho, self.T_local, self.h_resid):
            col.pop()


@dataclass
class StageSegment:
    """Recorded samples of one stage plus where/why it ended."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    rho: np.ndarray
    T_local: np.ndarray
    h_resid: np.ndarray
    event_time: float | None   # None: the time span ran out first
    t_end: float
    x_end: np.ndarray
    steps: int


def _rk4(A, Bu, x, h):
    k1 = A @ x + Bu
    k2 = A @ (x + (0.5 * h) * k1) + Bu
    k3 = A @ (x + (0.5 * h) * k2) + Bu
    k4 = A @ (x + h * k3) + Bu
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_stage(
    field,
    x,
    t_span,
    event_predicate=None,
    *,
    A,
    B,
    step: float,
    dwell_min: float = 0.0,
    record_every: int = 1,
    bisect_tol: float = 1e-9,
    step_fn=None,
):
    """Fixed-step RK4 of xdot = A x + B u with sample-and-hold control.

    field(t, x, prev_u) -> (u, extras) is sampled once per step and the
    returned u held through it (prev_u is the currently held value, None
    at the first sample).  A sign flip of the sample against the held
    value is accepted only if dwell_min has elapsed since the last flip;
    otherwise the held value stays.

    event_predicate(t, x, extras) -> bool is evaluated at every sample
    (extras is None when the predicate must re-derive its own data, as
    during bisection); a truth change between consecutive samples is
    localized to bisect_tol in time on the held-control step, and the
    segment ends at the crossing.

    step_fn(t, x, extras) -> positive real optionally caps the next step
    (the terminal tail uses it; the cap never exceeds `step`).

    Returns (segment, event_time), event_time None if t_span ran out.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    x = np.asarray(x, dtype=np.float64).copy()
    rec = _Recorder()

    u_held, extras = field(t0, x, None)
    t = t0
    last_flip = t0 - dwell_min
    ev = bool(event_predicate(t, x, extras)) if event_predicate else False
    rec.add(t, x, u_held, None, extras)

    def seal(event_time, steps):
        return StageSegment(
            t=np.array(rec.t),
            x=np.array(rec.x),
            u=np.array(rec.u),
            rho=np.array(rec.rho),
            T_local=np.array(rec.T_local),
            h_resid=np.array(rec.h_resid),
            event_time=event_time,
            t_end=rec.t[-1],
            x_end=rec.x[-1],
            steps=steps,
        )

    if ev:
        return seal(t0, 0), t0

    steps = 0
    while t < t1 - 1e-15:
        h = step
        if step_fn is not None:
            h = min(h, float(step_fn(t, x, extras)))
        h = min(h, t1 - t)
        Bu = B * u_held
        x_new = _rk4(A, Bu, x, h)
        t_new = t + h
        u_prop, extras_new = field(t_new, x_new, u_held)
        ev_new = bool(event_predicate(t_new, x_new, extras_new)) if event_predicate \
            else False
        if ev_new != ev:
            lo, hi = 0.0, h
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                flipped = bool(
                    event_predicate(t + mid, _rk4(A, Bu, x, mid), None)
                ) != ev
                if flipped:
                    hi = mid
                else:
                    lo = mid
            te = t + hi
            xe = _rk4(A, Bu, x, hi)
            _, ee = field(te, xe, u_held)
            rec.add(te, xe, u_held, None, ee)
            return seal(te, steps + 1), te
        if u_prop * u_held < 0.0:
            if t_new - last_flip >= dwell_min:
                u_held = u_prop
                last_flip = t_new
        else:
            u_held = u_prop
        x, t, extras, ev = x_new, t_new, extras_new, ev_new
        steps += 1
        if steps % record_every == 0:
            rec.add(t, x, u_held, None, extras)
    if rec.t[-1] < t - 1e-15:
        rec.add(t, x, u_held, None, extras)
    return seal(None, steps), None


@dataclass
class Trajectory:
    """Full recorded run: per-sample columns plus stage accounting."""

    t: np.ndarray
    x: np.ndarray               # (n_samples, 2N)
    u: np.ndarray
    stage: list                 # StageLabel string per sample
    rho: np.ndarray             # NaN where not computed
    T_local: np.ndarray         # NaN outside the terminal stage
    h_resid: np.ndarray         # NaN where not computed
    stage_times: dict           # stage -> duration
    total_time: float
    done: bool
    error: str | None
    rho0: float

    @property
    def samples(self):
        """The sample tuples (t, x, u, stage, rho, T_local, h_resid)."""
        return [
            (self.t[k], self.x[k], self.u[k], self.stage[k],
             self.rho[k], self.T_local[k], self.h_resid[k])
            for k in range(len(self.t))
        ]

    def to_csv(self, path):
        """Write the trajectory; absent (NaN) values are empty fields."""
        N = self.x.shape[1] // 2
        cols = ",".join(f"x{i+1},y{i+1}" for i in range(N))
        header = f"t,{cols},u,stage,rho,T_local,h_resid"

        def num(v):
            return "" if math.isnan(v) else repr(float(v))

        lines = [header]
        for k in range(len(self.t)):
            row = [repr(float(self.t[k]))]
            row += [repr(float(v)) for v in self.x[k]]
            row += [repr(float(self.u[k])), self.stage[k],
                    num(self.rho[k]), num(self.T_local[k]), num(self.h_resid[k])]
            lines.append(",".join(row))
        text = "\n".join(lines) + "\n"
        with open(path, "w") as fh:
            fh.write(text)

    def summary(self, tau_oracle: float | None = None) -> dict:
        """Run summary; ratios to the oracle only when one is supplied."""
        out = {
            "total_time": self.total_time,
            "stage_times": dict(self.stage_times),
            "rho0": self.rho0,
            "ratio_T_over_rho0": self.total_time / self.rho0 if self.rho0 else math.nan,
        }
        if tau_oracle is not None:
            out["tau_oracle"] = float(tau_oracle)
            out["ratio_T_over_tau"] = self.total_time / float(tau_oracle)
        return out


def run_three_stage(x0, system, plan: MatchingPlan, cfg: SimConfig | None = None) -> Trajectory:
    """Run HighEnergy -> Reduced -> Terminal from x0 and record everything.

    system is a model.System or a bare frequency sequence; plan supplies
    Theta, U and C(A,B).  Stages whose switch condition already holds at
    entry have zero duration.  Done is False when max_time runs out or the
    gauge solver fails (the error is recorded on the trajectory).
    """
    if cfg is None:
        cfg = SimConfig()
    if not hasattr(system, "A"):
        system = build_system(system)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (system.dim,):
        raise ValueError(f"x0 must have shape ({system.dim},)")
    if not np.any(x0):
        raise ValueError("x0 must be nonzero")

    cf = build_canonical(system.omegas)
    ctrl = build_controller(system.N)
    A, B = system.A, system.B
    om = system.omegas
    qcfg = cfg.quadrature
    radius = cfg.stage1_to_2_radius
    if radius is None:
        radius = 2.0 * plan.C_of_AB

    cache = {"p": None}

    def gauge(x, t):
        sol = gauge_rho(x, om, qcfg, tol=cfg.gauge_tol, p0=cache["p"])
        if sol.degenerate:
            return sol
        if not sol.converged:
            raise GaugeFailure(f"gauge solver stalled at t={t:.9g}")
        cache["p"] = sol.p
        return sol

    def ham_resid(x, sol):
        if sol.degenerate:
            return math.nan
        return float((A @ x) @ (-sol.p)) + abs(float(sol.p[1::2].sum())) - 1.0

    def bang_field(U):
        def field(t, x, prev_u):
            sol = gauge(x, t)
            u = bang_u(sol.p, U=U, prev_u=prev_u, deadband=cfg.deadband)
            return u, {"rho": sol.rho, "h_resid": ham_resid(x, sol)}
        return field

    def terminal_field(t, x, prev_u):
        X = cf.to_canonical(x)
        cv = solve_T(ctrl, X)
        v = 0.0 if cv.degenerate else local_control(ctrl, X, cv.T)
        sol = gauge(x, t)
        return cf.control_lift(v, x), {
            "rho": sol.rho, "T_local": cv.T, "h_resid": ham_resid(x, sol),
        }

    def ev_radius(t, x, extras):
        rho = extras["rho"] if extras is not None else gauge(x, t).rho
        return rho <= radius

    def ev_handover(t, x, extras):
        return in_G_Theta(cf.to_canonical(x), plan.Theta, ctrl)

    def ev_done(t, x, extras):
        if float(np.linalg.norm(x)) <= cfg.x_done:
            return True
        T = extras["T_local"] if extras is not None \
            else solve_T(ctrl, cf.to_canonical(x)).T
        return T <= cfg.T_done

    def tail_cap(t, x, extras):
        # hold a control only over a small fraction of the remaining
        # horizon: at a quarter of it, the hold error already balances the
        # horizon decrement and the state orbits instead of landing
        T = extras["T_local"] if extras is not None else cfg.step
        return max(0.1 * T, 1e-8)

    # dwell suppresses chatter of the discontinuous bang stages; the
    # terminal law is continuous and holding it through its zero crossings
    # would wreck the landing once the horizon drops below dwell_min
    stages = (
        (STAGE_HIGH_ENERGY, bang_field(1.0), ev_radius, None, cfg.dwell_min),
        (STAGE_REDUCED, bang_field(plan.U), ev_handover, None, cfg.dwell_min),
        (STAGE_TERMINAL, terminal_field, ev_done, tail_cap, 0.0),
    )

    rec = _Recorder()
    stage_times = {name: 0.0 for name, _, _, _, _ in stages}
    t, x = 0.0, x0
    rho0 = math.nan
    done = False
    error = None
    try:
        for name, fld, ev, sfn, dwell in stages:
            seg, t_event = integrate_stage(
                fld, x, (t, cfg.max_time), ev,
                A=A, B=B, step=cfg.step, dwell_min=dwell,
                record_every=cfg.record_every, step_fn=sfn,
            )
            for k in range(len(seg.t)):
                extras = {"rho": seg.rho[k], "T_local": seg.T_local[k],
                          "h_resid": seg.h_resid[k]}
                if rec.t and seg.t[k] <= rec.t[-1] + 1e-15:
                    # stage switch: relabel the shared sample as the new stage
                    rec.replace_last(seg.t[k], seg.x[k], seg.u[k], name, extras)
                else:
                    rec.add(seg.t[k], seg.x[k], seg.u[k], name, extras)
            if math.isnan(rho0) and len(seg.rho) and not math.isnan(seg.rho[0]):
                rho0 = float(seg.rho[0])
            stage_times[name] = seg.t_end - t
            t, x = seg.t_end, seg.x_end
            if t_event is None:
                break
        else:
            done = True
            rec.stage[-1] = STAGE_DONE
    except GaugeFailure as exc:
        error = str(exc)

    return Trajectory(
        t=np.array(rec.t),
        x=np.array(rec.x),
        u=np.array(rec.u),
        stage=list(rec.stage),
        rho=np.array(rec.rho),
        T_local=np.array(rec.T_local),
        h_resid=np.array(rec.h_resid),
        stage_times=stage_times,
        total_time=t,
        done=done,
        error=error,
        rho0=rho0,
    )
