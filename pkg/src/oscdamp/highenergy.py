"""High-energy bang feedback driven by the gauge's maximizing momentum.

Stage 1 (and stage 2, with a reduced amplitude U) steers with

    u(x) = -sign(B, p(x)),          u_U(x) = U u(x),

where p(x) is the maximizing momentum of the gauge rho(x).  Because the
amplitude coordinates z(p) are exactly invariant under the adjoint free
flow, (A x, p(x)) = 0 and the gauge decays at rate

    d rho / dt = u * (B, p(x)) = -U |(B, p(x))|,

whose long-run average approaches U: one unit of gauge per 1/U time units.
sign is evaluated with a small hysteresis band so that momentum-solver
noise at the switching surface cannot produce chatter; inside the band the
previous control is held (0 if there is none: the band is where the rate
vanishes anyway, and the rule must be deterministic).

mp_residual reports two diagnostics along closed-loop trajectories: the
Hamiltonian defect of the time-optimal problem evaluated on the feedback
costate psi = -p(x), and the forcing term (d2rho/dx2) B u that the pure
adjoint flow omits when the costate is generated by the feedback itself.
Both are observables, not invariants: they shrink like 1/rho with energy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import build_AB
from .geometry import MomentumSolution, QuadratureConfig, gauge_rho

__all__ = [
    "HighEnergyControl",
    "switching",
    "bang_u",
    "control_u",
    "control_uU",
    "rho_rate",
    "mp_residual",
]


@dataclass
class HighEnergyControl:
    """Feedback value plus the momentum data it was computed from."""

    u: float                    # in [-1, 1]
    p: np.ndarray               # maximizing momentum of the gauge at x
    rho: float                  # gauge value
    sign_argument: float        # (B, p) before the sign
    solution: MomentumSolution  # full solver telemetry


def switching(p) -> float:
    """Switching function (B, p): the sum of the eta momentum components."""
    return float(np.asarray(p)[1::2].sum())


def bang_u(p, U: float = 1.0, prev_u: float | None = None, deadband: float = 1e-9) -> float:
    """u = -U sign(B, p) with hysteresis: hold prev_u inside the deadband."""
    s = switching(p)
    if abs(s) <= deadband:
        return float(prev_u) if prev_u is not None else 0.0
    return -U if s > 0.0 else U


def control_u(
    x,
    omegas,
    cfg: QuadratureConfig = QuadratureConfig(),
    prev_u: float | None = None,
    deadband: float = 1e-9,
    tol: float = 1e-8,
    p0=None,
) -> HighEnergyControl:
    """Full-amplitude bang feedback u(x) = -sign(B, p(x)).

    A non-converged momentum solve is passed through in .solution; the
    caller decides whether to trust it.  x = 0 (degenerate gauge) yields
    u = 0.
    """
    sol = gauge_rho(x, omegas, cfg, tol=tol, p0=p0)
    if sol.degenerate:
        return HighEnergyControl(
            u=0.0, p=sol.p, rho=0.0, sign_argument=0.0, solution=sol
        )
    return HighEnergyControl(
        u=bang_u(sol.p, prev_u=prev_u, deadband=deadband),
        p=sol.p,
        rho=sol.rho,
        sign_argument=switching(sol.p),
        solution=sol,
    )


def control_uU(
    x,
    U: float,
    omegas,
    cfg: QuadratureConfig = QuadratureConfig(),
    prev_u: float | None = None,
    deadband: float = 1e-9,
    tol: float = 1e-8,
    p0=None,
) -> HighEnergyControl:
    """Reduced-amplitude feedback u_U(x) = U u(x) for U in (0, 1]."""
    if not 0.0 < U <= 1.0:
        raise ValueError("amplitude U must lie in (0, 1]")
    prev = None if prev_u is None else float(prev_u) / U
    ctl = control_u(x, omegas, cfg, prev_u=prev, deadband=deadband, tol=tol, p0=p0)
    ctl.u *= U
    return ctl


def rho_rate(u: float, p) -> float:
    """Exact gauge decay rate d rho/dt = u * (B, p) between switches."""
    return float(u) * switching(p)


def mp_residual(
    x,
    omegas,
    cfg: QuadratureConfig = QuadratureConfig(),
    u: float | None = None,
    fd_step: float = 1e-5,
    tol: float = 1e-8,
):
    """Maximum-principle diagnostics for the feedback at state x.

    Returns (hamiltonian_residual, adjoint_defect):

    hamiltonian_residual: (Ax, psi) + |(B, psi)| - 1 with psi = -p(x); the
        first term vanishes identically (z-invariance of the adjoint
        flow), so this is |(B, p)| - 1, whose time average tends to 0 at
        high energy while rho(x(t)) decays at unit rate.
    adjoint_defect: the 2N-vector (d2rho/dx2) B u, evaluated as a central
        difference of the momentum field p = drho/dx along B; this is the
        forcing the pure adjoint equation omits, of size O(1/rho).

    u defaults to the bang value at x.
    """
    x = np.asarray(x, dtype=np.float64)
    om = np.asarray(omegas, dtype=np.float64)
    A, B = build_AB(om)
    sol = gauge_rho(x, om, cfg, tol=tol)
    if sol.degenerate:
        return -1.0, np.zeros_like(x)
    psi = -sol.p
    ham = float(A @ x @ psi) + abs(switching(psi)) - 1.0
    if u is None:
        u = bang_u(sol.p)
    h = fd_step * max(1.0, float(np.linalg.norm(x)))
    sp = gauge_rho(x + h * B, om, cfg, tol=tol, p0=sol.p)
    sm = gauge_rho(x - h * B, om, cfg, tol=tol, p0=sol.p)
    defect = float(u) * (sp.p - sm.p) / (2.0 * h)
    return ham, defect
