"""Singular costate flow and the stall margin of the bang feedback.

The high-energy feedback u = -sign(B, p(x)) loses its grip where its
switching function vanishes, i.e. on the waist

    sigma = { p : H(p) = 1, (p, B) = 0 }

of the momentum sphere.  Trajectories that linger near sigma are governed
by the singular flow obtained by differentiating the constraint twice:

    pdot = -A^T p + Btilde(p) f(p),
    Btilde = (d2H/dp2)^+ B          (pseudo-inverse; the Hessian's kernel
                                     is the ray through p, by homogeneity),
    f = (p, AB) / (Btilde, B),

where f plays the role of the equivalent control in momentum space.  The
decisive quantity is

    mu = min over singular trajectories of max_t |f(t)|:

below energy ~ 1/mu the bang law can stall, above it cannot.  The radius
handed to the stage logic is C(A,B) = (1 + eps) / mu_hat with a safety
margin; mu_hat from finitely many seeds and a finite horizon can only
overestimate mu, hence the configurable margin rather than a hard bound.

For a single oscillator the waist degenerates to the two points
(+-pi*omega/2, 0) and the flow is trivial; there mu = 2*omega/pi exactly
(the dry-friction stall band rho <= pi/(2*omega) in disguise), which the
generic code reproduces and the tests pin down.

estimate_mu integrates several randomly seeded trajectories with RK4,
re-projecting onto sigma each step (the flow preserves sigma only exactly
in exact arithmetic), discards a burn-in fraction, and takes the smallest
per-trajectory peak |f|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import build_AB
from .geometry import QuadratureConfig, hessian_support_H, support_H_grad

__all__ = [
    "SingularState",
    "MuEstimate",
    "btilde",
    "f_singular",
    "singular_state",
    "singular_rhs",
    "project_sigma",
    "estimate_mu",
]


@dataclass
class SingularState:
    """A point of the singular flow: costate on the waist plus its data."""

    p: np.ndarray        # H(p) = 1 and (p, B) = 0 up to projection tolerance
    f_value: float       # singular control; |f| <= 1 iff the flow is viable
    B_tilde: np.ndarray


def _btilde_full(p, omegas, cfg, cutoff_rel):
    p = np.asarray(p, dtype=np.float64)
    om = np.asarray(omegas, dtype=np.float64)
    pn = float(np.linalg.norm(p))
    if pn == 0.0:
        raise ArithmeticError("kernel direction undefined at p = 0")
    Hs = hessian_support_H(p, om, cfg)
    # homogeneity puts the exact kernel along p at every point, but finite
    # differences do not reproduce it reliably: depending on the step the
    # corresponding eigenvalue can rise above any fixed cutoff, and the raw
    # pseudo-inverse would then divide by it.  Deflate the known direction
    # analytically and invert on the orthogonal complement.
    ph = p / pn
    proj = np.eye(p.size) - np.outer(ph, ph)
    Ht = proj @ Hs @ proj
    Ht = 0.5 * (Ht + Ht.T)
    w, V = np.linalg.eigh(Ht)
    wmax = float(w[-1])
    if wmax <= 0.0:
        raise ArithmeticError("support-function Hessian is not positive")
    keep = w > cutoff_rel * wmax
    # the deflated p direction always lands in the dropped set; any extra
    # drop means the body is numerically flat in a tangent direction
    nullity = int(np.count_nonzero(~keep))
    B = np.zeros_like(p)
    B[1::2] = 1.0
    coeff = (V[:, keep].T @ B) / w[keep]
    return V[:, keep] @ coeff, w, nullity


def btilde(
    p,
    omegas,
    cfg: QuadratureConfig = QuadratureConfig(),
    cutoff_rel: float = 1e-6,
    full_output: bool = False,
):
    """Pseudo-inverse image Btilde = (d2H/dp2)^+ B, a 2N-vector.

    The solve runs on the orthogonal complement of p (the exact kernel of
    the degree -1 homogeneous Hessian); remaining eigenvalues below
    cutoff_rel * lambda_max are dropped too.  For a strictly convex body
    the nullity is exactly 1 (the deflated direction p itself).  With
    full_output, returns (Btilde, eigenvalues, nullity) for diagnostics.
    """
    bt, w, nullity = _btilde_full(p, omegas, cfg, cutoff_rel)
    if full_output:
        return bt, w, nullity
    return bt


def _f_and_btilde(p, omegas, cfg, cutoff_rel, denom_cutoff):
    p = np.asarray(p, dtype=np.float64)
    bt, _, _ = _btilde_full(p, omegas, cfg, cutoff_rel)
    denom = float(bt[1::2].sum())  # (Btilde, B)
    if abs(denom) < denom_cutoff:
        raise ArithmeticError("(Btilde, B) ~ 0: singular flow undefined here")
    f = float(p[0::2].sum()) / denom  # (p, AB) = sum of xi components
    return f, bt


def f_singular(
    p,
    omegas,
    cfg: QuadratureConfig = QuadratureConfig(),
    cutoff_rel: float = 1e-6,
    denom_cutoff: float = 1e-10,
) -> float:
    """Equivalent control f = (p, AB)/(Btilde, B) of the singular flow.

    A vanishing denominator means the waist geometry is degenerate at p;
    that is reported as an error rather than patched.
    """
    f, _ = _f_and_btilde(p, omegas, cfg, cutoff_rel, denom_cutoff)
    return f


def singular_state(
    p,
    omegas,
    cfg: QuadratureConfig = QuadratureConfig(),
    cutoff_rel: float = 1e-6,
    denom_cutoff: float = 1e-10,
) -> SingularState:
    """Evaluate the full singular data (f and B_tilde) at a waist point."""
    p = np.asarray(p, dtype=np.float64)
    f, bt = _f_and_btilde(p, omegas, cfg, cutoff_rel, denom_cutoff)
    return SingularState(p=p.copy(), f_value=f, B_tilde=bt)


def singular_rhs(p, A, omegas, cfg, cutoff_rel):
    f, bt = _f_and_btilde(p, omegas, cfg, cutoff_rel, 1e-10)
    return -A.T @ p + bt * f, f


@dataclass
class MuEstimate:
    """Stall-margin estimate and the radius handed to the stage logic."""

    mu_hat: float
    C_of_AB: float                  # mu_hat^-1 * (1 + epsilon_margin)
    epsilon_margin: float
    per_trajectory_max_f: np.ndarray  # peak |f| per trajectory after burn-in
    trajectories_scanned: int
    n_steps: int
    step: float
    t_horizon: float
    degenerate: bool                # N = 1: waist is two points, no flow


def project_sigma(p, omegas, cfg: QuadratureConfig = QuadratureConfig()):
    """Project onto the waist: remove the B-component, renormalize H = 1."""
    p = np.asarray(p, dtype=np.float64).copy()
    p[1::2] -= p[1::2].sum() / (p.size // 2)
    H, _ = support_H_grad(p, omegas, cfg)
    if H <= 0.0:
        raise ArithmeticError("projection collapsed the momentum")
    return p / H


def estimate_mu(
    system,
    n_seeds: int = 8,
    t_horizon: float | None = None,
    step: float | None = None,
    cfg: QuadratureConfig = QuadratureConfig(),
    seed: int = 0,
    burn_frac: float = 0.2,
    epsilon_margin: float = 0.1,
    cutoff_rel: float = 1e-6,
) -> MuEstimate:
    """Estimate mu by integrating seeded singular trajectories.

    system is a System or a bare frequency sequence.  Defaults: step is
    1e-3 of the fastest period, t_horizon 50 periods of the slowest
    oscillator, burn-in 20%.  Each RK4 step is followed by re-projection
    onto the waist.  mu_hat is the minimum over seeds of the post-burn-in
    peak |f|; C_of_AB = (1 + epsilon_margin)/mu_hat.

    N = 1 short-circuits: the waist is the two points (+-pi*omega/2, 0),
    where the generic f evaluates to +-2*omega/pi; no integration.
    """
    if n_seeds < 8:
        raise ValueError("need n_seeds >= 8 to scan the waist")
    om = np.asarray(getattr(system, "omegas", system), dtype=np.float64)
    N = om.size
    A, _ = build_AB(om)

    if N == 1:
        p = project_sigma(np.array([np.pi * om[0] / 2.0, 0.0]), om, cfg)
        mu = abs(f_singular(p, om, cfg, cutoff_rel))
        return MuEstimate(
            mu_hat=mu,
            C_of_AB=(1.0 + epsilon_margin) / mu,
            epsilon_margin=epsilon_margin,
            per_trajectory_max_f=np.array([mu]),
            trajectories_scanned=1,
            n_steps=0,
            step=0.0,
            t_horizon=0.0,
            degenerate=True,
        )

    if step is None:
        step = 1e-3 * 2.0 * np.pi / float(om.max())
    if t_horizon is None:
        t_horizon = 50.0 * 2.0 * np.pi / float(om.min())
    h = float(step)
    n_steps = int(np.ceil(float(t_horizon) / h))
    burn = int(burn_frac * n_steps)

    rng = np.random.default_rng(seed)
    peaks = np.empty(n_seeds)
    for s in range(n_seeds):
        p = project_sigma(rng.normal(size=2 * N), om, cfg)
        peak = 0.0
        for k in range(n_steps):
            k1, f1 = singular_rhs(p, A, om, cfg, cutoff_rel)
            k2, _ = singular_rhs(p + 0.5 * h * k1, A, om, cfg, cutoff_rel)
            k3, _ = singular_rhs(p + 0.5 * h * k2, A, om, cfg, cutoff_rel)
            k4, _ = singular_rhs(p + h * k3, A, om, cfg, cutoff_rel)
            p = project_sigma(p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), om, cfg)
            if k >= burn:
                peak = max(peak, abs(f1))
        peaks[s] = peak
    mu = float(peaks.min())
    return MuEstimate(
        mu_hat=mu,
        C_of_AB=(1.0 + epsilon_margin) / mu,
        epsilon_margin=epsilon_margin,
        per_trajectory_max_f=peaks,
        trajectories_scanned=n_seeds,
        n_steps=n_steps,
        step=h,
        t_horizon=float(t_horizon),
        degenerate=False,
    )
