"""Gluing the three stages: handover region and intermediate amplitude.

The terminal controller of local.py owns the canonical-coordinate region

    G_Theta = { X : (Q delta(Theta) X, delta(Theta) X) <= 1 },

on which its time-to-go is at most Theta.  Two conditions make the splice
with the bang stages admissible, both expressed through q = Q^{-1} and the
reduction x = D X:

  * amplitude condition (choose_Theta): the physical feedback share
    (C, x) of the lifted control must satisfy |C x| <= 1/2 on G_Theta,
    leaving 1/2 for the canonical control.  The sharp value of the left
    side is (q v, v)^{1/2} with v = delta(Theta)^{-1} D^T C^T, strictly
    increasing in Theta, so the critical Theta* is a clean root and
    Theta = (1 - margin) Theta* is taken.

  * containment condition (choose_U): the reduced-amplitude bang stage
    parks the state near the gauge ball rho <= U * C_AB, so that ball must
    sit inside G_Theta.  By support functions this reads

        U * C_AB * H((D^T)^{-1} p) <= (delta^{-1} q delta^{-1} p, p)^{1/2}

    for every momentum p; U is set to (1 - margin) times the worst-case
    ratio over the momentum sphere (low-discrepancy probes plus local
    descent from the best candidates), clamped to (0, 1].

Both boundaries have exact samplers (Cholesky for the ellipsoid, the dual
map x = r * dH/dp for the gauge sphere), used by the verification suite to
check the containment and the strip bound by Monte-Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from .canonical import CanonicalForm
from .geometry import QuadratureConfig, grad_support_H, support_H_grad_batch
from .local import LocalController, g_form, q_gram

__all__ = [
    "cond_B_value",
    "choose_Theta",
    "cond_A_ratio",
    "choose_U",
    "in_G_Theta",
    "sample_G_boundary",
    "sample_gauge_boundary",
    "MatchingPlan",
    "build_plan",
]


def _q_float(n: int) -> np.ndarray:
    return np.array(q_gram(n), dtype=np.float64)


def _delta_inv(Theta: float, n: int) -> np.ndarray:
    return float(Theta) ** np.arange(1, n + 1, dtype=np.float64)


def cond_B_value(Theta: float, cf: CanonicalForm, ctrl: LocalController) -> float:
    """Sharp maximum of |C x| over G_Theta: (q v, v)^{1/2}, v = delta^{-1} D^T C^T."""
    n = ctrl.dim
    v = _delta_inv(Theta, n) * (cf.D.T @ cf.C)
    return float(np.sqrt(v @ _q_float(n) @ v))


def choose_Theta(
    cf: CanonicalForm,
    ctrl: LocalController,
    margin: float = 0.05,
    tol: float = 1e-12,
    full_output: bool = False,
):
    """Largest admissible handover horizon.

    Solves cond_B_value(Theta*) = 1/2 (the value is strictly increasing
    and spans (0, inf)) and returns (1 - margin) Theta*; with full_output,
    returns the pair ((1 - margin) Theta*, Theta*).
    """
    if not (0.0 <= margin < 1.0):
        raise ValueError("margin must be in [0, 1)")
    lo = hi = 1.0
    v = cond_B_value(1.0, cf, ctrl)
    if v < 0.5:
        while cond_B_value(hi, cf, ctrl) < 0.5:
            hi *= 2.0
            if hi > 1e12:
                raise ArithmeticError("handover horizon bracket diverged")
        lo = hi / 2.0
    else:
        while cond_B_value(lo, cf, ctrl) > 0.5:
            lo *= 0.5
            if lo < 1e-12:
                raise ArithmeticError("handover horizon bracket vanished")
        hi = lo * 2.0
    from scipy.optimize import brentq

    theta_star = float(
        brentq(lambda t: cond_B_value(t, cf, ctrl) - 0.5, lo, hi, xtol=tol, rtol=1e-14)
    )
    if full_output:
        return (1.0 - margin) * theta_star, theta_star
    return (1.0 - margin) * theta_star


def _ratio_parts(P, Theta, cf, ctrl, C_AB, cfg):
    """Numerator/denominator of the containment ratio for momentum rows P."""
    n = ctrl.dim
    W = _delta_inv(Theta, n)[:, None] * _q_float(n) * _delta_inv(Theta, n)[None, :]
    num = np.sqrt(np.einsum("ij,jk,ik->i", P, W, P))
    G = P @ cf.D_inv  # rows (D^T)^{-1} p
    h, _ = support_H_grad_batch(G, cf.omegas, cfg)
    return num, C_AB * h, W


def cond_A_ratio(
    p,
    Theta: float,
    cf: CanonicalForm,
    ctrl: LocalController,
    C_AB: float,
    cfg: QuadratureConfig = QuadratureConfig(),
) -> float:
    """Containment ratio (delta^-1 q delta^-1 p, p)^{1/2} / (C_AB H((D^T)^{-1} p))."""
    num, den, _ = _ratio_parts(np.atleast_2d(p), Theta, cf, ctrl, C_AB, cfg)
    return float(num[0] / den[0])


def choose_U(
    cf: CanonicalForm,
    ctrl: LocalController,
    C_AB: float,
    Theta: float,
    cfg: QuadratureConfig = QuadratureConfig(),
    margin: float = 0.1,
    n_probes: int = 4096,
    seed: int = 0,
    refine_best: int = 8,
    refine_iters: int = 60,
    full_output: bool = False,
):
    """Intermediate amplitude U = (1 - margin) * min ratio, clamped to (0, 1].

    The minimum over momenta is located with scrambled low-discrepancy
    probes on the sphere followed by projected gradient descent from the
    best candidates (the ratio is degree-0 homogeneous, so its gradient is
    automatically tangential).  With full_output, returns (U, info dict)
    with the probe statistics.
    """
    n = ctrl.dim
    m = int(2 ** np.ceil(np.log2(max(n_probes, 4))))
    eng = qmc.Sobol(d=n, scramble=True, seed=seed)
    P = norm.ppf(eng.random(m) * (1 - 2e-12) + 1e-12)
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    num, den, W = _ratio_parts(P, Theta, cf, ctrl, C_AB, cfg)
    ratios = num / den
    order = np.argsort(ratios)

    Dinv = cf.D_inv

    def val_grad(p):
        nu = float(np.sqrt(p @ W @ p))
        g = Dinv.T @ p
        h, gh = support_H_grad_batch(g[None, :], cf.omegas, cfg)
        de = C_AB * float(h[0])
        r = nu / de
        grad = (W @ p) / nu / de - r / de * C_AB * (Dinv @ gh[0])
        return r, grad

    best_r = float(ratios[order[0]])
    best_p = P[order[0]].copy()
    for k in order[:refine_best]:
        p = P[k].copy()
        r, grad = val_grad(p)
        alpha = 0.1
        for _ in range(refine_iters):
            cand = p - alpha * grad
            nrm = np.linalg.norm(cand)
            if nrm == 0.0:
                break
            cand /= nrm
            rc, gc = val_grad(cand)
            if rc < r:
                p, r, grad = cand, rc, gc
                alpha *= 1.3
            else:
                alpha *= 0.5
                if alpha < 1e-12:
                    break
        if r < best_r:
            best_r, best_p = r, p
    U = min(1.0, (1.0 - margin) * best_r)
    if U <= 0.0:
        raise ArithmeticError("containment ratio collapsed; no admissible amplitude")
    info = {
        "min_ratio": best_r,
        "argmin_p": best_p,
        "n_probes": m,
        "probe_min": float(ratios[order[0]]),
    }
    if full_output:
        return U, info
    return U


def in_G_Theta(X, Theta: float, ctrl: LocalController) -> bool:
    """Membership of canonical X in the handover region G_Theta.

    Evaluates the quadratic characterization (Q delta(Theta) X,
    delta(Theta) X) <= 1 directly, avoiding a time-to-go solve; the set is
    closed, so the boundary counts as inside.
    """
    return g_form(ctrl, Theta, X) <= 1.0


def sample_G_boundary(ctrl: LocalController, Theta: float, n: int, seed: int = 0):
    """Exact points on the boundary of G_Theta (canonical coordinates)."""
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(ctrl.Q)
    w = rng.normal(size=(n, ctrl.dim))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    # (Q delta X, delta X) = |w|^2 = 1 for delta X = L^{-T} w
    return np.linalg.solve(L.T, w.T).T * _delta_inv(Theta, ctrl.dim)[None, :]


def sample_gauge_boundary(omegas, r: float, n: int, cfg: QuadratureConfig = QuadratureConfig(), seed: int = 0):
    """Exact points with gauge rho = r via the dual map x = r * dH/dp."""
    om = np.asarray(omegas, dtype=np.float64)
    rng = np.random.default_rng(seed)
    out = np.empty((n, 2 * om.size))
    for i in range(n):
        q = rng.normal(size=2 * om.size)
        out[i] = r * grad_support_H(q, om, cfg)
    return out


@dataclass
class MatchingPlan:
    """Frozen stage-matching data for one frequency set."""

    Theta: float
    Theta_star: float
    theta_margin: float
    U: float
    U_margin: float
    C_of_AB: float
    cond_B_at_Theta: float
    min_ratio: float
    n_probes: int
    seed: int


def build_plan(
    cf: CanonicalForm,
    ctrl: LocalController,
    C_AB: float,
    cfg: QuadratureConfig = QuadratureConfig(),
    theta_margin: float = 0.05,
    U_margin: float = 0.1,
    n_probes: int = 4096,
    seed: int = 0,
) -> MatchingPlan:
    """Compute Theta then U and bundle the result."""
    Theta, Theta_star = choose_Theta(cf, ctrl, margin=theta_margin, full_output=True)
    U, info = choose_U(
        cf, ctrl, C_AB, Theta, cfg,
        margin=U_margin, n_probes=n_probes, seed=seed, full_output=True,
    )
    return MatchingPlan(
        Theta=Theta,
        Theta_star=Theta_star,
        theta_margin=theta_margin,
        U=U,
        U_margin=U_margin,
        C_of_AB=C_AB,
        cond_B_at_Theta=cond_B_value(Theta, cf, ctrl),
        min_ratio=info["min_ratio"],
        n_probes=info["n_probes"],
        seed=seed,
    )
