"""Asymptotic reachable-set geometry for oscillator ensembles.

For one bounded scalar control, the reachable set D(T) of the ensemble grows
linearly: D(T) ~ T * Omega, where Omega is a fixed convex body.  Everything
in this module is built from the support function of that body.  Writing a
momentum (costate) vector as p = (xi_1, eta_1, ..., xi_N, eta_N) and

    z_i(p) = sqrt(eta_i^2 + xi_i^2 / omega_i^2),

the support function of Omega is

    H(p) = h(z(p)),
    h(z) = average over the N-torus of |z_1 cos phi_1 + ... + z_N cos phi_N|,

the ergodic limit of the finite-horizon support function

    H_T(p) = integral_0^T |sum_i (eta_i cos omega_i s + (xi_i/omega_i) sin omega_i s)| ds,

valid for non-resonant frequencies (H_T = T*h + o(T)).  For N = 1 the torus
average is (2/pi)|z|.

The gauge (Minkowski functional) of Omega,

    rho(x) = max { (x, p) : H(p) = 1 },

measures how many time units of control effort the state x is worth; the
maximizing momentum p(x) solves the momentum equation dH/dp = x / rho and is
the costate that drives the high-energy feedback.  gauge_rho computes both by
projected gradient ascent on the sphere.

h is evaluated by uniform tensor-grid quadrature for N <= 3 and fixed-seed
Monte-Carlo for larger N, with the absolute value smoothed on the scale
smooth_rel * |z| so that H is differentiable (see oscdamp._kernels).  The
finite-horizon H_T is computed exactly: the integrand's antiderivative is
closed-form, so the integral reduces to locating the sign changes.

min_time_oracle inverts the reachable sets: the least T with x steerable to
the origin.  Because the spectrum is purely imaginary and the control set is
symmetric, steering x to 0 in time T is equivalent to membership of the
velocity-reflected point in D(T), and membership is decided by maximizing
(x, p)/H_T(p) over momenta.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from . import _kernels

__all__ = [
    "QuadratureConfig",
    "MomentumSolution",
    "MinTimeResult",
    "z_of_p",
    "h_frak",
    "grad_h",
    "support_H",
    "grad_support_H",
    "support_H_grad",
    "support_H_grad_batch",
    "hessian_support_H",
    "gauge_rho",
    "exact_support_HT",
    "min_time_oracle",
]

_DEFAULT_POINTS = {1: 8192, 2: 256, 3: 96}


@dataclass(frozen=True)
class QuadratureConfig:
    """How to evaluate the torus average h and its gradient.

    scheme: "auto" picks tensor-grid for N <= 3 and monte-carlo above.
    points_per_axis: tensor grid size per angle axis; None uses per-N
        defaults (8192 for N=1, 256 for N=2, 96 for N=3).  The N=1 default
        is large because the closed-form checks demand ~1e-7 accuracy and
        a one-dimensional grid is essentially free.
    samples / seed: Monte-Carlo sample count and RNG seed (fixed seed keeps
        every evaluation deterministic).
    deterministic: when False the Monte-Carlo seed is drawn fresh per cache
        fill; leave True for reproducible results (the default everywhere).
    smooth_rel: |.| is smoothed to sqrt(s^2 + (smooth_rel*|z|)^2); keeps H
        convex, homogeneous and differentiable.
    """

    scheme: str = "auto"
    points_per_axis: int | None = None
    samples: int = 1_000_000
    seed: int = 0
    deterministic: bool = True
    smooth_rel: float = 1e-4

    def __post_init__(self):
        if self.scheme not in ("auto", "tensor-grid", "monte-carlo"):
            raise ValueError(f"unknown quadrature scheme: {self.scheme!r}")
        if self.points_per_axis is not None and self.points_per_axis < 8:
            raise ValueError("points_per_axis must be >= 8")
        if self.samples < 100:
            raise ValueError("samples must be >= 100")
        if not (0.0 < self.smooth_rel <= 1e-2):
            raise ValueError("smooth_rel must be in (0, 1e-2]")

    def effective_scheme(self, N: int) -> str:
        if self.scheme == "auto":
            return "tensor-grid" if N <= 3 else "monte-carlo"
        return self.scheme

    def effective_points(self, N: int) -> int:
        if self.points_per_axis is not None:
            return self.points_per_axis
        return _DEFAULT_POINTS.get(N, 64)


@dataclass
class MomentumSolution:
    """Result of the gauge problem: rho(x) and its maximizing momentum.

    p is normalized so H(p) = 1; then (x, p) = rho and dH/dp(p) = x/rho up
    to `residual`.  degenerate marks the x = 0 case where p is undefined.
    """

    rho: float
    p: np.ndarray
    converged: bool
    iterations: int
    residual: float
    degenerate: bool = False


@dataclass
class MinTimeResult:
    """Bracketed minimum steering time to the origin."""

    time: float
    bracket: tuple
    evaluations: int
    converged: bool


@lru_cache(maxsize=16)
def _cos_table(n: int) -> np.ndarray:
    t = np.cos(2.0 * np.pi * np.arange(n) / n)
    t.setflags(write=False)
    return t


@lru_cache(maxsize=4)
def _mc_cosines(N: int, samples: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = np.cos(rng.uniform(0.0, 2.0 * np.pi, size=(samples, N)))
    t.setflags(write=False)
    return t


def _h_grad_batch_z(Z: np.ndarray, cfg: QuadratureConfig):
    """Kernel dispatch: h(z) and dh/dz for a batch of z rows."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    N = Z.shape[1]
    if cfg.effective_scheme(N) == "tensor-grid":
        n = cfg.effective_points(N)
        if n**N > 2**24:
            raise ValueError(
                f"tensor grid {n}^{N} too large; use scheme='monte-carlo'"
            )
        return _kernels.tensor_h_grad(Z, _cos_table(n), cfg.smooth_rel)
    seed = cfg.seed if cfg.deterministic else np.random.SeedSequence().entropy
    return _kernels.mc_h_grad(Z, _mc_cosines(N, cfg.samples, seed), cfg.smooth_rel)


def z_of_p(p, omegas) -> np.ndarray:
    """Amplitude coordinates z_i = sqrt(eta_i^2 + xi_i^2/omega_i^2)."""
    p = np.asarray(p, dtype=np.float64)
    om = np.asarray(omegas, dtype=np.float64)
    xi = p[..., 0::2]
    eta = p[..., 1::2]
    return np.sqrt(eta * eta + (xi / om) ** 2)


def h_frak(z, cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """Torus average of |sum_i z_i cos phi_i| (smoothed)."""
    h, _ = _h_grad_batch_z(np.atleast_2d(z), cfg)
    return float(h[0])


def grad_h(z, cfg: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """Gradient of h_frak; the average of sign(S) cos phi_i per component."""
    _, g = _h_grad_batch_z(np.atleast_2d(z), cfg)
    return g[0]


def _chain_to_p(P: np.ndarray, Z: np.ndarray, G: np.ndarray, om: np.ndarray):
    """Convert z-gradients G (rows dh/dz) to p-gradients at momenta P."""
    xi = P[:, 0::2]
    eta = P[:, 1::2]
    safe = np.where(Z > 0.0, Z, 1.0)
    fx = np.where(Z > 0.0, xi / (om**2 * safe), 0.0)
    fe = np.where(Z > 0.0, eta / safe, 0.0)
    out = np.empty_like(P)
    out[:, 0::2] = G * fx
    out[:, 1::2] = G * fe
    return out


def support_H_grad_batch(P, omegas, cfg: QuadratureConfig = QuadratureConfig()):
    """H(p) and dH/dp for a batch of momenta (rows of P)."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    om = np.asarray(omegas, dtype=np.float64)
    Z = z_of_p(P, om)
    h, G = _h_grad_batch_z(Z, cfg)
    return h, _chain_to_p(P, Z, G, om)


def support_H_grad(p, omegas, cfg: QuadratureConfig = QuadratureConfig()):
    h, g = support_H_grad_batch(np.atleast_2d(p), omegas, cfg)
    return float(h[0]), g[0]


def support_H(p, omegas, cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """Support function H(p) = h(z(p)) of the limit body Omega."""
    return support_H_grad(p, omegas, cfg)[0]


def grad_support_H(p, omegas, cfg: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """dH/dp; degree-0 homogeneous, equals the boundary point of Omega
    supporting the direction p."""
    return support_H_grad(p, omegas, cfg)[1]


def hessian_support_H(
    p,
    omegas,
    cfg: QuadratureConfig = QuadratureConfig(),
    fd_step_rel: float = 5e-3,
):
    """Second derivative of H by central differences of the gradient.

    The step is relative to |p| and deliberately coarse: the quadrature's
    gradient is only piecewise smooth below the grid's facet scale, so the
    step must average over many facets.  The exact Hessian has kernel along
    p (degree-1 homogeneity); the symmetrized estimate inherits it to
    O(step^2).  Returns the (2N, 2N) matrix.
    """
    p = np.asarray(p, dtype=np.float64)
    n = p.size
    d = fd_step_rel * float(np.linalg.norm(p))
    if d == 0.0:
        raise ValueError("hessian undefined at p = 0")
    P = np.repeat(p[None, :], 2 * n, axis=0)
    for a in range(n):
        P[2 * a, a] += d
        P[2 * a + 1, a] -= d
    _, G = support_H_grad_batch(P, omegas, cfg)
    H = (G[0::2] - G[1::2]) / (2.0 * d)
    return 0.5 * (H + H.T)


def _init_momentum(x: np.ndarray, om: np.ndarray) -> np.ndarray:
    """Warm start (omega_i^2 x_i, y_i): the exact maximizer for N = 1."""
    p0 = np.empty_like(x)
    p0[0::2] = om**2 * x[0::2]
    p0[1::2] = x[1::2]
    nrm = np.linalg.norm(p0)
    if nrm == 0.0:
        p0 = np.zeros_like(x)
        p0[1::2] = 1.0
        nrm = np.linalg.norm(p0)
    return p0 / nrm


def _maximize_ratio(x, eval_H_grad, p0, tol, max_iter):
    """Maximize (x, p) / H(p) over the unit sphere by gradient ascent.

    eval_H_grad(p) -> (H, dH/dp) with H positive and degree-1 homogeneous,
    which makes the ratio degree-0 (its gradient is automatically tangent).
    Backtracking line search with an adaptive step.  Returns
    (p_unit, ratio, residual, iterations) where residual is the norm of
    dH/dp - x/ratio, the first-order condition at H(p) = 1.
    """
    p = np.asarray(p0, dtype=np.float64)
    p = p / np.linalg.norm(p)
    H, g = eval_H_grad(p)
    R = float(np.dot(x, p)) / H
    alpha = 1.0
    it = 0
    resid = np.inf
    for it in range(1, max_iter + 1):
        if R > 0.0:
            resid = float(np.linalg.norm(g - x / R))
            if resid <= tol:
                return p, R, resid, it
        grad_R = (x - R * g) / H
        step_ok = False
        while alpha > 1e-18:
            cand = p + alpha * grad_R
            nrm = np.linalg.norm(cand)
            if nrm > 0.0:
                cand /= nrm
                Hc, gc = eval_H_grad(cand)
                Rc = float(np.dot(x, cand)) / Hc
                if Rc > R:
                    p, H, g, R = cand, Hc, gc, Rc
                    alpha *= 1.25
                    step_ok = True
                    break
            alpha *= 0.5
        if not step_ok:
            break
    if R > 0.0:
        resid = float(np.linalg.norm(g - x / R))
    return p, R, resid, it


def _newton_polish(x, om, cfg, p, target, max_steps=3):
    """Newton on the stationarity system (dH/dp = x/rho, H(p) = 1).

    The ratio line search can only certify improvements down to about
    sqrt(machine eps); a Newton step with the finite-difference Hessian
    cuts the residual quadratically past that wall.  The bordered KKT
    matrix is nonsingular wherever the limit body is strictly convex at
    the maximizer; a singular solve just ends the polish.  Returns the
    best iterate seen: (p, rho, residual, evals).
    """
    n = p.size
    best = None
    for k in range(max_steps + 1):
        H, g = support_H_grad(p, om, cfg)
        if H <= 0.0:
            break
        p = p / H  # degree-1 homogeneity: renormalizes H to 1 exactly
        rho = float(x @ p)
        if rho <= 0.0:
            break
        r = g - x / rho
        resid = float(np.linalg.norm(r))
        if best is None or resid < best[2]:
            best = (p.copy(), rho, resid)
        if resid <= target or k == max_steps:
            break
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = hessian_support_H(p, om, cfg)
        J[:n, n] = x / rho**2
        J[n, :n] = g
        rhs = np.concatenate([-r, [0.0]])
        try:
            step = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        p = p + step[:n]
    return best


def gauge_rho(
    x,
    omegas,
    cfg: QuadratureConfig = QuadratureConfig(),
    tol: float = 1e-8,
    max_iter: int = 500,
    p0=None,
) -> MomentumSolution:
    """Gauge rho(x) of the limit body and the maximizing momentum.

    Solves max {(x, p) : H(p) = 1}.  The reported residual is the norm of
    the momentum-equation defect dH/dp - x/rho, measured against the scale
    max(1, |x|/rho); convergence means residual <= tol * that scale.
    x = 0 returns rho = 0 with the degenerate flag set.
    """
    x = np.asarray(x, dtype=np.float64)
    om = np.asarray(omegas, dtype=np.float64)
    if x.shape != (2 * om.size,):
        raise ValueError("state length must be 2 * len(omegas)")
    if not np.any(x):
        return MomentumSolution(
            rho=0.0,
            p=np.zeros_like(x),
            converged=True,
            iterations=0,
            residual=0.0,
            degenerate=True,
        )

    start = _init_momentum(x, om) if p0 is None else np.asarray(p0, dtype=np.float64)
    if float(np.dot(x, start)) <= 0.0:
        start = _init_momentum(x, om)

    def ev(p):
        return support_H_grad(p, om, cfg)

    scale = 1.0
    p, R, resid, it = _maximize_ratio(x, ev, start, tol, max_iter)
    scale = max(1.0, float(np.linalg.norm(x)) / R) if R > 0 else 1.0
    if resid > tol * scale and it < max_iter:
        # polish with the tolerance rescaled to the problem's size
        p, R, resid2, it2 = _maximize_ratio(x, ev, p, tol * scale, max_iter - it)
        resid, it = resid2, it + it2
    if resid > tol * scale and p0 is not None and it < max_iter:
        # a warm start can strand the line search on a flat ratio plateau
        # (improvements below float epsilon); retry from the generic init,
        # which is the exact maximizer for N = 1
        p2, R2, resid2, it2 = _maximize_ratio(
            x, ev, _init_momentum(x, om), tol * scale, max_iter - it
        )
        it += it2
        if R2 > R:
            p, R, resid = p2, R2, resid2
    if resid > tol * scale:
        polished = _newton_polish(x, om, cfg, p, tol * scale)
        if polished is not None and polished[2] < resid:
            p, R, resid = polished
            it += 1
    H, _ = support_H_grad(p, om, cfg)
    p_hat = p / H  # H is degree-1 homogeneous, so H(p_hat) = 1 exactly
    return MomentumSolution(
        rho=float(R),
        p=p_hat,
        converged=bool(resid <= tol * scale),
        iterations=it,
        residual=float(resid),
    )


# ---------------------------------------------------------------------------
# exact finite-horizon support function and the minimum-time oracle


def _ht_coeffs(p: np.ndarray, om: np.ndarray):
    """f(s) = sum_i a_i cos(om_i s) + b_i sin(om_i s) for (e^{sA}B, p)."""
    a = p[1::2].copy()
    b = p[0::2] / om
    return a, b


def _ht_f(s, a, b, om):
    s = np.atleast_1d(s)
    arg = np.multiply.outer(s, om)
    return np.cos(arg) @ a + np.sin(arg) @ b


def _ht_roots(a, b, om, T):
    """Sign-change roots of f on [0, T] via dense scan + brentq refinement."""
    w_max = float(om.max())
    ds = (np.pi / w_max) / 20.0
    n = max(int(np.ceil(T / ds)), 8)
    s = np.linspace(0.0, T, n + 1)
    f = _ht_f(s, a, b, om)
    roots = []
    sign = np.sign(f)
    for k in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        roots.append(
            brentq(
                lambda t: float(_ht_f(t, a, b, om)[0]),
                s[k],
                s[k + 1],
                xtol=1e-13,
                rtol=8.9e-16,
            )
        )
    # grid points that are exact zeros are already interval endpoints
    return np.array(roots)


def exact_support_HT(p, T, omegas, with_grad: bool = False):
    """Finite-horizon support function H_T(p) of the reachable set D(T).

    H_T(p) = int_0^T |f(s)| ds with f(s) = (e^{sA}B, p).  f's antiderivative
    is closed-form, so after locating f's sign changes the integral is exact
    (up to root-finding tolerance); no quadrature grid is involved.
    With with_grad=True also returns dH_T/dp, assembled from the same
    closed-form antiderivatives weighted by the interval signs.
    """
    p = np.asarray(p, dtype=np.float64)
    om = np.asarray(omegas, dtype=np.float64)
    if T < 0:
        raise ValueError("horizon T must be >= 0")
    if T == 0 or not np.any(p):
        return (0.0, np.zeros_like(p)) if with_grad else 0.0
    a, b = _ht_coeffs(p, om)
    roots = _ht_roots(a, b, om, T)
    nodes = np.concatenate(([0.0], roots, [T]))
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    signs = np.sign(_ht_f(mids, a, b, om))
    signs[signs == 0.0] = 1.0

    arg = np.multiply.outer(nodes, om)
    sin_n, cos_n = np.sin(arg), np.cos(arg)
    # antiderivative of f
    F = sin_n @ (a / om) - cos_n @ (b / om)
    val = float(np.dot(signs, F[1:] - F[:-1]))
    if not with_grad:
        return val
    # antiderivatives of df/dxi_i = sin(om_i s)/om_i and df/deta_i = cos(om_i s)
    Gxi = -cos_n / om**2
    Geta = sin_n / om
    g = np.empty_like(p)
    g[0::2] = signs @ (Gxi[1:] - Gxi[:-1])
    g[1::2] = signs @ (Geta[1:] - Geta[:-1])
    return val, g


def _reflect_velocities(x: np.ndarray) -> np.ndarray:
    y = np.array(x, dtype=np.float64)
    y[1::2] *= -1.0
    return y


def min_time_oracle(
    x,
    omegas,
    cfg: QuadratureConfig = QuadratureConfig(),
    tol: float = 1e-4,
    inner_tol: float = 1e-9,
    max_expand: int = 200,
    full_output: bool = False,
):
    """Minimum time tau(x) to steer x to the origin with |u| <= 1.

    Time reversal: with purely imaginary spectrum and a symmetric control
    set, x is steerable to 0 in time T iff the velocity-reflected point
    S x = (x_1, -y_1, ...) lies in the forward reachable set D(T).
    Membership is gamma(T) <= 1 where gamma(T) = max_p (Sx, p)/H_T(p), a
    strictly decreasing function of T; the root gamma = 1 is bracketed and
    then polished by a safeguarded secant, so the returned bracket width is
    <= tol.  The asymptotic gauge rho(x) seeds the bracket.

    Returns tau as a float, or the full MinTimeResult (bracket, evaluation
    count, convergence flag) when full_output is set.
    """
    x = np.asarray(x, dtype=np.float64)
    om = np.asarray(omegas, dtype=np.float64)
    y = _reflect_velocities(x)
    if not np.any(y):
        r0 = MinTimeResult(time=0.0, bracket=(0.0, 0.0), evaluations=0, converged=True)
        return r0 if full_output else 0.0

    sol = gauge_rho(y, om, cfg)
    warm = {"p": sol.p / np.linalg.norm(sol.p)}
    evals = 0

    def gamma(T: float) -> float:
        nonlocal evals
        evals += 1

        def ev(p):
            return exact_support_HT(p, T, om, with_grad=True)

        p, R, _, _ = _maximize_ratio(y, ev, warm["p"], inner_tol, 300)
        warm["p"] = p
        return R

    T = max(sol.rho, tol)
    g = gamma(T)
    if g > 1.0:
        lo, glo = T, g
        hi = None
        for _ in range(max_expand):
            T *= 1.4
            g = gamma(T)
            if g <= 1.0:
                hi, ghi = T, g
                break
            lo, glo = T, g
        if hi is None:
            res = MinTimeResult(
                time=lo, bracket=(lo, np.inf), evaluations=evals, converged=False
            )
            return res if full_output else res.time
    else:
        hi, ghi = T, g
        lo = None
        for _ in range(max_expand):
            T *= 0.7
            if T < tol:
                lo, glo = 0.0, np.inf
                break
            g = gamma(T)
            if g > 1.0:
                lo, glo = T, g
                break
            hi, ghi = T, g
        if lo is None:
            lo, glo = 0.0, np.inf

    while hi - lo > tol:
        if np.isfinite(glo) and glo > ghi:
            # secant on log gamma, clamped inside the bracket
            t = lo + (hi - lo) * np.log(glo) / (np.log(glo) - np.log(ghi))
            t = min(max(t, lo + 0.1 * (hi - lo)), hi - 0.1 * (hi - lo))
        else:
            t = 0.5 * (lo + hi)
        g = gamma(t)
        if g > 1.0:
            lo, glo = t, g
        else:
            hi, ghi = t, g

    res = MinTimeResult(
        time=0.5 * (lo + hi), bracket=(lo, hi), evaluations=evals, converged=True
    )
    return res if full_output else res.time
