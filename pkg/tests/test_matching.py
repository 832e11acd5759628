"""Stage matching: handover horizon Theta, amplitude U, and G_Theta.

Closed form for one oscillator at omega = 1: C = (1, 0) and
D = [[0, -1], [1, 0]] give v = delta(Theta)^{-1} D^T C^T = (0, -Theta^2),
so the strip value is (q v, v)^{1/2} = Theta^2/sqrt(12) and the critical
horizon solving = 1/2 is Theta* = 3^{1/4}.
"""

import numpy as np
import pytest

from oscdamp.canonical import build_canonical
from oscdamp.geometry import QuadratureConfig, gauge_rho
from oscdamp.local import build_controller, g_form, solve_T
from oscdamp.matching import (
    build_plan,
    choose_Theta,
    choose_U,
    cond_A_ratio,
    cond_B_value,
    in_G_Theta,
    sample_G_boundary,
    sample_gauge_boundary,
)

CF1 = build_canonical([1.0])
CTRL1 = build_controller(1)
C_AB1 = 1.7278975033285064  # the mu-derived demo value for omega = 1


def test_cond_B_closed_form():
    for Theta in (0.5, 1.0, 1.7):
        assert cond_B_value(Theta, CF1, CTRL1) == pytest.approx(
            Theta**2 / np.sqrt(12.0), rel=1e-14
        )


def test_choose_theta_root_and_margin():
    Theta, Theta_star = choose_Theta(CF1, CTRL1, full_output=True)
    assert abs(Theta_star - 3.0**0.25) <= 1e-10
    assert Theta == pytest.approx(0.95 * Theta_star, rel=1e-14)
    assert choose_Theta(CF1, CTRL1, margin=0.0) == pytest.approx(Theta_star, rel=1e-14)
    # the strip value is increasing, and at the returned Theta it fills
    # [1 - 2 margin, 1] of the budget 1/2
    assert cond_B_value(2.0 * Theta_star, CF1, CTRL1) > cond_B_value(
        Theta_star, CF1, CTRL1
    )
    assert 0.9 * 0.5 <= cond_B_value(Theta, CF1, CTRL1) <= 0.5
    for bad in (-0.1, 1.0):
        with pytest.raises(ValueError):
            choose_Theta(CF1, CTRL1, margin=bad)


def test_choose_U_scaling_clamp_and_refinement():
    Theta = choose_Theta(CF1, CTRL1)
    U1, info = choose_U(CF1, CTRL1, C_AB1, Theta, full_output=True)
    # the ratio is linear in 1/C, so halving C doubles the unclamped U
    U2 = choose_U(CF1, CTRL1, C_AB1 / 2.0, Theta)
    assert U2 == pytest.approx(2.0 * U1, rel=1e-12)
    assert choose_U(CF1, CTRL1, 0.01, Theta) == 1.0
    assert U1 == pytest.approx(0.9 * info["min_ratio"], rel=1e-14)
    assert info["n_probes"] == 4096
    assert info["min_ratio"] <= info["probe_min"]
    # the reported minimizer reproduces the reported value independently
    r = cond_A_ratio(info["argmin_p"], Theta, CF1, CTRL1, C_AB1)
    assert r == pytest.approx(info["min_ratio"], rel=1e-12)


def test_plan_frozen_values():
    # regression pins: deterministic probes (scrambled Sobol, fixed seed)
    plan = build_plan(CF1, CTRL1, C_AB1)
    assert abs(plan.Theta - 1.2502703123048882) <= 1e-9
    assert abs(plan.Theta_star - 1.316074012952514) <= 1e-9
    assert abs(plan.U - 0.19561583030982985) <= 1e-9
    assert abs(plan.min_ratio - 0.21735092256647762) <= 1e-9
    assert abs(plan.cond_B_at_Theta - 0.45125) <= 1e-10
    assert plan.C_of_AB == C_AB1
    assert (plan.theta_margin, plan.U_margin) == (0.05, 0.1)


def test_in_G_Theta_membership():
    Theta = choose_Theta(CF1, CTRL1)
    assert in_G_Theta(np.zeros(2), Theta, CTRL1)
    Xb = sample_G_boundary(CTRL1, Theta, 50, seed=1)
    for X in Xb:
        # samples sit within an ulp of the boundary, where closed-set
        # membership is decided by the form's last rounding; require
        # agreement with the form there and strict answers off it
        assert in_G_Theta(X, Theta, CTRL1) == (g_form(CTRL1, Theta, X) <= 1.0)
        assert in_G_Theta((1.0 - 1e-9) * X, Theta, CTRL1)
        assert not in_G_Theta((1.0 + 1e-9) * X, Theta, CTRL1)
    # the Gram form and the level-1 time-to-go give the same region
    rng = np.random.default_rng(6)
    for _ in range(100):
        X = rng.normal(size=2) * Theta
        if abs(g_form(CTRL1, Theta, X) - 1.0) <= 1e-9:
            continue
        assert in_G_Theta(X, Theta, CTRL1) == (solve_T(CTRL1, X, level=1).T <= Theta)


def test_sample_G_boundary_exact():
    Theta = choose_Theta(CF1, CTRL1)
    Xb = sample_G_boundary(CTRL1, Theta, 200, seed=1)
    for X in Xb:
        assert abs(g_form(CTRL1, Theta, X) - 1.0) <= 1e-12


def test_sample_gauge_boundary_dual_map():
    xs = sample_gauge_boundary([1.0], 3.0, 50, seed=2)
    for x in xs:
        assert abs((np.pi / 2.0) * np.hypot(x[0], x[1]) - 3.0) <= 1e-6
    om2 = [1.0, np.sqrt(2.0)]
    cfg = QuadratureConfig()
    for x in sample_gauge_boundary(om2, 3.0, 8, seed=2):
        assert abs(gauge_rho(x, om2, cfg, tol=1e-6).rho - 3.0) <= 1e-8


def test_strip_and_containment_pointwise():
    # reduced-size echo of the Monte-Carlo verification: boundary points
    # of G_Theta keep |Cx| <= 1/2, and the parked gauge ball sits inside
    plan = build_plan(CF1, CTRL1, C_AB1)
    for X in sample_G_boundary(CTRL1, plan.Theta, 2000, seed=3):
        assert abs(CF1.C @ (CF1.D @ X)) <= 0.5 + 1e-9
    r_park = plan.U * plan.C_of_AB
    for x in sample_gauge_boundary([1.0], r_park, 500, seed=4):
        assert in_G_Theta(CF1.D_inv @ x, plan.Theta, CTRL1)
