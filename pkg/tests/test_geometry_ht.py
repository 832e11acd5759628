"""Finite-horizon support function and the minimum-time oracle.

Oracle values used below, all derivable by hand for omega = 1:
  - H_T(p) = int_0^T |(e^{sA}B, p)| ds; for p = (0, 1) the integrand is
    |cos s|, so H_{2pi} = 4 exactly (and 4 for p = (1, 0) via |sin s|).
  - the point x(s) = (1 - cos s, -sin s) is steered to the origin in
    minimum time exactly s for s in (0, pi]: it is the velocity-reflected
    endpoint of the extremal arc u = +1 from the origin.
"""

import math

import numpy as np
import pytest

from oscdamp.geometry import (
    QuadratureConfig,
    exact_support_HT,
    gauge_rho,
    min_time_oracle,
    support_H,
)


def test_exact_horizon_values():
    assert abs(exact_support_HT([0.0, 1.0], 2 * math.pi, [1.0]) - 4.0) <= 1e-10
    assert abs(exact_support_HT([1.0, 0.0], 2 * math.pi, [1.0]) - 4.0) <= 1e-10
    # half a period of |cos|: integral 2
    assert abs(exact_support_HT([0.0, 1.0], math.pi, [1.0]) - 2.0) <= 1e-10
    assert exact_support_HT([0.3, -0.4], 0.0, [1.0]) == 0.0
    assert exact_support_HT([0.0, 0.0], 5.0, [1.0]) == 0.0
    with pytest.raises(ValueError):
        exact_support_HT([0.0, 1.0], -1.0, [1.0])


def test_horizon_monotone_and_homogeneous():
    om = [1.0, np.sqrt(2.0)]
    p = np.array([0.3, 1.0, -0.5, 0.7])
    vals = [exact_support_HT(p, T, om) for T in (1.0, 3.0, 9.0)]
    assert vals[0] < vals[1] < vals[2]
    assert abs(exact_support_HT(2.5 * p, 3.0, om) - 2.5 * vals[1]) <= 1e-10 * vals[1]


def test_horizon_gradient():
    om = [1.0, np.sqrt(2.0)]
    rng = np.random.default_rng(3)
    for _ in range(4):
        p = rng.standard_normal(4)
        v, g = exact_support_HT(p, 7.3, om, with_grad=True)
        for k in range(4):
            e = np.zeros(4)
            e[k] = 1e-6
            fd = (exact_support_HT(p + e, 7.3, om) - exact_support_HT(p - e, 7.3, om)) / 2e-6
            assert abs(g[k] - fd) <= 1e-5


def test_time_average_converges_to_limit_body():
    # H_T(p)/T -> H(p); the per-period fluctuation is O(1), so at T = 500
    # the gap is well under one percent
    om = np.array([1.0, np.sqrt(2.0)])
    rng = np.random.default_rng(12)
    for _ in range(5):
        p = rng.standard_normal(4)
        Hbar = exact_support_HT(p, 500.0, om) / 500.0
        H = support_H(p, om)
        assert abs(Hbar - H) <= 0.01 * H


def test_min_time_classical_points():
    for s in (0.6, 1.5, 2.4):
        x = np.array([1.0 - math.cos(s), -math.sin(s)])
        tau = min_time_oracle(x, [1.0], tol=1e-4)
        assert abs(tau - s) <= 1e-3


def test_min_time_basics():
    assert min_time_oracle(np.zeros(2), [1.0]) == 0.0
    res = min_time_oracle([0.3, 0.2], [1.0], full_output=True)
    assert res.converged
    assert res.bracket[1] - res.bracket[0] <= 1e-4
    assert res.bracket[0] <= res.time <= res.bracket[1]
    # scaling a state up can only increase the minimum time
    t1 = min_time_oracle([1.0, 1.0], [1.0])
    t2 = min_time_oracle([2.0, 2.0], [1.0])
    assert t2 > t1


def test_min_time_approaches_gauge_far_out():
    # tau(x) = rho(x) + O(1) as the state grows
    x = np.array([50.0, 0.0])
    tau = min_time_oracle(x, [1.0])
    rho = gauge_rho(x, [1.0]).rho
    assert abs(tau - rho) <= 4.0
    assert abs(rho - 0.5 * math.pi * 50.0) <= 1e-5 * rho
