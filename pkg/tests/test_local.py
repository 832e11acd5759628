"""Terminal controller: exact rational data, the horizon equation, arrival.

Hand values for N = 1 (n = 2): the Gram matrix is [[1/2, 1/6], [1/6, 1/12]],
its exact inverse Q = [[6, -12], [-12, 36]], kappa^2 = 1/6, feedback row
(-3, 6).  With M = diag(1, 2) and the closed loop S = frak_A + frak_B C_frak:
MQ + QM = [[12, -36], [-36, 144]] (positive definite) and
S^T Q + QS = [[-12, 36], [36, -144]] (negative definite); the two being
exact negatives of each other is what makes the time-to-go decay at unit
rate along the closed loop.
"""

from fractions import Fraction

import numpy as np
import pytest

from oscdamp.canonical import canonical_pair
from oscdamp.local import (
    build_controller,
    delta,
    delta_scale,
    g_form,
    local_control,
    q_gram,
    q_inverse_exact,
    simulate_terminal,
    solve_T,
)


def test_gram_matrix_rationals():
    q = q_gram(2)
    assert q[0][0] == Fraction(1, 2)
    assert q[0][1] == Fraction(1, 6)
    assert q[1][1] == Fraction(1, 12)
    q8 = q_gram(8)
    for i in range(8):
        for j in range(8):
            assert q8[i][j] == Fraction(1, (i + j + 2) * (i + j + 1))


def test_exact_inverse_even_integers():
    for n in (2, 4, 6, 8):
        q = q_gram(n)
        Q = q_inverse_exact(n)
        for i in range(n):
            for j in range(n):
                entry = sum(q[i][k] * Q[k][j] for k in range(n))
                assert entry == (1 if i == j else 0)
                assert isinstance(Q[i][j], int)
                assert Q[i][j] % 2 == 0
        N = n // 2
        assert Q[0][0] == 2 * N * (2 * N + 1)


def test_hand_values_and_lyapunov_matrices():
    ctrl = build_controller(1)
    assert ctrl.Q_exact == ((6, -12), (-12, 36))
    assert np.array_equal(ctrl.C_frak, [-3.0, 6.0])
    assert ctrl.kappa_sq == Fraction(1, 6)

    Q = ctrl.Q
    M = np.diag(ctrl.M_frak)
    sym = M @ Q + Q @ M
    assert np.array_equal(sym, [[12.0, -36.0], [-36.0, 144.0]])
    assert np.all(np.linalg.eigvalsh(sym) > 0)

    fA, fB = canonical_pair(1)
    S = fA + np.outer(fB, ctrl.C_frak)
    loop = S.T @ Q + Q @ S
    assert np.array_equal(loop, [[-12.0, 36.0], [36.0, -144.0]])
    assert np.all(np.linalg.eigvalsh(loop) < 0)


def test_unit_rate_identity_exact():
    # MQ + QM = -(S^T Q + Q S) as exact integers for every size; this is
    # the algebraic content of dT/dt = -1 along the closed loop
    for N in (1, 2, 3, 4):
        n = 2 * N
        Q = q_inverse_exact(n)
        C = [Fraction(-1, 2) * Q[0][j] for j in range(n)]
        # S = frak_A + frak_B C: row 0 is C, row i has -i at column i-1
        S = [[Fraction(0)] * n for _ in range(n)]
        S[0] = list(C)
        for i in range(1, n):
            S[i][i - 1] = Fraction(-i)
        for i in range(n):
            for j in range(n):
                lhs = (i + 1) * Q[i][j] + Q[i][j] * (j + 1)
                rhs = -sum(S[k][i] * Q[k][j] + Q[i][k] * S[k][j] for k in range(n))
                assert lhs == rhs


def test_definiteness_margins_all_sizes():
    for N in (1, 2, 3, 4):
        ctrl = build_controller(N)
        Q = ctrl.Q
        M = np.diag(ctrl.M_frak)
        fA, fB = canonical_pair(N)
        S = fA + np.outer(fB, ctrl.C_frak)
        assert np.linalg.eigvalsh(M @ Q + Q @ M).min() > 0.1
        assert np.linalg.eigvalsh(S.T @ Q + Q @ S).max() < -0.1


def test_delta_scaling():
    assert np.allclose(delta_scale(2.0, 3), [0.5, 0.25, 0.125])
    D = delta(2.0, 1)
    assert np.allclose(D, np.diag([0.5, 0.25]))
    # semigroup property delta(s t) = delta(s) delta(t)
    assert np.allclose(delta(6.0, 2), delta(2.0, 2) @ delta(3.0, 2))


def test_solve_T_properties():
    ctrl = build_controller(2)
    rng = np.random.default_rng(3)
    for _ in range(10):
        X = rng.standard_normal(4)
        cv = solve_T(ctrl, X)
        assert cv.T > 0 and not cv.degenerate
        # the horizon equation holds at the root
        assert abs(g_form(ctrl, cv.T, X) - float(ctrl.kappa_sq)) <= 1e-10
        # scale covariance: X_j -> s^{-j} X_j divides the horizon by s
        s = 1.7
        Xs = delta(s, 2) @ X
        cv2 = solve_T(ctrl, Xs)
        assert abs(cv2.T - cv.T / s) <= 1e-9 * cv.T
        # level 1 is reached earlier than level kappa^2 < 1
        cv1 = solve_T(ctrl, X, level=1.0)
        assert cv1.T < cv.T
        assert abs(g_form(ctrl, cv1.T, X) - 1.0) <= 1e-10

    z = solve_T(ctrl, np.zeros(4))
    assert z.T == 0.0 and z.degenerate


def test_control_bound_half():
    # |v| <= (kappa/2) sqrt(Q_11) = 1/2 by Cauchy-Schwarz, for every state
    rng = np.random.default_rng(11)
    for N in (1, 2, 3):
        ctrl = build_controller(N)
        for _ in range(2000):
            X = rng.standard_normal(2 * N) * rng.choice([1e-3, 1.0, 1e3])
            v = local_control(ctrl, X)
            assert abs(v) <= 0.5 + 1e-12


def test_terminal_arrival_and_unit_rate():
    for N, X0 in ((1, [0.4, -0.9]), (2, [0.3, -0.5, 0.2, 0.4])):
        ctrl = build_controller(N)
        X0 = np.array(X0)
        T0 = solve_T(ctrl, X0).T
        # drive to the origin itself: the default T_stop = 1e-3 horizon
        # leaves |X| ~ 1e-4, so the arrival check needs explicit stops
        ts, Xs, Ts = simulate_terminal(ctrl, X0, T_stop=0.0, x_stop=1e-6)
        # the time-to-go decays at unit rate: T(t) = T0 - t along the flow
        drift = np.max(np.abs(np.asarray(Ts) - (T0 - np.asarray(ts))))
        assert drift <= 1e-4 * T0
        assert np.linalg.norm(Xs[-1]) <= 1e-6
        assert ts[-1] <= T0 * (1.0 + 1e-2)


def test_terminal_default_stop_horizon():
    # with the default stops the run ends at T <= 1e-3, not at the origin
    ctrl = build_controller(1)
    ts, Xs, Ts = simulate_terminal(ctrl, np.array([0.4, -0.9]))
    assert Ts[-1] <= 1e-3
    assert 0.0 < np.linalg.norm(Xs[-1]) < 1e-3


def test_build_controller_validation():
    with pytest.raises(ValueError):
        build_controller(0)
