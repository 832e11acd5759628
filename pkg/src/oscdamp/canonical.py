"""Reduction of the oscillator ensemble to a canonical integrator chain.

The pair (A, B) with A = blockdiag [[0, 1], [-omega_i^2, 0]] and B hitting
every velocity is controllable for distinct frequencies, so a static
feedback u = (C, x) + v can relocate the closed-loop spectrum.  The choice
made here collapses it entirely: with

    c_k = (-1)^{N+1} omega_k^{2N} / prod_{i != k} (omega_i^2 - omega_k^2)

placed on the position slots, A + BC is nilpotent of index 2N (characteristic
polynomial lambda^{2N}).  In the Krylov-type basis

    e_i = (-1)^{i-1} / (i-1)! * (A + BC)^{i-1} B,      i = 1, ..., 2N,

the closed loop becomes the fixed pair (frak_A, frak_B) independent of the
frequencies: frak_A has -1, -2, ..., -(2N-1) on the subdiagonal and frak_B
is the first unit vector.  The change of basis D = [e_1 ... e_2N] also has a
closed per-oscillator block form: the (x_i, y_i) rows of columns
(2j-1, 2j) are

    s_{j-1} * [[0, -1/(2j-1)!],
               [1/(2j-2)!,  0]]

where s_m is the elementary symmetric polynomial of degree m in the squared
frequencies with omega_i^2 omitted.  Both constructions are provided and
cross-checked; the residuals of nilpotency and of the similarity are
reported so a caller can detect conditioning trouble (clustered frequencies
make D nearly singular).

All local-controller work downstream happens on canonical coordinates
X = D^{-1} x with the control split u = v + (C, x).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "build_AB",
    "feedback_C",
    "gauge_D",
    "gauge_D_block",
    "canonical_pair",
    "CanonicalForm",
    "build_canonical",
]


def build_AB(omegas):
    """Drift matrix A and control vector B of the ensemble."""
    om = np.asarray(omegas, dtype=np.float64)
    N = om.size
    A = np.zeros((2 * N, 2 * N))
    for i in range(N):
        A[2 * i, 2 * i + 1] = 1.0
        A[2 * i + 1, 2 * i] = -om[i] ** 2
    B = np.zeros(2 * N)
    B[1::2] = 1.0
    return A, B


def feedback_C(omegas) -> np.ndarray:
    """Position feedback row C making A + BC nilpotent.

    Lagrange form: c_k = (-1)^{N+1} omega_k^{2N} / prod_{i!=k}(omega_i^2 - omega_k^2).
    Requires distinct frequencies.
    """
    om = np.asarray(omegas, dtype=np.float64)
    N = om.size
    lam = om**2
    c = np.empty(N)
    for k in range(N):
        denom = 1.0
        for i in range(N):
            if i != k:
                denom *= lam[i] - lam[k]
        if denom == 0.0:
            raise ValueError("feedback undefined for repeated frequencies")
        c[k] = (-1.0) ** (N + 1) * lam[k] ** N / denom
    C = np.zeros(2 * N)
    C[0::2] = c
    return C


def gauge_D(omegas):
    """Basis matrix D = [e_1 ... e_2N], e_i = (-1)^{i-1}/(i-1)! (A+BC)^{i-1} B.

    Returns (D, D_inv); the inverse is taken by partial-pivoted solve.
    """
    A, B = build_AB(omegas)
    C = feedback_C(omegas)
    M = A + np.outer(B, C)
    n = B.size
    D = np.empty((n, n))
    col = B.copy()
    D[:, 0] = col
    for i in range(1, n):
        col = M @ col  # accumulate M^{i} B
        D[:, i] = (-1.0) ** i / math.factorial(i) * col
    return D, np.linalg.inv(D)


def _elem_sym(vals: np.ndarray) -> np.ndarray:
    """Elementary symmetric polynomials s_0..s_m of vals (s_0 = 1)."""
    # prod(t + v) = sum s_k t^{m-k}; np.poly(roots) expands prod(t - r)
    return np.poly(-vals) if vals.size else np.array([1.0])


def gauge_D_block(omegas) -> np.ndarray:
    """Closed per-oscillator block form of the basis matrix D.

    Rows (x_i, y_i), columns (2j-1, 2j):
        s_{j-1}(omega^2 with i omitted) * [[0, -1/(2j-1)!], [1/(2j-2)!, 0]].
    Equal to gauge_D up to rounding; useful as an independent cross-check
    and cheaper for large N.
    """
    om = np.asarray(omegas, dtype=np.float64)
    N = om.size
    lam = om**2
    D = np.zeros((2 * N, 2 * N))
    for i in range(N):
        s = _elem_sym(np.delete(lam, i))
        for j in range(1, N + 1):
            e = s[j - 1]
            D[2 * i, 2 * j - 1] = -e / math.factorial(2 * j - 1)
            D[2 * i + 1, 2 * j - 2] = e / math.factorial(2 * j - 2)
    return D


def canonical_pair(N: int):
    """The frequency-independent canonical pair (frak_A, frak_B).

    frak_A has subdiagonal -1, -2, ..., -(2N-1); frak_B is e_1.
    """
    n = 2 * N
    fA = np.zeros((n, n))
    for i in range(1, n):
        fA[i, i - 1] = -float(i)
    fB = np.zeros(n)
    fB[0] = 1.0
    return fA, fB


@dataclass
class CanonicalForm:
    """Bundle of the reduction data for one frequency set.

    to_canonical / from_canonical convert states; control_lift maps a
    canonical control v back to the physical control u = v + (C, x).
    """

    omegas: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    D_inv: np.ndarray
    A_frak: np.ndarray
    B_frak: np.ndarray
    lambdas: np.ndarray          # lambda_k = sum of the other squared frequencies
    cond_D: float
    residual_nilpotent: float
    residual_reduction: float
    residual_block_vs_basis: float

    @property
    def N(self) -> int:
        return self.omegas.size

    def to_canonical(self, x) -> np.ndarray:
        return self.D_inv @ np.asarray(x, dtype=np.float64)

    def from_canonical(self, xc) -> np.ndarray:
        return self.D @ np.asarray(xc, dtype=np.float64)

    def control_lift(self, v: float, x) -> float:
        return float(v) + float(self.C @ np.asarray(x, dtype=np.float64))


def build_canonical(omegas, cond_warn: float = 1e8) -> CanonicalForm:
    """Assemble the full reduction and verify it numerically.

    Residuals reported (operator norms, relative where meaningful):
    nilpotency |(A+BC)^{2N}|, similarity |D^{-1}(A+BC)D - frak_A| and
    |D^{-1}B - e_1|, and the gap between the Krylov and block forms of D.
    Warns when cond(D) exceeds cond_warn: clustered frequencies degrade
    every downstream quantity.
    """
    om = np.asarray(omegas, dtype=np.float64)
    A, B = build_AB(om)
    C = feedback_C(om)
    D, D_inv = gauge_D(om)
    Db = gauge_D_block(om)
    fA, fB = canonical_pair(om.size)
    lam2 = om**2
    lambdas = lam2.sum() - lam2

    M = A + np.outer(B, C)
    P = np.linalg.matrix_power(M, 2 * om.size)
    scale = max(np.linalg.norm(M, 2), 1.0) ** (2 * om.size)
    res_nil = float(np.linalg.norm(P, 2) / scale)

    red = D_inv @ M @ D - fA
    res_red = float(
        max(np.linalg.norm(red, 2) / max(np.linalg.norm(fA, 2), 1.0),
            np.linalg.norm(D_inv @ B - fB))
    )
    res_blk = float(np.linalg.norm(D - Db, 2) / max(np.linalg.norm(D, 2), 1.0))

    cond = float(np.linalg.cond(D))
    if cond > cond_warn:
        warnings.warn(
            f"canonical basis is badly conditioned (cond(D) = {cond:.3e}); "
            "frequencies are likely clustered",
            RuntimeWarning,
            stacklevel=2,
        )
    return CanonicalForm(
        omegas=om,
        A=A,
        B=B,
        C=C,
        D=D,
        D_inv=D_inv,
        A_frak=fA,
        B_frak=fB,
        lambdas=lambdas,
        cond_D=cond,
        residual_nilpotent=res_nil,
        residual_reduction=res_red,
        residual_block_vs_basis=res_blk,
    )
