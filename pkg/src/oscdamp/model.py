"""System construction for ensembles of linear oscillators under one control.

The state is x = (x_1, y_1, ..., x_N, y_N) with x_i the displacement and y_i
the velocity of oscillator i.  The drift is block diagonal with 2x2 blocks
[[0, 1], [-omega_i^2, 0]] and the single bounded control enters through
B = (0, 1, 0, 1, ..., 0, 1).
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "System",
    "ResonanceReport",
    "build_system",
    "resonance_report",
    "kalman_matrix",
]


@dataclass(frozen=True)
class System:
    """Oscillator ensemble: frequencies and the (A, B) realization."""

    omegas: np.ndarray
    A: np.ndarray
    B: np.ndarray

    @property
    def N(self) -> int:
        return self.omegas.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.omegas.shape[0]


@dataclass(frozen=True)
class ResonanceReport:
    """Integer relations sum_i m_i omega_i = 0 found below tol."""

    omegas: np.ndarray
    m_max: int
    tol: float
    is_pairwise_distinct: bool
    near_resonances: tuple = field(default_factory=tuple)

    @property
    def is_resonant(self) -> bool:
        return len(self.near_resonances) > 0


def build_system(omegas) -> System:
    """Validate frequencies and assemble the block-diagonal realization.

    Raises ValueError on empty input, non-positive or exactly duplicated
    frequencies; warns when two frequencies are closer than 1e-6 times the
    largest one (the geometry degrades long before exact resonance).
    """
    om = np.asarray(omegas, dtype=np.float64).ravel()
    if om.size == 0:
        raise ValueError("at least one frequency is required")
    if np.any(om <= 0.0):
        raise ValueError("frequencies must be strictly positive")
    if len(set(om.tolist())) != om.size:
        raise ValueError("duplicate frequencies are not allowed")
    gaps = np.abs(om[:, None] - om[None, :])[np.triu_indices(om.size, k=1)]
    if gaps.size and gaps.min() < 1e-6 * om.max():
        warnings.warn(
            "nearly equal frequencies (gap < 1e-6 * max); expect ill conditioning",
            stacklevel=2,
        )
    N = om.size
    A = np.zeros((2 * N, 2 * N))
    B = np.zeros(2 * N)
    for i, w in enumerate(om):
        A[2 * i, 2 * i + 1] = 1.0
        A[2 * i + 1, 2 * i] = -w * w
        B[2 * i + 1] = 1.0
    om.setflags(write=False)
    A.setflags(write=False)
    B.setflags(write=False)
    return System(omegas=om, A=A, B=B)


def kalman_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Controllability matrix [B, AB, ..., A^(dim-1) B]."""
    n = A.shape[0]
    cols = [B]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    return np.column_stack(cols)


def resonance_report(system, m_max: int = 5, tol: float = 1e-9) -> ResonanceReport:
    """Scan integer vectors with |m_i| <= m_max for relations m . omega = 0.

    Accepts a System or a bare frequency sequence.  Only nontrivial vectors
    are reported, canonicalized so the first nonzero entry is positive (m
    and -m describe the same relation), ordered lexicographically.  Entries
    of near_resonances are pairs (m, residual).
    """
    om = np.asarray(getattr(system, "omegas", system), dtype=np.float64).ravel()
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    N = om.size
    seen = set()
    found = []
    for m in itertools.product(range(-m_max, m_max + 1), repeat=N):
        if all(v == 0 for v in m):
            continue
        first = next(v for v in m if v != 0)
        canon = m if first > 0 else tuple(-v for v in m)
        if canon in seen:
            continue
        seen.add(canon)
        resid = float(abs(np.dot(canon, om)))
        if resid <= tol:
            found.append((canon, resid))
    found.sort(key=lambda item: item[0])
    distinct = len(set(om.tolist())) == om.size
    return ResonanceReport(
        omegas=om,
        m_max=int(m_max),
        tol=float(tol),
        is_pairwise_distinct=distinct,
        near_resonances=tuple(found),
    )
