"""Pure-numpy reference implementation of the quadrature kernels.

Both backends evaluate, for a batch of amplitude vectors z in R^N,

    h(z)    = average over angles of sqrt( (sum_i z_i cos phi_i)^2 + tau^2 )
    dh/dz_i = average of ( S * cos phi_i + smooth_rel^2 * z_i ) / sqrt(S^2 + tau^2)

with S = sum_i z_i cos phi_i and tau = smooth_rel * |z|_2, over either a
uniform tensor-product angle grid (same 1-D grid on every axis) or a fixed
set of Monte-Carlo angle samples.  The smoothing term is the Euclidean norm
of the linear map z -> (S(z), smooth_rel * z), so h stays exactly convex and
positively homogeneous of degree one, and the Euler identity
h = sum_i z_i dh/dz_i holds per grid cell.

Accumulation is axis-major and single-threaded, so results are bit-stable
from run to run.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def _one_tensor(z, cos_table, smooth_rel):
    n = cos_table.shape[0]
    N = z.shape[0]
    znorm = float(np.sqrt(np.dot(z, z)))
    if znorm == 0.0:
        return 0.0, np.zeros(N)
    tau2 = (smooth_rel * znorm) ** 2
    sr2 = smooth_rel * smooth_rel

    if N == 1:
        S = z[0] * cos_table
    elif N == 2:
        S = z[0] * cos_table[:, None] + z[1] * cos_table[None, :]
    elif N == 3:
        S = (
            z[0] * cos_table[:, None, None]
            + z[1] * cos_table[None, :, None]
            + z[2] * cos_table[None, None, :]
        )
    else:
        if n**N > 2**24:
            raise ValueError("tensor grid too large; use the monte-carlo scheme")
        S = np.zeros((1,))
        for k in range(N):
            S = S[..., None] + z[k] * cos_table
        S = S.reshape((n,) * N)

    W = np.sqrt(S * S + tau2)
    h = float(W.mean())
    R = S / W
    miW = float((1.0 / W).mean())
    g = np.empty(N)
    for k in range(N):
        shape = [1] * N
        shape[k] = n
        g[k] = float((R * cos_table.reshape(shape)).mean()) + sr2 * z[k] * miW
    return h, g


def _one_mc(z, cos_samples, smooth_rel):
    N = z.shape[0]
    znorm = float(np.sqrt(np.dot(z, z)))
    if znorm == 0.0:
        return 0.0, np.zeros(N)
    tau2 = (smooth_rel * znorm) ** 2
    S = cos_samples @ z
    W = np.sqrt(S * S + tau2)
    h = float(W.mean())
    R = S / W
    g = (cos_samples.T @ R) / S.shape[0]
    g += (smooth_rel * smooth_rel) * z * float((1.0 / W).mean())
    return h, g


def tensor_h_grad(Z, cos_table, smooth_rel):
    """h and dh/dz on a tensor grid for a batch Z of shape (M, N)."""
    Z = np.ascontiguousarray(np.atleast_2d(Z), dtype=np.float64)
    cos_table = np.ascontiguousarray(cos_table, dtype=np.float64)
    M, N = Z.shape
    h = np.empty(M)
    g = np.empty((M, N))
    for m in range(M):
        h[m], g[m] = _one_tensor(Z[m], cos_table, float(smooth_rel))
    return h, g


def mc_h_grad(Z, cos_samples, smooth_rel):
    """h and dh/dz over fixed Monte-Carlo cosine samples of shape (S, N)."""
    Z = np.ascontiguousarray(np.atleast_2d(Z), dtype=np.float64)
    cos_samples = np.ascontiguousarray(cos_samples, dtype=np.float64)
    M, N = Z.shape
    h = np.empty(M)
    g = np.empty((M, N))
    for m in range(M):
        h[m], g[m] = _one_mc(Z[m], cos_samples, float(smooth_rel))
    return h, g
