"""Compiled inner loops (numba). Each loop runs in a fixed index order."""

import numpy as np
from numba import njit


@njit(cache=True)
def memory_convolution(G, rinv, d, h):
    """K[i, j] = trapezoid over k <= i of D(i, k) * rinv[k] * G[k, j].

    Uses the local recursion C_{i+1} = d_i * (C_i + h/2 f_i) + h/2 f_{i+1}
    with f_k = rinv[k] * G[k, :], so the cost is O(n^2).
    """
    n, m = G.shape
    K = np.zeros((n, m), dtype=np.complex128)
    half = 0.5 * h
    for i in range(n - 1):
        di = d[i]
        a = half * rinv[i]
        b = half * rinv[i + 1]
        for j in range(m):
            K[i + 1, j] = di * (K[i, j] + a * G[i, j]) + b * G[i + 1, j]
    return K


@njit(cache=True)
def spontaneous_source(rho_ee0, w, d, h):
    """Symmetric source S[i, j] = D(i,0)D(j,0) rho_ee0 + int_0^min D(i,t)D(j,t) w(t) dt.

    The diagonal follows P_{i+1} = d_i^2 (P_i + h/2 w_i) + h/2 w_{i+1};
    off-diagonal entries use S[i, j] = D(i, j) P_j for i > j, built by
    stepping down each column.
    """
    n = w.shape[0]
    P = np.empty(n)
    P[0] = rho_ee0
    half = 0.5 * h
    for i in range(n - 1):
        P[i + 1] = d[i] * d[i] * (P[i] + half * w[i]) + half * w[i + 1]
    S = np.empty((n, n))
    for j in range(n):
        v = P[j]
        S[j, j] = v
        for i in range(j + 1, n):
            v = v * d[i - 1]
            S[i, j] = v
            S[j, i] = v
    return S


@njit(cache=True)
def field_march(p, a, h):
    """Trapezoidal accumulation e_{j+1} = a_j (e_j + h/2 p_j) + h/2 p_{j+1}, e_0 = 0.

    p has shape (n_z, n_traj); a holds the per-interval absorption factors.
    """
    nz, nt = p.shape
    e = np.zeros((nz, nt), dtype=np.complex128)
    half = 0.5 * h
    for j in range(nz - 1):
        aj = a[j]
        for t in range(nt):
            e[j + 1, t] = aj * (e[j, t] + half * p[j, t]) + half * p[j + 1, t]
    return e
