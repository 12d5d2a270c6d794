"""Brute-force reference: the closed equations for N ordered two-level atoms.

Written with explicit per-atom loops and no shared code with the solver.
Atom a sits upstream of atom b when a < b. With c = 3*delta_o/(16*pi):

    d rho_ee[a]/dt = -rho_ee[a] - c * sum_{b<a} 2 Re s[a, b]
    d s[a, b]/dt   = -s[a, b]
                     + c * rinv[a] * sum_{k<a, k!=b} s[k, b]
                     + c * rinv[b] * sum_{k<b, k!=a} s[a, k]
                     + c * (rinv[a] rho_ee[b] [a>b] + rinv[b] rho_ee[a] [b>a])

for a != b, with rinv = 2 rho_ee - 1 and gamma_sp = 1.
"""

import numpy as np


def rhs(ee, s, c):
    n = len(ee)
    rinv = [2.0 * ee[a] - 1.0 for a in range(n)]
    dee = np.zeros(n)
    ds = np.zeros((n, n), dtype=complex)
    for a in range(n):
        acc = 0.0
        for b in range(a):
            acc += 2.0 * s[a, b].real
        dee[a] = -ee[a] - c * acc
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            v = -s[a, b]
            t1 = 0.0
            for k in range(a):
                if k != b:
                    t1 += s[k, b]
            t2 = 0.0
            for k in range(b):
                if k != a:
                    t2 += s[a, k]
            v += c * rinv[a] * t1 + c * rinv[b] * t2
            if a > b:
                v += c * rinv[a] * ee[b]
            else:
                v += c * rinv[b] * ee[a]
            ds[a, b] = v
    return dee, ds


def integrate(n_atoms, c, h, n_steps, ee0=1.0):
    """Heun integration; returns rho_ee history (n_atoms, n_steps+1) and final s."""
    ee = np.full(n_atoms, float(ee0))
    s = np.zeros((n_atoms, n_atoms), dtype=complex)
    hist = np.empty((n_atoms, n_steps + 1))
    shist = []
    for k in range(n_steps + 1):
        hist[:, k] = ee
        shist.append(s.copy())
        if k == n_steps:
            break
        d1 = rhs(ee, s, c)
        ee_p = ee + h * d1[0]
        s_p = s + h * d1[1]
        d2 = rhs(ee_p, s_p, c)
        ee = ee + 0.5 * h * (d1[0] + d2[0])
        s = s + 0.5 * h * (d1[1] + d2[1])
    return hist, shist
