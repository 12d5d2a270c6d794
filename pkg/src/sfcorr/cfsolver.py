"""Correlation-function solver.

Phase 1 evolves the populations and the equal-time coherence correlation
S(z1, z2) in retarded time. Phase 2 marches the two-time field
correlation G(tau1, tau2) along z using the stored medium history.

All arrays are dimensionless (see core). Spatial integrals use a weight
matrix W with W[i, k] the quadrature weight of node k in int_0^{z_i}:
"trapezoid" (default) or "ordered", the strict sum over nodes k < i that
treats every node as one emitter of an ordered chain (the S diagonal is
then not a variable and is pinned to zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import (
    InvalidInput,
    NumericalGrid,
    PhysicalScenario,
    Problem,
    SimulationError,
    absorption_matrix,
    prepare,
    step_factors,
)

THETA_ZERO = 0.5  # step function at coincident cells
DIVERGENCE_LIMIT = 1e12
HERMITIAN_TOL = 1e-12


@dataclass
class LocalRates:
    """Rates at one time point, one value per z node."""

    r_e: np.ndarray
    r_g: np.ndarray
    gamma_g: np.ndarray
    gamma_n: float
    Gamma: np.ndarray
    Gamma_ee: np.ndarray


def rates_at(prob: Problem, k: int) -> LocalRates:
    return LocalRates(
        prob.r_e[:, k], prob.r_g[:, k], prob.gamma_g[:, k], prob.gamma_n, prob.Gamma[:, k], prob.Gamma_ee[:, k]
    )


def quadrature_weights(n_z: int, dz: float, quadrature: str = "trapezoid") -> np.ndarray:
    """W[i, k]: weight of node k in the integral over [0, z_i]."""
    idx = np.arange(n_z)
    if quadrature == "trapezoid":
        W = np.tril(np.full((n_z, n_z), dz))
        W[:, 0] *= 0.5
        W[idx, idx] *= 0.5
        W[0, 0] = 0.0
    elif quadrature == "ordered":
        W = np.tril(np.full((n_z, n_z), dz), k=-1)
    else:
        raise InvalidInput(f"unknown quadrature {quadrature!r}")
    return W


@dataclass
class Operators:
    """Spatial operators of one run: absorption A, weighted kernel M = W*A, seed mask."""

    A: np.ndarray
    M: np.ndarray
    step_mask: np.ndarray  # Theta(z_i - z_j) with Theta(0) on the diagonal
    eps: float
    ordered: bool

    @classmethod
    def build(cls, prob: Problem, quadrature: str = "trapezoid", theta0: float = THETA_ZERO):
        n = prob.grid.n_z
        A = absorption_matrix(prob.kappa, prob.dz)
        W = quadrature_weights(n, prob.dz, quadrature)
        ordered = quadrature == "ordered"
        mask = np.tril(np.ones((n, n)), k=-1)
        if not ordered:
            mask[np.arange(n), np.arange(n)] = theta0
        return cls(A=A, M=W * A, step_mask=mask * A, eps=prob.eps, ordered=ordered)


def _matmul_real_complex(M: np.ndarray, S: np.ndarray) -> np.ndarray:
    """M @ S for real M and complex S using one real GEMM on the interleaved view."""
    n, m = S.shape
    Sr = np.ascontiguousarray(S).view(np.float64).reshape(n, 2 * m)
    return (M @ Sr).reshape(-1).view(np.complex128).reshape(M.shape[0], m)


def _check_shapes(rho_ee, S, ops: Operators):
    n = ops.M.shape[0]
    if rho_ee.shape != (n,) or S.shape != (n, n):
        raise InvalidInput("grid mismatch")


def coupling_integral(S: np.ndarray, ops: Operators) -> np.ndarray:
    """int_0^{z_i} A(z_i, z') Re S(z_i, z') dz' for every node i."""
    return np.einsum("ik,ik->i", ops.M, S.real)


def rhs_populations(rho_ee, rho_gg, S, rates: LocalRates, ops: Operators):
    """Time derivatives of rho_ee and rho_gg (dimensionless)."""
    _check_shapes(rho_ee, S, ops)
    X = coupling_integral(S, ops)
    d_ee = rates.r_e - rates.Gamma_ee * rho_ee - X
    d_gg = rates.r_g + (1.0 + rates.gamma_n) * rho_ee - rates.gamma_g * rho_gg + X
    return d_ee, d_gg


def _rhs_coherence(S, rho_ee, rho_gg, rates: LocalRates, ops: Operators, T: Optional[np.ndarray] = None):
    if T is None:
        T = _matmul_real_complex(ops.M, S)
    rinv = rho_ee - rho_gg
    half = (0.5 * rinv)[:, None] * T
    seed = ops.eps * (rinv[:, None] * rho_ee[None, :]) * ops.step_mask
    G = rates.Gamma
    dS = -0.5 * (G[:, None] + G[None, :]) * S + (half + half.conj().T) + (seed + seed.T)
    if ops.ordered:
        np.fill_diagonal(dS, 0.0)
    return dS


def rhs_coherence(S, rho_ee, rho_gg, rates: LocalRates, ops: Operators) -> np.ndarray:
    """dS/dtau; Hermitian by construction (X + X^H)."""
    _check_shapes(rho_ee, S, ops)
    if np.max(np.abs(S - S.conj().T), initial=0.0) > HERMITIAN_TOL * max(1.0, np.max(np.abs(S), initial=0.0)):
        raise SimulationError("state corrupted")
    return _rhs_coherence(S, rho_ee, rho_gg, rates, ops)


def intensity_from_S(S: np.ndarray, rho_ee: np.ndarray, ops: Operators, T: Optional[np.ndarray] = None) -> np.ndarray:
    """Dimensionless intensity at every node for one time point.

    I = (1/(2 eps)) sum_kl M_ik M_il S_kl + sum_k M_ik A_ik rho_ee_k.
    Multiply by UnitMap.intensity_unit for photons/(sr m^2 s).
    """
    _check_shapes(rho_ee, S, ops)
    if T is None:
        T = _matmul_real_complex(ops.M, S)
    coherent = np.einsum("il,il->i", T.real, ops.M)
    incoherent = (ops.M * ops.A) @ rho_ee
    return coherent / (2.0 * ops.eps) + incoherent


@dataclass
class MediumHistory:
    """Phase-1 output: populations on the full (z, tau) grid plus S diagnostics."""

    problem: Problem
    rho_ee: np.ndarray
    rho_gg: np.ndarray
    s_diag: np.ndarray
    intensity: np.ndarray  # from S, dimensionless
    snapshots: dict = field(default_factory=dict)  # tau index -> S matrix
    quadrature: str = "trapezoid"
    theta0: float = THETA_ZERO

    @property
    def rho_inv(self) -> np.ndarray:
        return self.rho_ee - self.rho_gg

    @property
    def source_w(self) -> np.ndarray:
        p = self.problem
        return p.r_e + (p.Gamma - p.Gamma_ee) * self.rho_ee

    @property
    def complete(self) -> bool:
        return self.rho_ee.shape == self.problem.grid.shape and bool(np.all(np.isfinite(self.rho_ee)))


def _as_problem(scn_or_prob, grid: Optional[NumericalGrid]) -> Problem:
    if isinstance(scn_or_prob, Problem):
        return scn_or_prob
    if grid is None:
        raise InvalidInput("a grid is required")
    return prepare(scn_or_prob, grid)


def evolve_phase1(
    scn,
    grid: Optional[NumericalGrid] = None,
    *,
    snapshot_steps: Sequence[int] = (),
    quadrature: str = "trapezoid",
    theta0: float = THETA_ZERO,
    coupling: bool = True,
) -> MediumHistory:
    """Heun time stepping of (rho_ee, rho_gg, S) from tau = 0 to tau_max.

    `scn` is a PhysicalScenario (with `grid`) or a prepared Problem.
    With coupling=False, S is held at zero (independent emitters).
    """
    prob = _as_problem(scn, grid)
    ops = Operators.build(prob, quadrature, theta0)
    n, nt1 = prob.grid.shape
    h = prob.dtau
    ee = prob.rho_ee0.copy()
    gg = prob.rho_gg0.copy()
    S = np.zeros((n, n), dtype=np.complex128)
    out_ee = np.empty((n, nt1))
    out_gg = np.empty((n, nt1))
    out_sd = np.empty((n, nt1))
    out_I = np.empty((n, nt1))
    snaps = {}
    want = set(int(s) for s in snapshot_steps)

    def deriv(ee, gg, S, rates):
        T = _matmul_real_complex(ops.M, S)
        X = np.einsum("ik,ik->i", ops.M, S.real)
        d_ee = rates.r_e - rates.Gamma_ee * ee - X
        d_gg = rates.r_g + (1.0 + rates.gamma_n) * ee - rates.gamma_g * gg + X
        if coupling:
            dS = _rhs_coherence(S, ee, gg, rates, ops, T)
        else:
            dS = None
        return d_ee, d_gg, dS, T

    rates0 = rates_at(prob, 0)
    for k in range(nt1):
        ratesk = rates0
        k1 = deriv(ee, gg, S, ratesk)
        out_ee[:, k] = ee
        out_gg[:, k] = gg
        out_sd[:, k] = S.diagonal().real
        out_I[:, k] = np.einsum("il,il->i", k1[3].real, ops.M) / (2.0 * ops.eps) + (ops.M * ops.A) @ ee
        if k in want:
            snaps[k] = S.copy()
        if k == nt1 - 1:
            break
        rates1 = rates_at(prob, k + 1)
        ee_p = ee + h * k1[0]
        gg_p = gg + h * k1[1]
        S_p = S + h * k1[2] if coupling else S
        k2 = deriv(ee_p, gg_p, S_p, rates1)
        ee = ee + 0.5 * h * (k1[0] + k2[0])
        gg = gg + 0.5 * h * (k1[1] + k2[1])
        if coupling:
            S = S + 0.5 * h * (k1[2] + k2[2])
            big = np.max(np.abs(S))
            if not np.isfinite(big) or big > DIVERGENCE_LIMIT:
                raise SimulationError("integration diverged; reduce dtau")
        if not (np.all(np.isfinite(ee)) and np.all(np.isfinite(gg))):
            raise SimulationError("integration diverged; reduce dtau")
        rates0 = rates1

    return MediumHistory(prob, out_ee, out_gg, out_sd, out_I, snaps, quadrature, theta0)


@dataclass
class FieldResult:
    """Phase-2 output: G diagonal on the full grid plus requested slices."""

    g_diag: np.ndarray  # (n_z, n_tau+1), dimensionless intensity from G
    slices: dict  # z index -> G matrix (n_tau+1, n_tau+1)
    stim_diag: np.ndarray  # diagonal of the stimulated drive, (n_z, n_tau+1)
    source_diag: np.ndarray  # diagonal of the spontaneous drive, (n_z, n_tau+1)


def spontaneous_source_matrix(history: MediumHistory, j: int) -> np.ndarray:
    prob = history.problem
    d = step_factors(prob.Gamma[j], prob.dtau)
    w = history.source_w[j]
    return _kernels.spontaneous_source(float(history.rho_ee[j, 0]), np.ascontiguousarray(w), d, prob.dtau)


def _g_rhs(G, rinv, d, kappa, src, h):
    K = _kernels.memory_convolution(G, rinv, d, h)
    stim = 0.5 * (K + K.conj().T)
    return -kappa * G + stim + src, stim


def propagate_G(
    history: MediumHistory,
    z_indices: Sequence[int] = (),
    *,
    scheme: str = "heun",
    n_steps: Optional[int] = None,
) -> FieldResult:
    """March dG/dz = -kappa G + (1/2)(K + K^H) + source from G(z=0) = 0.

    K is the memory convolution of rho_inv and G (rotating frame). Slices
    at `z_indices` are kept. `n_steps` limits the march (for tests).
    """
    if history is None or not history.complete:
        raise SimulationError("phase order violation")
    if scheme not in ("heun", "euler"):
        raise InvalidInput(f"unknown scheme {scheme!r}")
    prob = history.problem
    n, nt1 = prob.grid.shape
    h = prob.dtau
    dz = prob.dz
    rinv = history.rho_inv
    G = np.zeros((nt1, nt1), dtype=np.complex128)
    g_diag = np.zeros((n, nt1))
    stim_diag = np.zeros((n, nt1))
    src_diag = np.zeros((n, nt1))
    keep = set(int(i) for i in z_indices)
    slices = {}
    if 0 in keep:
        slices[0] = G.copy()
    last = n - 1 if n_steps is None else min(n - 1, int(n_steps))

    def parts(j):
        d = step_factors(prob.Gamma[j], h)
        src = spontaneous_source_matrix(history, j)
        return np.ascontiguousarray(rinv[j]), d, float(prob.kappa[j]), src

    cur = parts(0)
    for j in range(last):
        nxt = parts(j + 1)
        f0, stim0 = _g_rhs(G, cur[0], cur[1], cur[2], cur[3], h)
        stim_diag[j] = stim0.diagonal().real
        src_diag[j] = cur[3].diagonal()
        if scheme == "euler":
            G = G + dz * f0
        else:
            Gp = G + dz * f0
            f1, _ = _g_rhs(Gp, nxt[0], nxt[1], nxt[2], nxt[3], h)
            G = G + 0.5 * dz * (f0 + f1)
        big = np.max(np.abs(G))
        if not np.isfinite(big) or big > DIVERGENCE_LIMIT / (2.0 * prob.eps):
            raise SimulationError("integration diverged; reduce dtau")
        g_diag[j + 1] = G.diagonal().real
        if j + 1 in keep:
            slices[j + 1] = G.copy()
        cur = nxt
    _, stim_last = _g_rhs(G, cur[0], cur[1], cur[2], cur[3], h)
    stim_diag[last] = stim_last.diagonal().real
    src_diag[last] = cur[3].diagonal()
    return FieldResult(g_diag, slices, stim_diag, src_diag)


def stim_correction_monitor(history: MediumHistory, field_result: FieldResult):
    """Order-of-magnitude ratio of the dropped stimulated correction to the free term.

    ratio = (delta_o / 4) * tau^2 * G(tau, tau) * rho_inv^2 / rho_ee in
    dimensionless units (the physical estimate delta_o lambda^2 gamma_sp
    tau^2 G rho_inv^2 / rho_ee after scaling). Returns (ratio map,
    maximum over the region where the spontaneous drive dominates).
    """
    prob = history.problem
    tau = prob.tau[None, :]
    num = 0.25 * prob.units.delta_o * tau**2 * np.abs(field_result.g_diag) * history.rho_inv**2
    den = history.rho_ee
    ratio = np.zeros_like(num)
    pos = den > 0
    ratio[pos] = num[pos] / den[pos]
    ratio[~pos & (num > 0)] = np.inf
    region = np.abs(field_result.stim_diag) <= np.abs(field_result.source_diag)
    peak = float(np.max(ratio[region], initial=0.0))
    return ratio, peak
