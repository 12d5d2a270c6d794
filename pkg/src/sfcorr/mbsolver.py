"""Stochastic Maxwell-Bloch baseline.

Dimensionless envelope equations obtained by factorizing the correlation
functions, S(z1, z2) = p(z1) conj(p(z2)) with p = rho_ge:

    d rho_ee/d tau = r_e - Gamma_ee rho_ee - Re(p conj(e))
    d rho_gg/d tau = r_g + (1 + gamma_n) rho_ee - gamma_g rho_gg + Re(p conj(e))
    d p/d tau      = -Gamma/2 p + rho_inv e / 2 + s
    d e/d z        = -kappa/2 e + p

with intensity |e|^2 / (2 eps). The noise s is circular complex Gaussian
with <s s*> = F rho_ee delta(z - z') delta(tau - tau'). In each cell and
step its variance is F rho_ee / (dz dtau).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .core import InvalidInput, NumericalGrid, PhysicalScenario, Problem, SimulationError, prepare, step_factors

BLOCK = 32  # trajectories per work unit; fixed so that summation order never changes
NOISE_CHUNK = 64  # steps of noise drawn at once per trajectory


@dataclass(frozen=True)
class NoiseSpec:
    """Noise correlation factor (dimensionless) and master seed.

    F may be a scalar or a (n_z, n_tau + 1) table. When None, run_ensemble
    derives it from the scenario via dimensionless_noise_factor.
    """

    F: Optional[object] = None
    seed: int = 0

    def __post_init__(self):
        if self.F is not None and np.any(np.asarray(self.F) < 0):
            raise InvalidInput("noise factor must be non-negative")


@dataclass
class MBState:
    rho_ee: np.ndarray
    rho_gg: np.ndarray
    rho_ge: np.ndarray
    e_plus: np.ndarray

    @classmethod
    def initial(cls, prob: Problem, n_traj: Optional[int] = None):
        shape = (prob.grid.n_z,) if n_traj is None else (prob.grid.n_z, n_traj)
        ee = np.broadcast_to(prob.rho_ee0.reshape(-1, *([1] * (len(shape) - 1))), shape).copy()
        gg = np.broadcast_to(prob.rho_gg0.reshape(-1, *([1] * (len(shape) - 1))), shape).copy()
        z = np.zeros(shape, dtype=np.complex128)
        return cls(ee, gg, z, z.copy())


def noise_factor(scn: PhysicalScenario, Gamma=None):
    """F = 2 Gamma xi / n in physical units (m/s); Gamma defaults to gamma_sp."""
    G = scn.gamma_sp if Gamma is None else np.asarray(Gamma, dtype=float)
    return 2.0 * G * scn.xi / scn.linear_density


def to_dimensionless_F(F, scn: PhysicalScenario):
    """Convert a physical noise factor (m/s) to solver units.

    The factor xi in F is absorbed by the field normalization, so that both
    solvers share one dimensionless intensity and one photon-rate conversion.
    """
    eps = 3.0 * scn.delta_o / (16.0 * math.pi)
    return np.asarray(F) * scn.linear_density * eps / (scn.gamma_sp * scn.xi)


def dimensionless_noise_factor(prob: Problem):
    """F table in solver units, 2 eps Gamma(z, tau).

    With this normalization the small-z MB intensity has the same scale as
    the spontaneous intensity of the correlation solver (up to the shape
    difference that the MB approach produces).
    """
    return 2.0 * prob.eps * prob.Gamma


def sample_noise(rho_ee, F, dz: float, dtau: float, rng: np.random.Generator, normals=None):
    """Circular complex Gaussian s with <s> = 0 and <s s*> = F rho_ee / (dz dtau)."""
    var = np.asarray(F, dtype=float) * np.asarray(rho_ee, dtype=float) / (dz * dtau)
    if np.any(var < -1e-12) or not np.all(np.isfinite(var)):
        raise InvalidInput("invalid state")
    var = np.maximum(var, 0.0)
    if normals is None:
        normals = rng.standard_normal(np.shape(var) + (2,))
    return np.sqrt(0.5 * var) * (normals[..., 0] + 1j * normals[..., 1])


def field_along_z(p: np.ndarray, a: np.ndarray, dz: float) -> np.ndarray:
    """Trapezoidal accumulation of the polarization source at fixed tau, e(0) = 0."""
    p2 = p.reshape(p.shape[0], -1)
    return _kernels.field_march(np.ascontiguousarray(p2), a, dz).reshape(p.shape)


def _deriv(ee, gg, p, e, r_e, r_g, gamma_g, gamma_n, Gamma, Gamma_ee):
    drive = (p * e.conj()).real
    rinv = ee - gg
    d_ee = r_e - Gamma_ee * ee - drive
    d_gg = r_g + (1.0 + gamma_n) * ee - gamma_g * gg + drive
    d_p = -0.5 * Gamma * p + 0.5 * rinv * e
    return d_ee, d_gg, d_p


def _col(x, ndim):
    x = np.asarray(x)
    return x.reshape(x.shape + (1,) * (ndim - x.ndim)) if x.ndim else x


def mb_step(state: MBState, prob: Problem, k: int, dW: np.ndarray, a: np.ndarray, couple_field: bool = True) -> MBState:
    """Advance one tau step: Heun for the drift, Euler-Maruyama for the additive noise dW."""
    h = prob.dtau
    nd = state.rho_ee.ndim

    def rates(j):
        return (_col(prob.r_e[:, j], nd), _col(prob.r_g[:, j], nd), _col(prob.gamma_g[:, j], nd), prob.gamma_n,
                _col(prob.Gamma[:, j], nd), _col(prob.Gamma_ee[:, j], nd))

    def efield(p):
        return field_along_z(p, a, prob.dz) if couple_field else np.zeros_like(p)

    e0 = efield(state.rho_ge)
    k1 = _deriv(state.rho_ee, state.rho_gg, state.rho_ge, e0, *rates(k))
    ee_p = state.rho_ee + h * k1[0]
    gg_p = state.rho_gg + h * k1[1]
    p_p = state.rho_ge + h * k1[2] + dW
    k2 = _deriv(ee_p, gg_p, p_p, efield(p_p), *rates(k + 1))
    ee = state.rho_ee + 0.5 * h * (k1[0] + k2[0])
    gg = state.rho_gg + 0.5 * h * (k1[1] + k2[1])
    p = state.rho_ge + 0.5 * h * (k1[2] + k2[2]) + dW
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(ee))):
        raise SimulationError("trajectory diverged")
    return MBState(ee, gg, p, efield(p))


@dataclass
class EnsembleResult:
    mean_intensity: np.ndarray  # (n_z, n_tau+1), dimensionless
    second_moment: np.ndarray  # mean of intensity^2, for error bands
    mean_photon_number: np.ndarray  # (n_z,), time-integrated mean intensity
    peak_times: np.ndarray  # (n_traj, n_z), tau index of each trajectory's peak
    n_traj: int
    excluded: list = field(default_factory=list)
    seeds: list = field(default_factory=list)  # (index, spawn key) manifest
    master_seed: int = 0

    def stderr(self) -> np.ndarray:
        n = max(self.n_traj - len(self.excluded), 1)
        var = np.maximum(self.second_moment - self.mean_intensity**2, 0.0)
        return np.sqrt(var / n)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for one trajectory (seed and index hashed by SeedSequence)."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _run_block(prob: Problem, F: np.ndarray, seed: int, start: int, count: int, a: np.ndarray):
    n, nt1 = prob.grid.shape
    h, dz = prob.dtau, prob.dz
    state = MBState.initial(prob, count)
    rngs = [trajectory_rng(seed, start + i) for i in range(count)]
    inten = np.empty((n, nt1, count))
    ok = np.ones(count, dtype=bool)
    norm = 1.0 / (2.0 * prob.eps)
    buf = None
    for k in range(nt1):
        inten[:, k, :] = norm * (state.e_plus.real**2 + state.e_plus.imag**2)
        if k == nt1 - 1:
            break
        c = k % NOISE_CHUNK
        if c == 0:
            steps = min(NOISE_CHUNK, nt1 - 1 - k)
            buf = np.stack([g.standard_normal((steps, n, 2)) for g in rngs], axis=-2)  # (steps, n, count, 2)
        ee_pos = np.where(ok[None, :], state.rho_ee, 0.0)
        s = sample_noise(ee_pos, F[:, k][:, None], dz, h, None, normals=buf[c])
        try:
            state = mb_step(state, prob, k, s * h, a)
        except SimulationError:
            bad = ~(np.all(np.isfinite(state.rho_ge), axis=0))
            ok &= ~bad
            state = _sanitize(state, ok)
            state = mb_step(state, prob, k, np.where(ok[None, :], s * h, 0.0), a)
        fin = np.all(np.isfinite(state.rho_ge), axis=0) & np.all(np.isfinite(state.rho_ee), axis=0)
        if not np.all(fin):
            ok &= fin
            state = _sanitize(state, ok)
    return inten, ok


def _sanitize(state: MBState, ok: np.ndarray) -> MBState:
    z = ~ok[None, :]
    return MBState(np.where(z, 0.0, state.rho_ee), np.where(z, 0.0, state.rho_gg),
                   np.where(z, 0.0, state.rho_ge), np.where(z, 0.0, state.e_plus))


def run_ensemble(scn, grid: Optional[NumericalGrid] = None, noise: Optional[NoiseSpec] = None,
                 n_traj: int = 1, workers: int = 1) -> EnsembleResult:
    """Run n_traj independent trajectories; output is bit-identical for any `workers`."""
    if n_traj < 1:
        raise InvalidInput("n_traj must be >= 1")
    prob = scn if isinstance(scn, Problem) else prepare(scn, grid)
    noise = noise or NoiseSpec()
    n, nt1 = prob.grid.shape
    F = dimensionless_noise_factor(prob) if noise.F is None else np.broadcast_to(np.asarray(noise.F, float), (n, nt1))
    a = step_factors(prob.kappa, prob.dz)
    blocks = [(s, min(BLOCK, n_traj - s)) for s in range(0, n_traj, BLOCK)]

    def work(b):
        inten, ok = _run_block(prob, F, noise.seed, b[0], b[1], a)
        good = inten[:, :, ok]
        return (good.sum(axis=-1), (good**2).sum(axis=-1), np.argmax(inten, axis=1).T, ok)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]

    s1 = np.zeros((n, nt1))
    s2 = np.zeros((n, nt1))
    peaks = np.empty((n_traj, n), dtype=np.int64)
    excluded = []
    for (start, count), (p1, p2, pk, ok) in zip(blocks, parts):
        s1 += p1
        s2 += p2
        peaks[start:start + count] = pk
        excluded += [start + i for i in np.flatnonzero(~ok)]
    if len(excluded) > 0.01 * n_traj:
        raise SimulationError(f"trajectory diverged: {len(excluded)} of {n_traj} excluded")
    used = n_traj - len(excluded)
    mean = s1 / used
    m2 = s2 / used
    photons = np.trapezoid(mean, dx=prob.dtau, axis=1)
    seeds = [(i, [int(noise.seed), i]) for i in range(n_traj)]
    return EnsembleResult(mean, m2, photons, peaks, n_traj, excluded, seeds, int(noise.seed))
