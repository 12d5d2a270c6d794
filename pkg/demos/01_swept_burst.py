"""Swept-pumped burst: how a fully inverted column turns spontaneous decay into a delayed pulse.

Runs the correlation solver on the fig2 preset and prints, row by row, the
peak time of the normalized intensity, the photon number, and whether the
row rings. Pass --full for the production 400 x 800 grid (about a minute).
"""

import argparse

import numpy as np

from sfcorr import cfsolver, observables as obs, pump

ap = argparse.ArgumentParser()
ap.add_argument("--full", action="store_true")
args = ap.parse_args()

grid = {} if args.full else dict(n_z=121, n_tau=300)
b = pump.fig2_scenario(**grid)
h = cfsolver.evolve_phase1(b.scenario, b.grid)
z, tau = b.grid.z, b.grid.tau

m = obs.normalized_map(h.intensity, tau)
rate, N = obs.photon_number_rate(h.intensity, b.scenario, tau)
z_on, j_on = obs.ringing_onset(m, z)

# near z = 0 each row is plain exponential decay; gain first delays the peak,
# then saturation pulls it back and secondary lobes appear
print(f"{'z':>7s} {'peak time':>10s} {'photons':>11s} {'lobes':>6s}")
for j in np.linspace(0, len(z) - 1, 13).astype(int):
    lobes = len(obs.local_maxima(m.values[j], 0.01))
    t = "-" if m.zero_rows[j] else f"{m.peak_time[j]:.3f}"
    print(f"{z[j]:7.1f} {t:>10s} {N[j]:11.3e} {lobes:6d}")
print(f"ringing starts at z = {z_on:.1f}")

# the medium conserves probability and keeps S Hermitian along the way
print("max |rho_ee + rho_gg - 1| =", np.max(np.abs(h.rho_ee + h.rho_gg - 1)))
