"""Run orchestration: configuration, solver dispatch and deterministic output files.

    sfcorr simulate config.json [--out DIR] [--solver cf|mb|both] [--seed N] [--threads N]
    sfcorr compare RUN_A RUN_B
    sfcorr presets
"""

from __future__ import annotations

import argparse
import difflib
import json
import os
import struct
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, cfsolver, mbsolver, observables, pump
from .core import InvalidInput, SimulationError

SOLVERS = ("cf", "mb", "both")
CSV_FMT = "%.16e"
CFSF_MAGIC = b"CFSF"
CFSF_VERSION = 1
CFSF_HEADER = struct.Struct("<4sIBQQ")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

GRID_KEYS = ("n_z", "n_tau", "z_max", "tau_max")
ENSEMBLE_KEYS = ("n_traj",)
SNAPSHOT_KEYS = ("z", "tau")
SPECTRUM_KEYS = ("window", "pad")
CF_KEYS = ("quadrature", "theta0", "g_scheme")


@dataclass
class RunConfig:
    """Resolved run description. Lengths and times use SI units for the
    physical presets and dimensionless units for fig2."""

    scenario: str = "fig2"
    solver: str = "cf"
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=lambda: {"n_traj": 100})
    snapshots: dict = field(default_factory=lambda: {"z": [], "tau": []})
    spectrum: dict = field(default_factory=lambda: {"window": "rect", "pad": 4})
    cf: dict = field(default_factory=lambda: {"quadrature": "trapezoid", "theta0": 0.5, "g_scheme": "heun"})
    output_dir: str = "out"
    seed: int = 0
    threads: Optional[int] = None


TOP_KEYS = tuple(f.name for f in fields(RunConfig))


def _reject_unknown(obj: dict, allowed, where: str):
    for key in obj:
        if key not in allowed:
            hint = difflib.get_close_matches(key, allowed, n=1)
            msg = f"unknown key {where}{key!r}"
            if hint:
                msg += f" (did you mean {hint[0]!r}?)"
            raise ConfigError(msg)


def _sub(doc: dict, name: str, allowed, default: dict) -> dict:
    val = doc.get(name, {})
    if not isinstance(val, dict):
        raise ConfigError(f"{name}: expected an object")
    _reject_unknown(val, allowed, f"in {name}: ")
    out = dict(default)
    out.update(val)
    return out


def _positive_int(v, name, minimum=1):
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{name}: expected an integer >= {minimum}, got {v!r}")
    return v


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run description."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object")
    _reject_unknown(doc, TOP_KEYS, "")
    d = RunConfig()

    scenario = doc.get("scenario", d.scenario)
    if scenario not in pump.PRESETS:
        hint = difflib.get_close_matches(str(scenario), list(pump.PRESETS), n=1)
        raise ConfigError(f"scenario: unknown preset {scenario!r}" + (f" (did you mean {hint[0]!r}?)" if hint else ""))
    solver = doc.get("solver", d.solver)
    if solver not in SOLVERS:
        raise ConfigError(f"solver: must be one of {', '.join(SOLVERS)}, got {solver!r}")

    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params: expected an object")
    pnames = [f.name for f in fields(pump.PRESETS[scenario][1])]
    _reject_unknown(params, pnames, f"in params for {scenario}: ")

    grid = _sub(doc, "grid", GRID_KEYS, {})
    for k in ("n_z",):
        if k in grid:
            _positive_int(grid[k], f"grid.{k}", 2)
    if "n_tau" in grid:
        _positive_int(grid["n_tau"], "grid.n_tau", 1)
    for k in ("z_max", "tau_max"):
        if k in grid and not (isinstance(grid[k], (int, float)) and grid[k] > 0):
            raise ConfigError(f"grid.{k}: expected a positive number")

    ensemble = _sub(doc, "ensemble", ENSEMBLE_KEYS, d.ensemble)
    _positive_int(ensemble["n_traj"], "ensemble.n_traj")
    snaps = _sub(doc, "snapshots", SNAPSHOT_KEYS, d.snapshots)
    for k in SNAPSHOT_KEYS:
        v = snaps[k]
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and x >= 0 for x in v):
            raise ConfigError(f"snapshots.{k}: expected a list of non-negative numbers")
    spec = _sub(doc, "spectrum", SPECTRUM_KEYS, d.spectrum)
    if spec["window"] not in ("rect", "hann"):
        raise ConfigError(f"spectrum.window: must be 'rect' or 'hann', got {spec['window']!r}")
    _positive_int(spec["pad"], "spectrum.pad", 2)
    cf = _sub(doc, "cf", CF_KEYS, d.cf)
    if cf["quadrature"] not in ("trapezoid", "ordered"):
        raise ConfigError("cf.quadrature: must be 'trapezoid' or 'ordered'")
    if cf["g_scheme"] not in ("heun", "euler"):
        raise ConfigError("cf.g_scheme: must be 'heun' or 'euler'")
    if not isinstance(cf["theta0"], (int, float)) or not 0 <= cf["theta0"] <= 1:
        raise ConfigError("cf.theta0: expected a number in [0, 1]")

    out = doc.get("output_dir", d.output_dir)
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir: expected a non-empty string")
    seed = doc.get("seed", d.seed)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed: expected a 64-bit unsigned integer")
    threads = doc.get("threads", d.threads)
    if threads is not None:
        _positive_int(threads, "threads")

    cfg = RunConfig(scenario, solver, dict(params), grid, ensemble, snaps, spec, cf, out, seed, threads)
    try:
        build_scenario(cfg, check_only=True)
    except InvalidInput as e:
        raise ConfigError(f"params: {e}") from None
    return cfg


def emit_config(cfg: RunConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n"


def _overrides(cfg: RunConfig) -> dict:
    ov = dict(cfg.params)
    g = cfg.grid
    if "n_z" in g:
        ov["n_z"] = g["n_z"]
    if "n_tau" in g:
        ov["n_tau"] = g["n_tau"]
    if cfg.scenario == "fig2":
        if "z_max" in g:
            ov["z_max_dimensionless"] = g["z_max"]
        if "tau_max" in g:
            ov["tau_max_dimensionless"] = g["tau_max"]
    else:
        if "z_max" in g:
            ov["length"] = g["z_max"]
        if "tau_max" in g:
            ov["tau_max"] = g["tau_max"]
    return ov


def build_scenario(cfg: RunConfig, check_only: bool = False):
    ov = _overrides(cfg)
    if check_only:
        # validate every parameter rule on a throwaway 2 x 2 grid
        pump.build_preset(cfg.scenario, **dict(ov, n_z=2, n_tau=2))
        return None
    return pump.build_preset(cfg.scenario, **ov)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_csv(path: Path, header, columns):
    data = np.column_stack([np.asarray(c, dtype=float).ravel() for c in columns])
    with open(path, "w", newline="\n") as fh:
        np.savetxt(fh, data, fmt=CSV_FMT, delimiter=",", header=",".join(header), comments="")


def read_csv(path: Path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {h: data[:, i] for i, h in enumerate(header)}


def write_cfsf(path: Path, M, axes: Optional[dict] = None):
    """Complex matrix as CFSF v1: header then row-major little-endian interleaved f64 pairs."""
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim != 2:
        raise ValueError("CFSF stores 2-D matrices only")
    with open(path, "wb") as fh:
        fh.write(CFSF_HEADER.pack(CFSF_MAGIC, CFSF_VERSION, 0, M.shape[0], M.shape[1]))
        fh.write(np.ascontiguousarray(M, dtype="<c16").tobytes())
    side = {"file": Path(path).name, "rows": M.shape[0], "cols": M.shape[1], "dtype": "complex128"}
    side.update({k: [float(x) for x in v] if np.ndim(v) else v for k, v in (axes or {}).items()})
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_cfsf(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, version, dtype, rows, cols = CFSF_HEADER.unpack_from(raw)
    if magic != CFSF_MAGIC or version != CFSF_VERSION or dtype != 0:
        raise ValueError(f"{path}: not a CFSF v1 complex file")
    body = raw[CFSF_HEADER.size:]
    if len(body) != rows * cols * 16:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(body, dtype="<c16").reshape(rows, cols).astype(np.complex128)


# ---------------------------------------------------------------------------
# Run
# ---------------------------------------------------------------------------


def _nearest(axis, values):
    axis = np.asarray(axis)
    return sorted({int(np.argmin(np.abs(axis - v))) for v in values})


def _tolerances():
    return {
        "divergence_limit": cfsolver.DIVERGENCE_LIMIT,
        "hermitian_tol": cfsolver.HERMITIAN_TOL,
        "theta_zero_default": cfsolver.THETA_ZERO,
        "psd_tol": observables.PSD_TOL,
        "mb_max_excluded_fraction": 0.01,
    }


def resolve_threads(cli_value: Optional[int], cfg: Optional[RunConfig] = None) -> int:
    if cli_value is not None:
        return max(int(cli_value), 1)
    if cfg is not None and cfg.threads is not None:
        return cfg.threads
    env = os.environ.get("SIM_THREADS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise ConfigError(f"SIM_THREADS: expected an integer, got {env!r}") from None
    return 1


def run(cfg: RunConfig, out_dir=None, threads: Optional[int] = None) -> int:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = resolve_threads(threads, cfg)
    built = build_scenario(cfg)
    scn, grid = built.scenario, built.grid
    meta = {
        "code_version": __version__,
        "config": asdict(cfg),
        "resolved_params": built.params,
        "threads": workers,
        "tolerances": _tolerances(),
        "status": "running",
        "files": [],
        "partial": [],
    }
    prob = None
    try:
        if cfg.solver in ("cf", "both"):
            prob = _run_cf(cfg, scn, grid, out, meta)
        if cfg.solver in ("mb", "both"):
            prob = _run_mb(cfg, scn, grid, out, meta, workers)
        meta["status"] = "ok"
        code = 0
    except SimulationError as e:
        meta["status"] = "failed"
        meta["error"] = str(e)
        meta["partial"] = list(meta["files"])
        code = 2
    if prob is not None:
        u = prob.units
        meta["grid"] = {
            "n_z": prob.grid.n_z, "n_tau": prob.grid.n_tau,
            "z_max_dimensionless": prob.grid.z_max, "tau_max_dimensionless": prob.grid.tau_max,
            "length_unit_m": u.length_unit, "time_unit_s": u.time_unit, "intensity_unit": u.intensity_unit,
            "eps": prob.eps, "xi": scn.xi,
        }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return code


def _axes(prob):
    L0, T0 = prob.units.length_unit, prob.units.time_unit
    Z, T = np.meshgrid(prob.z, prob.tau, indexing="ij")
    return Z * L0, Z, T * T0, T


def _run_cf(cfg, scn, grid, out, meta):
    prob = cfsolver._as_problem(scn, grid)
    tau_idx = _nearest(prob.tau * prob.units.time_unit if cfg.scenario != "fig2" else prob.tau, cfg.snapshots["tau"])
    hist = cfsolver.evolve_phase1(prob, snapshot_steps=tau_idx, quadrature=cfg.cf["quadrature"], theta0=cfg.cf["theta0"])
    L0, T0 = prob.units.length_unit, prob.units.time_unit
    zm, zd, ts, td = _axes(prob)
    I = hist.intensity
    write_csv(out / "intensity_map.csv", ["z_m", "z_dimless", "tau_s", "tau_dimless", "intensity", "intensity_dimless"],
              [zm, zd, ts, td, I * prob.units.intensity_unit, I])
    write_csv(out / "s_diag.csv", ["z_m", "z_dimless", "tau_s", "tau_dimless", "s_diag"], [zm, zd, ts, td, hist.s_diag.real])
    rate, N = observables.photon_number_rate(I, scn, prob.tau)
    write_csv(out / "photon_number.csv", ["z_m", "z_dimless", "photon_number"], [prob.z * L0, prob.z, N])
    nm = observables.normalized_map(I, prob.tau)
    write_csv(out / "peak_track.csv", ["z_m", "z_dimless", "peak_tau_dimless"], [prob.z * L0, prob.z, nm.peak_time])
    meta["files"] += ["intensity_map.csv", "s_diag.csv", "photon_number.csv", "peak_track.csv"]
    meta["zero_intensity_rows"] = np.flatnonzero(nm.zero_rows).tolist()
    for k, S in sorted(hist.snapshots.items()):
        name = f"S_tau{k:06d}.cfsf"
        write_cfsf(out / name, S, {"z_m": prob.z * L0, "z_dimless": prob.z, "tau_dimless": float(prob.tau[k])})
        meta["files"].append(name)

    zsel = cfg.snapshots["z"]
    if zsel:
        zaxis = prob.z if cfg.scenario == "fig2" else prob.z * L0
        z_idx = _nearest(zaxis, zsel)
        field_res = cfsolver.propagate_G(hist, z_indices=z_idx, scheme=cfg.cf["g_scheme"])
        write_csv(out / "g_diag.csv", ["z_m", "z_dimless", "tau_s", "tau_dimless", "g_diag"], [zm, zd, ts, td, field_res.g_diag])
        meta["files"].append("g_diag.csv")
        spectra = {}
        for j in z_idx:
            G = field_res.slices[j]
            gname = f"G_z{j:05d}.cfsf"
            write_cfsf(out / gname, G, {"tau_s": prob.tau * T0, "tau_dimless": prob.tau, "z_m": float(prob.z[j] * L0),
                                        "z_dimless": float(prob.z[j])})
            sp = observables.spectrum(G, prob.dtau, window=cfg.spectrum["window"], pad=cfg.spectrum["pad"])
            sname = f"spectrum_z{j:05d}.csv"
            write_csv(out / sname, ["omega_rad_s", "omega_dimless", "power_dimless"], [sp.omega_offsets / T0, sp.omega_offsets, sp.power])
            spectra[sname] = dict(sp.meta, z_m=float(prob.z[j] * L0), fwhm_rad_s=observables.fwhm(sp.omega_offsets, sp.power) / T0)
            meta["files"] += [gname, sname]
        meta["spectra"] = spectra
    return prob


def _run_mb(cfg, scn, grid, out, meta, workers):
    prob = cfsolver._as_problem(scn, grid)
    res = mbsolver.run_ensemble(prob, noise=mbsolver.NoiseSpec(seed=cfg.seed), n_traj=cfg.ensemble["n_traj"], workers=workers)
    L0 = prob.units.length_unit
    zm, zd, ts, td = _axes(prob)
    write_csv(out / "mb_mean_intensity.csv", ["z_m", "z_dimless", "tau_s", "tau_dimless", "intensity", "intensity_dimless"],
              [zm, zd, ts, td, res.mean_intensity * prob.units.intensity_unit, res.mean_intensity])
    N = scn.xi * res.mean_photon_number
    write_csv(out / "mb_photon_number.csv", ["z_m", "z_dimless", "photon_number"], [prob.z * L0, prob.z, N])
    nm = observables.normalized_map(res.mean_intensity, prob.tau)
    write_csv(out / "mb_peak_track.csv", ["z_m", "z_dimless", "peak_tau_dimless"], [prob.z * L0, prob.z, nm.peak_time])
    manifest = {
        "master_seed": res.master_seed,
        "rng": "numpy Philox, SeedSequence(master_seed, spawn_key=(index,))",
        "n_traj": res.n_traj,
        "excluded": res.excluded,
        "trajectories": [{"index": i, "spawn_key": k} for i, k in res.seeds],
    }
    (out / "seed_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    meta["files"] += ["mb_mean_intensity.csv", "mb_photon_number.csv", "mb_peak_track.csv", "seed_manifest.json"]
    return prob


# ---------------------------------------------------------------------------
# Compare
# ---------------------------------------------------------------------------


def _load_curves(d: Path):
    d = Path(d)
    for prefix in ("", "mb_"):
        pn, pk = d / f"{prefix}photon_number.csv", d / f"{prefix}peak_track.csv"
        if pn.exists() and pk.exists():
            meta = json.loads((d / "metadata.json").read_text()) if (d / "metadata.json").exists() else {}
            return read_csv(pn), read_csv(pk), meta.get("grid", {}), prefix or "cf_"
    raise ConfigError(f"{d}: no photon_number.csv / peak_track.csv found")


def _rel(a, b):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    out = np.abs(a - b) / scale
    return np.where((a == b) | (np.isnan(a) & np.isnan(b)), 0.0, out)


def compare(dir_a, dir_b) -> dict:
    na, pa, ga, la = _load_curves(dir_a)
    nb, pb, gb, lb = _load_curves(dir_b)
    for key in ("n_z", "n_tau", "z_max_dimensionless", "tau_max_dimensionless"):
        if key in ga and key in gb and ga[key] != gb[key]:
            raise ConfigError(f"grid mismatch: {key} {ga[key]} vs {gb[key]}")
    if len(na["z_dimless"]) != len(nb["z_dimless"]) or not np.allclose(na["z_dimless"], nb["z_dimless"], rtol=1e-12):
        raise ConfigError("grid mismatch: z axes differ")
    dn = _rel(na["photon_number"], nb["photon_number"])
    dp = np.abs(pa["peak_tau_dimless"] - pb["peak_tau_dimless"])
    dp = np.where(np.isnan(pa["peak_tau_dimless"]) & np.isnan(pb["peak_tau_dimless"]), 0.0, dp)
    return {
        "sources": [la.rstrip("_"), lb.rstrip("_")],
        "z_dimless": na["z_dimless"],
        "photon_number_rel_diff": dn,
        "peak_time_abs_diff": dp,
        "max_photon_number_rel_diff": float(np.nanmax(dn)),
        "max_peak_time_abs_diff": float(np.nanmax(dp)),
    }


def format_report(rep: dict, rows: int = 12) -> str:
    lines = [f"compare {rep['sources'][0]} vs {rep['sources'][1]}",
             f"{'z_dimless':>14} {'N rel diff':>12} {'peak dtau':>12}"]
    z = rep["z_dimless"]
    step = max(len(z) // rows, 1)
    for j in list(range(0, len(z), step)) + ([len(z) - 1] if (len(z) - 1) % step else []):
        lines.append(f"{z[j]:14.6e} {rep['photon_number_rel_diff'][j]:12.4e} {rep['peak_time_abs_diff'][j]:12.4e}")
    lines.append(f"max photon-number relative difference: {rep['max_photon_number_rel_diff']:.4e}")
    lines.append(f"max peak-time difference (dimensionless): {rep['max_peak_time_abs_diff']:.4e}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sfcorr", description="Superfluorescence correlation-function simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("simulate", help="run a configuration")
    s.add_argument("config")
    s.add_argument("--out")
    s.add_argument("--solver", choices=SOLVERS)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    c = sub.add_parser("compare", help="compare photon numbers and peak tracks of two runs")
    c.add_argument("a")
    c.add_argument("b")
    sub.add_parser("presets", help="list scenario presets")
    args = ap.parse_args(argv)

    try:
        if args.cmd == "presets":
            for name, (_, cls, desc) in pump.PRESETS.items():
                print(f"{name:8s} {desc}")
            return 0
        if args.cmd == "compare":
            print(format_report(compare(args.a, args.b)))
            return 0
        cfg = parse_config(Path(args.config).read_text())
        if args.solver:
            cfg.solver = args.solver
        if args.seed is not None:
            cfg.seed = args.seed
        threads = resolve_threads(args.threads, cfg)
        code = run(cfg, args.out, threads)
        target = args.out or cfg.output_dir
        print(f"{'ok' if code == 0 else 'FAILED'}: outputs in {target}")
        return code
    except (ConfigError, InvalidInput, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
