"""Command-line entry point.

Every experiment is a subcommand writing CSV data plus a JSON summary that
embeds the resolved configuration, the Fock-dimension convergence check, and
the wall-clock duration.  Configuration comes from an optional YAML
key-value file; command-line flags override file values.  All physical
quantities are in units of the Kerr nonlinearity.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, SimulationError
from .fock import FockSpace, SystemParams
from .liouvillian import (
    ThermalEnvironment,
    build_liouvillian,
    spectrum,
    steady_scan,
    steady_state,
)
from .dynamics import NoSwitchError, SweepSchedule, extract_switch, integrate_sweep
from .phase_analysis import half_plane_probability, husimi_q, transition_pdf
from .trajectories import heterodyne_ensemble_parallel
from .transducer import ProtocolConfig, calibrate, estimate_f, run_protocol
from .qfi import linear_oscillator_qfi, temperature_scan

GHZ = 2.0 * math.pi * 1e9


@dataclasses.dataclass
class RunConfig:
    """Flat bag of every knob a subcommand may need (units of u)."""

    # system parameters
    delta: float = 0.0
    u: float = 1.0
    f: float = 4.0
    g_abs: float = 6.0
    theta: float = -math.pi / 2
    gamma: float = 0.5
    eta: float = 0.5
    kappa: float = 1.0
    # bath
    n_th: float = 0.0
    temperature_mk: float = 0.0
    omega_c_ghz: float = 7.5
    # numerics
    fock_dim: int = 30
    convergence_ddim: int = 5
    convergence_rtol: float = 1e-3
    # detuning grids and sweeps
    delta_min: float = -10.0
    delta_max: float = 15.0
    delta_points: int = 51
    thetas: tuple = (-math.pi / 2, math.pi / 2)
    delta_start: float = 15.0
    delta_end: float = -10.0
    sweep_time: float = 50.0
    npoints: int = 500
    direction: str = "down"
    # trajectories / protocol
    dt: float = 1e-3
    shots: int = 200
    smooth_window: int = 50
    fit_smooth_bins: int = 5
    fit_window_pad: float = 3.0
    # calibration grid
    f_min: float = 2.0
    f_max: float = 8.0
    f_points: int = 7
    # qfi
    temperatures_mk: tuple = (0.0,)
    qfi_df: float = 0.0          # 0 -> default step
    # phase-space grid
    grid_halfwidth: float = 0.0  # 0 -> heuristic
    grid_points: int = 201
    # bookkeeping
    seed: int = 7
    threads: int = 1
    out: str = "."
    raw: bool = False

    def system_params(self, **overrides) -> SystemParams:
        fields = dict(delta=self.delta, u=self.u, f=self.f, g_abs=self.g_abs,
                      theta=self.theta, gamma=self.gamma, eta=self.eta,
                      kappa=self.kappa)
        fields.update(overrides)
        return SystemParams(**fields)

    def environment(self) -> ThermalEnvironment:
        if self.temperature_mk > 0:
            return ThermalEnvironment.from_temperature(
                self.omega_c_ghz * GHZ, self.temperature_mk * 1e-3)
        return ThermalEnvironment(n_th=self.n_th)

    def space(self) -> FockSpace:
        return FockSpace(self.fock_dim)

    def schedule(self) -> SweepSchedule:
        if self.direction == "down":
            start, end = max(self.delta_start, self.delta_end), min(self.delta_start, self.delta_end)
        elif self.direction == "up":
            start, end = min(self.delta_start, self.delta_end), max(self.delta_start, self.delta_end)
        else:
            raise ConfigError(f"direction must be 'up' or 'down', got {self.direction!r}")
        return SweepSchedule(start, end, self.sweep_time)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """Merge defaults, a YAML key-value file, and CLI overrides (in that order)."""
    values = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must be a key-value mapping")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("thetas", "temperatures_mk"):
        if key in values and isinstance(values[key], (list, tuple)):
            values[key] = tuple(float(v) for v in values[key])
    try:
        config = RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for name in ("delta_points", "f_points", "grid_points", "shots",
                 "npoints", "fock_dim", "threads"):
        if getattr(config, name) < 1:
            raise ConfigError(f"{name} must be a positive integer")
    if config.raw and config.threads > 1:
        raise ConfigError("raw record streaming requires threads=1")
    return config


def _atomic_write(path: str, writer):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer(fh)
    os.replace(tmp, path)


def write_csv(path: str, header, rows):
    def do(fh):
        out = csv.writer(fh)
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) for v in row])
    _atomic_write(path, do)


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


def write_summary(path: str, payload: dict):
    def do(fh):
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    _atomic_write(path, do)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def convergence_probe(config: RunConfig, deltas, include_measurement=False) -> dict:
    """Steady-state photon number at the most occupied probe detuning,
    compared between ``fock_dim`` and ``fock_dim + ddim``."""
    params = config.system_params()
    env = config.environment()

    def n_at(space, delta):
        sup = build_liouvillian(params.with_delta(float(delta)), space, env,
                                include_measurement)
        return steady_state(sup).field_expectations()[0]

    space = config.space()
    probe = [(n_at(space, d), d) for d in deltas]
    value, delta = max(probe)
    refined = n_at(FockSpace(config.fock_dim + config.convergence_ddim), delta)
    rel = abs(value - refined) / max(abs(value), abs(refined), 1e-300)
    return {
        "observable": "steady_state_n_mean",
        "probe_delta": float(delta),
        "dim": config.fock_dim,
        "dim_refined": config.fock_dim + config.convergence_ddim,
        "value": float(value),
        "value_refined": float(refined),
        "rel_change": float(rel),
        "rtol": config.convergence_rtol,
        "passed": bool(rel < config.convergence_rtol),
    }


def _summary(command: str, config: RunConfig, started: float, outputs,
             convergence, extra: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": dataclasses.asdict(config),
        "convergence": convergence,
        "duration_seconds": time.time() - started,
        "outputs": sorted(outputs),
        **extra,
    }


def _probe_deltas(config: RunConfig):
    return np.linspace(config.delta_min, config.delta_max, 5)


def cmd_steady(config: RunConfig) -> dict:
    if config.delta_points < 1:
        raise ConfigError("delta_points must be >= 1")
    deltas = np.linspace(config.delta_min, config.delta_max, config.delta_points)
    scan = steady_scan(config.system_params(), deltas, config.space(),
                       config.environment())
    path = os.path.join(config.out, "steady.csv")
    write_csv(path, ["delta", "n_mean", "x", "p", "phi"],
              zip(scan.deltas, scan.n_mean, scan.x, scan.p, scan.phi))
    return {"outputs": [path],
            "extra": {"n_mean_max": float(scan.n_mean.max())},
            "convergence_deltas": deltas[:: max(len(deltas) // 4, 1)]}


def cmd_gap(config: RunConfig) -> dict:
    deltas = np.linspace(config.delta_min, config.delta_max, config.delta_points)
    rows = []
    gap_min = math.inf
    for theta in config.thetas:
        params = config.system_params(theta=float(theta))
        for delta in deltas:
            sup = build_liouvillian(params.with_delta(float(delta)),
                                    config.space(), config.environment())
            gap = spectrum(sup).gap
            gap_min = min(gap_min, gap)
            rows.append((float(theta), float(delta), gap))
    path = os.path.join(config.out, "gap.csv")
    write_csv(path, ["theta", "delta", "gap"], rows)
    return {"outputs": [path], "extra": {"gap_min": gap_min},
            "convergence_deltas": deltas[:: max(len(deltas) // 4, 1)]}


def cmd_sweep(config: RunConfig) -> dict:
    record = integrate_sweep(config.system_params(), config.schedule(),
                             config.space(), config.environment(),
                             npoints=config.npoints)
    path = os.path.join(config.out, "sweep.csv")
    write_csv(path, ["t", "delta", "n_mean", "x", "p", "phi"],
              zip(record.times, record.deltas, record.n_mean, record.x,
                  record.p, record.phi))
    extra = {"direction": config.direction}
    try:
        switch = extract_switch(record)
        extra["switch"] = {"delta_star": switch.delta_star,
                           "jump_magnitude": switch.jump_magnitude}
    except NoSwitchError:
        extra["switch"] = None
    return {"outputs": [path], "extra": extra,
            "convergence_deltas": _probe_deltas(config)}


def cmd_trajectory(config: RunConfig) -> dict:
    outputs = []
    raw_sink = None
    if config.raw:
        raw_dir = config.out

        def raw_sink(index, t, d, xm, pm):
            path = os.path.join(raw_dir, f"trajectory_raw_{index:04d}.csv")
            write_csv(path, ["t", "delta", "x_meas", "p_meas", "phi_meas"],
                      zip(t, d, xm, pm, np.arctan2(pm, xm)))
            outputs.append(path)

    records = heterodyne_ensemble_parallel(
        config.system_params(), config.schedule(), config.space(),
        seed=config.seed, n_traj=config.shots, workers=config.threads,
        dt=config.dt, npoints=config.npoints,
        smooth_window=config.smooth_window, env=config.environment(),
        raw_sink=raw_sink)
    rows = []
    for rec in records:
        for i in range(len(rec.times)):
            rows.append((rec.trajectory_index, rec.times[i], rec.deltas[i],
                         rec.x_meas[i], rec.p_meas[i], rec.phi_meas[i],
                         rec.x[i], rec.p[i], rec.n_mean[i]))
    path = os.path.join(config.out, "trajectory.csv")
    write_csv(path, ["traj", "t", "delta", "x_meas", "p_meas", "phi_meas",
                     "x", "p", "n_mean"], rows)
    outputs.append(path)
    return {"outputs": outputs,
            "extra": {"n_trajectories": len(records)},
            "convergence_deltas": _probe_deltas(config),
            "include_measurement": True}


def cmd_calibrate(config: RunConfig) -> dict:
    f_grid = np.linspace(config.f_min, config.f_max, config.f_points)
    curve = calibrate(config.system_params(), f_grid, config.schedule(),
                      config.space(), config.environment(),
                      npoints=max(config.npoints, 1000))
    path = os.path.join(config.out, "calibrate.csv")
    write_csv(path, ["f", "delta_star", "valid"],
              zip(curve.f_grid, curve.delta_star_grid,
                  curve.validity_mask.astype(int)))
    extra = {"slope": curve.slope, "intercept": curve.intercept,
             "r_squared": curve.r_squared,
             "validity_window": list(curve.validity_window)}
    return {"outputs": [path], "extra": extra,
            "convergence_deltas": _probe_deltas(config),
            "include_measurement": True}


def cmd_transduce(config: RunConfig) -> dict:
    protocol = ProtocolConfig(
        params=config.system_params(),
        schedule=config.schedule(),
        fock_dim=config.fock_dim,
        f_grid=tuple(np.linspace(config.f_min, config.f_max, config.f_points)),
        dt=config.dt,
        npoints=config.npoints,
        smooth_window=config.smooth_window,
        fit_smooth_bins=config.fit_smooth_bins,
        fit_window_pad=config.fit_window_pad,
        seed=config.seed,
        env=config.environment(),
    )
    dist = run_protocol(config.f, config.shots, protocol)
    path = os.path.join(config.out, "transduce.csv")
    write_csv(path, ["shot", "delta_star", "f_meas"],
              zip(range(len(dist.samples)), dist.delta_stars, dist.samples))
    extra = {
        "f_true": dist.f_true,
        "mean_f_meas": dist.mean,
        "std_f_meas": dist.std,
        "n_shots": dist.n_shots,
        "n_failed": dist.failure_count,
        "failures": dist.failures,
        "gaussian_chi2": dist.gaussian_chi2(),
        "calibration": {
            "slope": dist.calibration.slope,
            "intercept": dist.calibration.intercept,
            "r_squared": dist.calibration.r_squared,
        },
    }
    return {"outputs": [path], "extra": extra,
            "convergence_deltas": _probe_deltas(config),
            "include_measurement": True}


def cmd_qfi(config: RunConfig) -> dict:
    deltas = np.linspace(config.delta_min, config.delta_max, config.delta_points)
    d_f = config.qfi_df if config.qfi_df > 0 else None
    results = temperature_scan(
        config.system_params(), config.space(),
        [t * 1e-3 for t in config.temperatures_mk], deltas,
        omega_c=config.omega_c_ghz * GHZ, d_f=d_f)
    rows = []
    n_failed = 0
    for res in results:
        lin = linear_oscillator_qfi(config.gamma, res.delta)
        rows.append((res.delta, res.temperature * 1e3, res.qfi, lin,
                     int(res.flagged), res.error or ""))
        if res.error is not None:
            n_failed += 1
    path = os.path.join(config.out, "qfi.csv")
    write_csv(path, ["delta", "temperature_mk", "qfi", "qfi_linear_analytic",
                     "flagged", "error"], rows)
    return {"outputs": [path],
            "extra": {"n_points": len(results), "n_failed": n_failed},
            "convergence_deltas": deltas[:: max(len(deltas) // 4, 1)]}


def cmd_husimi(config: RunConfig) -> dict:
    params = config.system_params()
    rho = steady_state(build_liouvillian(params, config.space(),
                                         config.environment()))
    halfwidth = config.grid_halfwidth if config.grid_halfwidth > 0 else None
    grid = husimi_q(rho, halfwidth=halfwidth, npts=config.grid_points)
    rows = []
    for i, x in enumerate(grid.x):
        for j, p in enumerate(grid.p):
            rows.append((x, p, grid.values[i, j]))
    path = os.path.join(config.out, "husimi.csv")
    write_csv(path, ["x", "p", "q"], rows)
    extra = {"mass": grid.mass,
             "p_left": half_plane_probability(grid),
             "n_mean": rho.field_expectations()[0]}
    return {"outputs": [path], "extra": extra,
            "convergence_deltas": [config.delta]}


COMMANDS = {
    "steady": cmd_steady,
    "gap": cmd_gap,
    "sweep": cmd_sweep,
    "trajectory": cmd_trajectory,
    "transduce": cmd_transduce,
    "qfi": cmd_qfi,
    "husimi": cmd_husimi,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kposim",
        description="Driven-dissipative Kerr resonator experiments "
                    "(all quantities in units of the Kerr nonlinearity)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML key-value file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default: cwd)")
        p.add_argument("--fock-dim", dest="fock_dim", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--delta", type=float)
        p.add_argument("--f", type=float)
        p.add_argument("--g-abs", dest="g_abs", type=float)
        p.add_argument("--theta", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--eta", type=float)
        p.add_argument("--kappa", type=float)
        p.add_argument("--u", type=float)
        p.add_argument("--delta-min", dest="delta_min", type=float)
        p.add_argument("--delta-max", dest="delta_max", type=float)
        p.add_argument("--delta-points", dest="delta_points", type=int)
        p.add_argument("--sweep-time", dest="sweep_time", type=float)
        p.add_argument("--direction", choices=["up", "down"])
        p.add_argument("--dt", type=float)
        p.add_argument("--shots", type=int)
        p.add_argument("--raw", action="store_const", const=True, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config")}
    started = time.time()
    try:
        config = load_config(args.config, overrides)
        os.makedirs(config.out, exist_ok=True)
        result = COMMANDS[args.command](config)
        include_measurement = result.get("include_measurement", False)
        convergence = convergence_probe(config, result["convergence_deltas"],
                                        include_measurement)
        summary_path = os.path.join(config.out, f"{args.command}_summary.json")
        payload = _summary(args.command, config, started,
                           result["outputs"] + [summary_path], convergence,
                           result["extra"])
        write_summary(summary_path, payload)
        print(f"{args.command}: wrote {', '.join(sorted(result['outputs']))} "
              f"and {summary_path}")
        return 0
    except ConfigError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 2
    except SimulationError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
