"""Heterodyne unraveling of the master equation (Euler-Maruyama).

The conditional state follows

    drho = L_eff[rho] dt + sqrt(kappa/2) (dW_x M[a] + dW_p M[-i a]) rho,

with ``M[O] rho = O rho + rho O^dag - tr(O rho + rho O^dag) rho`` and the
deterministic part using ``gamma + kappa`` single-photon loss.  The
measurement record sharing the same Wiener increments is

    x_meas = x + sqrt(2/kappa) dW_x/dt,    p_meas = p + sqrt(2/kappa) dW_p/dt.

Trajectories are advanced in a single numpy batch; per-trajectory noise comes
from independent, reproducible streams so a record depends only on
``(seed, trajectory_index)`` and not on which batch it was computed in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import LindbladRhs, SweepSchedule
from .errors import ConfigError, NumericalError
from .fock import FockSpace, SystemParams
from .liouvillian import (
    DensityMatrix,
    ThermalEnvironment,
    ZERO_TEMPERATURE,
    build_liouvillian,
    steady_state,
)

TRACE_STEP_TOL = 1e-6
POSITIVITY_TOL = 1e-6
HERMITIZE_EVERY = 1000


@dataclass(frozen=True)
class NoiseStream:
    """Reproducible Wiener-increment source for one trajectory.

    Streams for different ``trajectory_index`` values are statistically
    independent (numpy ``SeedSequence`` spawning), and the same
    ``(seed, trajectory_index)`` always reproduces identical increments.
    """

    seed: int
    trajectory_index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed,
                                    spawn_key=(self.trajectory_index,))
        return np.random.default_rng(ss)

    def wiener_increments(self, steps: int, dt: float) -> np.ndarray:
        """``(steps, 2)`` increments with variance ``dt`` per step."""
        return self.generator().standard_normal((steps, 2)) * np.sqrt(dt)


@dataclass(frozen=True)
class TrajectoryRecord:
    """One conditional trajectory plus its binned measurement record.

    ``x_meas``/``p_meas`` are boxcar means of the raw record over
    ``smooth_window`` integration steps centered on each output bin;
    ``x_meas_raw``/``p_meas_raw`` are single-step samples at the bin centers.
    ``x``/``p``/``n_mean`` are bin means of the conditional-state moments.
    """

    times: np.ndarray
    deltas: np.ndarray
    x_meas: np.ndarray
    p_meas: np.ndarray
    x_meas_raw: np.ndarray
    p_meas_raw: np.ndarray
    x: np.ndarray
    p: np.ndarray
    n_mean: np.ndarray
    dt: float
    smooth_window: int
    seed: int
    trajectory_index: int
    final_state: DensityMatrix

    @property
    def phi_meas(self) -> np.ndarray:
        return np.arctan2(self.p_meas, self.x_meas)

    @property
    def phi(self) -> np.ndarray:
        return np.arctan2(self.p, self.x)


def _initial_state(params, schedule, space, env):
    sup = build_liouvillian(params.with_delta(schedule.delta_start), space, env,
                            include_measurement=True)
    return steady_state(sup)


def heterodyne_ensemble(params: SystemParams, schedule: SweepSchedule,
                        space: FockSpace, seed: int, n_traj: int,
                        dt: float = 1e-3, npoints: int = 500,
                        smooth_window: int = 50,
                        env: ThermalEnvironment = ZERO_TEMPERATURE,
                        initial: DensityMatrix | None = None,
                        trajectory_indices=None,
                        raw_sink=None) -> list[TrajectoryRecord]:
    """Integrate a batch of heterodyne trajectories.

    All trajectories share the initial state (steady state at the start
    detuning unless ``initial`` is given) and differ only through their noise
    streams.  ``raw_sink(index, times, deltas, x_meas, p_meas)`` is invoked
    per trajectory with the full-resolution record when provided.
    """
    if params.kappa <= 0:
        raise ConfigError("heterodyne records require kappa > 0 "
                          "(measured quadrature noise scales as 1/sqrt(kappa))")
    if n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    if trajectory_indices is None:
        trajectory_indices = list(range(n_traj))
    if len(trajectory_indices) != n_traj:
        raise ConfigError("trajectory_indices length must match n_traj")
    if initial is None:
        initial = _initial_state(params, schedule, space, env)

    dim = space.dim
    nsteps = int(round(schedule.sweep_time / dt))
    stride = max(nsteps // npoints, 1)
    nsteps = stride * npoints
    window = int(min(max(smooth_window, 1), stride))

    rhs = LindbladRhs(params, space, env, include_measurement=True)
    a = np.zeros((dim, dim), dtype=complex)
    ks = np.arange(1, dim)
    a[ks - 1, ks] = np.sqrt(ks)
    a_dag = a.conj().T
    sqk = np.sqrt(ks)

    rhos = np.repeat(initial.matrix[None, :, :], n_traj, axis=0).astype(complex)
    noise_amp = np.sqrt(params.kappa / 2.0)
    meas_noise = np.sqrt(2.0 / params.kappa) / dt

    d_w = np.empty((n_traj, nsteps, 2))
    for row, idx in enumerate(trajectory_indices):
        d_w[row] = NoiseStream(seed, idx).wiener_increments(nsteps, dt)

    xm_sum = np.zeros((n_traj, npoints))
    pm_sum = np.zeros((n_traj, npoints))
    xm_raw = np.zeros((n_traj, npoints))
    pm_raw = np.zeros((n_traj, npoints))
    xc_sum = np.zeros((n_traj, npoints))
    pc_sum = np.zeros((n_traj, npoints))
    nc_sum = np.zeros((n_traj, npoints))
    if raw_sink is not None:
        xm_full = np.empty((n_traj, nsteps))
        pm_full = np.empty((n_traj, nsteps))

    ns_diag = np.arange(dim, dtype=float)
    window_start = (stride - window) // 2
    window_end = window_start + window
    raw_pick = stride // 2
    max_trace_dev = 0.0

    for i in range(nsteps):
        t = (i + 0.5) * dt
        delta = schedule.delta_at(t)
        a_mean = np.sum(sqk * rhos[:, ks, ks - 1], axis=1)
        x = 2.0 * a_mean.real
        p = 2.0 * a_mean.imag
        a_rho = a @ rhos
        rho_ad = rhos @ a_dag
        m_x = (a_rho + rho_ad) - x[:, None, None] * rhos
        m_p = -1j * (a_rho - rho_ad) - p[:, None, None] * rhos
        drift = rhs(rhos, delta)
        dwx = d_w[:, i, 0]
        dwp = d_w[:, i, 1]
        rhos = rhos + dt * drift + noise_amp * (
            dwx[:, None, None] * m_x + dwp[:, None, None] * m_p)
        traces = np.einsum("bii->b", rhos).real
        max_trace_dev = max(max_trace_dev, float(np.abs(traces - 1.0).max()))
        rhos /= traces[:, None, None]
        if (i + 1) % HERMITIZE_EVERY == 0:
            rhos = 0.5 * (rhos + rhos.conj().transpose(0, 2, 1))

        x_meas = x + meas_noise * dwx
        p_meas = p + meas_noise * dwp
        j = i // stride
        off = i - j * stride
        if window_start <= off < window_end:
            xm_sum[:, j] += x_meas
            pm_sum[:, j] += p_meas
        if off == raw_pick:
            xm_raw[:, j] = x_meas
            pm_raw[:, j] = p_meas
        xc_sum[:, j] += x
        pc_sum[:, j] += p
        nc_sum[:, j] += np.einsum("bii,i->b", rhos, ns_diag).real
        if raw_sink is not None:
            xm_full[:, i] = x_meas
            pm_full[:, i] = p_meas

    if max_trace_dev > TRACE_STEP_TOL:
        raise NumericalError(
            f"per-step trace drift {max_trace_dev:.3e} exceeds {TRACE_STEP_TOL:.1e}; "
            "reduce dt")
    rhos = 0.5 * (rhos + rhos.conj().transpose(0, 2, 1))
    min_eig = min(float(np.linalg.eigvalsh(r).min()) for r in rhos)
    if min_eig <= -POSITIVITY_TOL:
        raise NumericalError(
            f"conditional state eigenvalue {min_eig:.3e} below -{POSITIVITY_TOL:.1e}; "
            "reduce dt")

    times = (np.arange(npoints) + 0.5) * stride * dt
    deltas = schedule.delta_at(times)
    if raw_sink is not None:
        t_full = (np.arange(nsteps) + 0.5) * dt
        d_full = schedule.delta_at(t_full)
        for row, idx in enumerate(trajectory_indices):
            raw_sink(idx, t_full, d_full, xm_full[row], pm_full[row])

    records = []
    for row, idx in enumerate(trajectory_indices):
        final = DensityMatrix(space=space, matrix=rhos[row] / np.trace(rhos[row]).real)
        records.append(TrajectoryRecord(
            times=times,
            deltas=deltas,
            x_meas=xm_sum[row] / window,
            p_meas=pm_sum[row] / window,
            x_meas_raw=xm_raw[row],
            p_meas_raw=pm_raw[row],
            x=xc_sum[row] / stride,
            p=pc_sum[row] / stride,
            n_mean=nc_sum[row] / stride,
            dt=dt,
            smooth_window=window,
            seed=seed,
            trajectory_index=idx,
            final_state=final,
        ))
    return records


def integrate_heterodyne(params: SystemParams, schedule: SweepSchedule,
                         noise: NoiseStream, space: FockSpace,
                         dt: float = 1e-3, npoints: int = 500,
                         smooth_window: int = 50,
                         env: ThermalEnvironment = ZERO_TEMPERATURE,
                         initial: DensityMatrix | None = None) -> TrajectoryRecord:
    """Single heterodyne trajectory for the given noise stream."""
    return heterodyne_ensemble(
        params, schedule, space, seed=noise.seed, n_traj=1, dt=dt,
        npoints=npoints, smooth_window=smooth_window, env=env, initial=initial,
        trajectory_indices=[noise.trajectory_index],
    )[0]


def _ensemble_chunk(args):
    kwargs, indices = args
    return heterodyne_ensemble(trajectory_indices=indices,
                               n_traj=len(indices), **kwargs)


def heterodyne_ensemble_parallel(params: SystemParams, schedule: SweepSchedule,
                                 space: FockSpace, seed: int, n_traj: int,
                                 workers: int = 1, **kwargs) -> list[TrajectoryRecord]:
    """Ensemble runner that may spread trajectory chunks over processes.

    Results are identical to the serial run and are returned sorted by
    trajectory index regardless of worker scheduling.
    """
    if workers <= 1:
        return heterodyne_ensemble(params, schedule, space, seed=seed,
                                   n_traj=n_traj, **kwargs)
    import concurrent.futures

    base = dict(params=params, schedule=schedule, space=space, seed=seed, **kwargs)
    indices = list(range(n_traj))
    size = -(-n_traj // workers)
    chunks = [indices[i:i + size] for i in range(0, n_traj, size)]
    records = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_ensemble_chunk, [(base, c) for c in chunks]):
            records.extend(part)
    return sorted(records, key=lambda r: r.trajectory_index)


@dataclass(frozen=True)
class WienerStats:
    """Sample statistics of an ensemble of Wiener endpoints ``W(t)``."""

    t_final: float
    mean: float
    variance: float
    steps: int
    n_paths: int

    @property
    def mean_ok(self) -> bool:
        # sample mean of n_paths endpoints, each N(0, t): 4-sigma band
        return abs(self.mean) < 4.0 * np.sqrt(self.t_final / self.n_paths)

    @property
    def variance_ok(self) -> bool:
        return abs(self.variance / self.t_final - 1.0) < 0.1


def wiener_selfcheck(noise: NoiseStream, steps: int, dt: float) -> WienerStats:
    """Statistics of ``W(t)`` over an ensemble of paths from one stream.

    Splits the stream into chunks of ``steps`` increments, treats each chunk
    as an independent path, and checks the endpoint mean and variance against
    ``<W(t)> = 0`` and ``<W(t)^2> = t``.
    """
    if steps < 1000:
        raise ValueError("need steps >= 1e3 for meaningful statistics")
    n_paths = max(200, int(2e6 // steps))
    incr = noise.generator().standard_normal((n_paths, steps)) * np.sqrt(dt)
    endpoints = incr.sum(axis=1)
    return WienerStats(
        t_final=steps * dt,
        mean=float(endpoints.mean()),
        variance=float(endpoints.var()),
        steps=steps,
        n_paths=n_paths,
    )
