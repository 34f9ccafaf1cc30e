"""Time integration of the master equation under linear detuning sweeps.

The right-hand side is evaluated in matrix form (a handful of ``dim x dim``
products) rather than through the ``dim^2 x dim^2`` superoperator, which is
what makes long sweeps affordable: the detuning commutator and all
anticommutator halves of the dissipators are diagonal and reduce to
elementwise products, and the jump terms ``O rho O^dag`` are index shifts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import curve_fit

from .errors import NoSwitchError, NumericalError
from .fock import FockSpace, SystemParams
from .liouvillian import (
    DensityMatrix,
    ThermalEnvironment,
    ZERO_TEMPERATURE,
    build_liouvillian,
    effective_gamma,
    steady_state,
)

TRACE_DRIFT_TOL = 1e-6
PHASE_UNDEFINED_TOL = 1e-6
SWITCH_JUMP_THRESHOLD = np.pi / 2


@dataclass(frozen=True)
class SweepSchedule:
    """Affine detuning ramp ``delta(t) = delta_start + (delta_end - delta_start) t/t_s``."""

    delta_start: float
    delta_end: float
    sweep_time: float

    def __post_init__(self):
        if self.sweep_time <= 0:
            raise ValueError("sweep_time must be positive")

    @property
    def direction(self) -> str:
        return "down" if self.delta_end < self.delta_start else "up"

    def delta_at(self, t):
        return self.delta_start + (self.delta_end - self.delta_start) * t / self.sweep_time


class LindbladRhs:
    """Matrix-form generator with the detuning left as a call argument.

    ``rhs(rho, delta)`` returns ``drho/dt``.  Works on a single matrix or on
    a batch with shape ``(batch, dim, dim)``.
    """

    def __init__(self, params: SystemParams, space: FockSpace,
                 env: ThermalEnvironment = ZERO_TEMPERATURE,
                 include_measurement: bool = False):
        dim = space.dim
        ns = np.arange(dim, dtype=float)
        g = params.g
        # detuning-independent Hamiltonian: Kerr (diagonal) + drives
        h0 = np.diag(0.5 * params.u * ns * (ns - 1)).astype(complex)
        a = np.zeros((dim, dim), dtype=complex)
        ks = np.arange(1, dim)
        a[ks - 1, ks] = np.sqrt(ks)
        h0 -= params.f * (a + a.conj().T)
        h0 -= 0.5 * np.conj(g) * (a @ a) + 0.5 * g * (a.conj().T @ a.conj().T)
        self.h0 = h0
        self.delta_comm = 1j * (ns[:, None] - ns[None, :])  # i*delta*[n,rho] elementwise
        g_eff = effective_gamma(params, include_measurement)
        g_down = g_eff * (1.0 + env.n_th)
        g_up = g_eff * env.n_th
        m2 = ns * (ns - 1)
        self.gain_down = g_down * np.sqrt(np.outer(ns[1:], ns[1:]))
        self.gain_up = g_up * np.sqrt(np.outer(ns[:-1] + 1.0, ns[:-1] + 1.0))
        self.gain_two = params.eta * np.sqrt(np.outer(m2[2:], m2[2:]))
        decay = 0.5 * (g_down * ns + g_up * (ns + 1.0) + params.eta * m2)
        self.damping = -(decay[:, None] + decay[None, :])
        self.has_up = g_up > 0
        self.has_two = params.eta > 0
        self.space = space
        self.dim = dim

    def __call__(self, rho: np.ndarray, delta: float) -> np.ndarray:
        h0 = self.h0
        out = -1j * (h0 @ rho - rho @ h0)
        out += (delta * self.delta_comm) * rho
        out += self.damping * rho
        out[..., :-1, :-1] += self.gain_down * rho[..., 1:, 1:]
        if self.has_up:
            out[..., 1:, 1:] += self.gain_up * rho[..., :-1, :-1]
        if self.has_two:
            out[..., :-2, :-2] += self.gain_two * rho[..., 2:, 2:]
        return out


@dataclass(frozen=True)
class SweepRecord:
    """Observables of the deterministic swept state on a uniform time grid.

    ``states`` optionally carries the full density-matrix trajectory
    (``(npoints, dim, dim)``) for analyses that need more than moments.
    """

    times: np.ndarray
    deltas: np.ndarray
    n_mean: np.ndarray
    x: np.ndarray
    p: np.ndarray
    schedule: SweepSchedule
    final_state: DensityMatrix
    states: np.ndarray | None = None

    @property
    def phi(self) -> np.ndarray:
        """Field phase ``atan2(p, x)``; NaN where both quadratures vanish."""
        amp = np.abs(self.x) + np.abs(self.p)
        return np.where(amp < PHASE_UNDEFINED_TOL, np.nan, np.arctan2(self.p, self.x))


def integrate_sweep(params: SystemParams, schedule: SweepSchedule, space: FockSpace,
                    env: ThermalEnvironment = ZERO_TEMPERATURE,
                    initial: DensityMatrix | None = None,
                    include_measurement: bool = False,
                    npoints: int = 500, rtol: float = 1e-8, atol: float = 1e-10,
                    method: str = "RK45", return_states: bool = False) -> SweepRecord:
    """Integrate the master equation along a detuning ramp.

    The initial state defaults to the steady state at ``delta_start``.
    """
    if initial is None:
        sup = build_liouvillian(params.with_delta(schedule.delta_start), space,
                                env, include_measurement)
        initial = steady_state(sup)
    rhs = LindbladRhs(params, space, env, include_measurement)
    dim = space.dim

    def odefun(t, y):
        rho = y.reshape(dim, dim)
        return rhs(rho, schedule.delta_at(t)).ravel()

    times = np.linspace(0.0, schedule.sweep_time, npoints)
    sol = solve_ivp(odefun, (0.0, schedule.sweep_time),
                    initial.matrix.ravel().astype(complex),
                    t_eval=times, rtol=rtol, atol=atol, method=method)
    if not sol.success:
        raise NumericalError(f"sweep integration failed at t={sol.t[-1] if len(sol.t) else 0}: {sol.message}")
    rhos = sol.y.T.reshape(-1, dim, dim)
    traces = np.einsum("tii->t", rhos).real
    drift = np.abs(traces - 1.0).max()
    if drift > TRACE_DRIFT_TOL:
        raise NumericalError(f"trace drift {drift:.3e} exceeds {TRACE_DRIFT_TOL:.1e}")
    ns_op = np.arange(dim, dtype=float)
    n_mean = np.einsum("tii,i->t", rhos, ns_op).real
    ks = np.arange(1, dim)
    a_mean = (rhos[:, ks, ks - 1] * np.sqrt(ks)).sum(axis=1)
    final = DensityMatrix(space=space, matrix=0.5 * (rhos[-1] + rhos[-1].conj().T)).validate()
    return SweepRecord(
        times=times,
        deltas=schedule.delta_at(times),
        n_mean=n_mean,
        x=2.0 * a_mean.real,
        p=2.0 * a_mean.imag,
        schedule=schedule,
        final_state=final,
        states=rhos if return_states else None,
    )


@dataclass(frozen=True)
class SwitchPoint:
    """Location and size of a phase switch extracted from a sweep record."""

    delta_star: float
    jump_magnitude: float


def extract_switch(record, window=None) -> SwitchPoint:
    """Locate the phase switch of a (noise-free) sweep record.

    The phase is unwrapped along the sweep, the steepest segment of
    ``phi(delta)`` is found, and ``delta_star`` is refined to the crossing of
    the mid-level between the two flanking plateaus.  The jump magnitude is
    the difference of the plateau medians taken a few percent of the record
    away from the steepest point, outside the smeared transition.  Raises
    :class:`NoSwitchError` when the jump does not exceed ``pi/2``.
    """
    deltas = np.asarray(record.deltas, dtype=float)
    phi = np.asarray(record.phi, dtype=float)
    ok = np.isfinite(phi)
    if window is not None:
        ok &= (deltas >= min(window)) & (deltas <= max(window))
    deltas = deltas[ok]
    phi = phi[ok]
    if len(phi) < 24:
        raise NoSwitchError("record too short for switch extraction")
    phiu = np.unwrap(phi)
    steps = np.abs(np.diff(phiu))
    k = int(np.argmax(steps))
    w = max(2, len(phiu) // 50)
    lo = slice(max(k - 5 * w, 0), max(k - w, 1))
    hi = slice(min(k + 1 + w, len(phiu) - 1), min(k + 1 + 5 * w, len(phiu)))
    before = float(np.median(phiu[lo]))
    after = float(np.median(phiu[hi]))
    jump = abs(after - before)
    if jump <= SWITCH_JUMP_THRESHOLD:
        raise NoSwitchError(f"largest phase change {jump:.3f} rad is below pi/2")
    mid = 0.5 * (before + after)
    # interpolate the crossing of the mid level inside the steepest segment
    y0, y1 = phiu[k], phiu[k + 1]
    if y1 == y0:
        frac = 0.5
    else:
        frac = (mid - y0) / (y1 - y0)
    frac = min(max(frac, 0.0), 1.0)
    delta_star = float(deltas[k] + frac * (deltas[k + 1] - deltas[k]))
    return SwitchPoint(delta_star=delta_star, jump_magnitude=jump)


def relax_to_steady(params: SystemParams, delta: float, space: FockSpace,
                    initial: DensityMatrix, duration: float,
                    env: ThermalEnvironment = ZERO_TEMPERATURE,
                    include_measurement: bool = False,
                    rtol: float = 1e-8, atol: float = 1e-10) -> DensityMatrix:
    """Propagate at fixed detuning for ``duration``; used as a brute-force oracle."""
    rhs = LindbladRhs(params, space, env, include_measurement)
    dim = space.dim
    sol = solve_ivp(lambda t, y: rhs(y.reshape(dim, dim), delta).ravel(),
                    (0.0, duration), initial.matrix.ravel().astype(complex),
                    rtol=rtol, atol=atol, method="RK45")
    if not sol.success:
        raise NumericalError(f"relaxation failed: {sol.message}")
    rho = sol.y[:, -1].reshape(dim, dim)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    return DensityMatrix(space=space, matrix=rho).validate()


def fit_sweep_time_convergence(sweep_times, delta_stars):
    """Fit ``delta_star(t_s) = b / t_s**a + c``.

    Returns ``(a, b, c, rms_residual)``.  ``c`` estimates the steady-state
    switch location approached as the ramp slows down.
    """
    ts = np.asarray(sweep_times, dtype=float)
    ds = np.asarray(delta_stars, dtype=float)

    def model(t, a, b, c):
        return b / t**a + c

    b0 = (ds[0] - ds[-1]) * ts[0] ** 0.2
    popt, _ = curve_fit(model, ts, ds, p0=[0.2, b0, ds[-1]],
                        bounds=([1e-3, -np.inf, -np.inf], [2.0, np.inf, np.inf]),
                        maxfev=20000)
    resid = ds - model(ts, *popt)
    rms = float(np.sqrt(np.mean(resid**2)))
    return float(popt[0]), float(popt[1]), float(popt[2]), rms
