"""Phase-space analysis: Husimi functions, half-plane probabilities,
switch statistics, and the arctan phase fit.

Phase-space coordinates label coherent states directly: a grid point
``(x, p)`` stands for ``|alpha = x + i p>``.  These coordinates are half the
quadratures ``<a + a^dag>``, ``<-i(a - a^dag)>`` used in sweep records; the
polar angle (and hence anything phase-based) is identical in the two
conventions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import least_squares
from scipy.special import gammaln

from .dynamics import SweepSchedule, integrate_sweep
from .errors import CoverageWarning, FitError, ModelViolationWarning, NumericalError
from .fock import FockSpace, SystemParams, coherent_amplitudes
from .liouvillian import DensityMatrix, ThermalEnvironment, ZERO_TEMPERATURE

GRID_MASS_TOL = 1e-2
CLIPPED_MASS_TOL = 0.1


@dataclass(frozen=True)
class HusimiGrid:
    """Husimi function sampled on a rectangular grid (midpoint weights)."""

    x: np.ndarray          # shape (nx,)
    p: np.ndarray          # shape (np,)
    values: np.ndarray     # shape (nx, np), non-negative

    @property
    def cell_area(self) -> float:
        return float((self.x[1] - self.x[0]) * (self.p[1] - self.p[0]))

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area)


def default_grid_halfwidth(n_mean: float) -> float:
    """Square half-width enclosing states with the given photon number."""
    return max(4.0, 2.0 * np.sqrt(max(n_mean, 0.0)) + 3.0)


def husimi_q(rho: DensityMatrix, halfwidth: float | None = None,
             npts: int = 201) -> HusimiGrid:
    """Sample ``Q(x, p) = <alpha| rho |alpha> / pi`` at ``alpha = x + i p``.

    The grid half-width defaults to a photon-number heuristic that encloses
    the state's support; a coverage warning reports the integrated mass when
    it falls short.
    """
    dim = rho.space.dim
    if halfwidth is None:
        n_mean, _, _ = rho.field_expectations()
        halfwidth = default_grid_halfwidth(n_mean)
    xs = np.linspace(-halfwidth, halfwidth, npts)
    ps = np.linspace(-halfwidth, halfwidth, npts)
    # coherent amplitudes for the whole grid in one shot
    alpha = (xs[:, None] + 1j * ps[None, :]).ravel()
    k = np.arange(dim)
    log_fact = 0.5 * gammaln(k + 1.0)
    r = np.abs(alpha)
    safe_r = np.where(r == 0, 1.0, r)
    coh = np.exp(-0.5 * r[:, None] ** 2 + k[None, :] * np.log(safe_r)[:, None]
                 - log_fact[None, :]).astype(complex)
    phase = np.where(r == 0, 1.0, alpha / safe_r)
    coh *= phase[:, None] ** k[None, :]
    coh[r == 0, :] = 0.0
    coh[r == 0, 0] = 1.0
    q = np.einsum("gj,jk,gk->g", coh.conj(), rho.matrix, coh).real / np.pi
    grid = HusimiGrid(x=xs, p=ps, values=q.reshape(npts, npts))
    if abs(grid.mass - 1.0) > GRID_MASS_TOL:
        warnings.warn(
            f"phase-space grid (halfwidth {halfwidth:.2f}) captures mass "
            f"{grid.mass:.4f}; enlarge the grid",
            CoverageWarning,
            stacklevel=2,
        )
    return grid


def half_plane_probability(grid: HusimiGrid) -> float:
    """Probability mass of the left half plane, ``integral over x < 0``.

    Midpoint quadrature; a column exactly at ``x = 0`` contributes half
    weight so symmetric states give exactly one half.
    """
    if abs(grid.mass - 1.0) > GRID_MASS_TOL:
        raise NumericalError(
            f"grid mass {grid.mass:.4f} deviates from 1 beyond {GRID_MASS_TOL}; "
            "cannot form half-plane probabilities")
    w = np.where(grid.x < 0, 1.0, np.where(grid.x == 0, 0.5, 0.0))
    return float((grid.values * w[:, None]).sum() * grid.cell_area / grid.mass)


def half_plane_operator(dim: int) -> np.ndarray:
    """Hermitian matrix ``M`` with ``tr(rho M) = integral of Q over x < 0``.

    Closed form of ``(1/pi) * integral_{Re alpha < 0} |alpha><alpha| d^2alpha``
    in the Fock basis: radial integrals give ``Gamma((j+k)/2 + 1)/2`` and the
    angular integral vanishes unless ``j - k`` is odd (or zero).  Exact on
    the truncated space, so scan-time probabilities need no phase-space grid.
    """
    j = np.arange(dim)
    jj, kk = np.meshgrid(j, j, indexing="ij")
    m = kk - jj
    safe_m = np.where(m == 0, 1, m)
    odd_term = (-1.0) ** m * 2.0 * np.sin(m * np.pi / 2.0) / safe_m
    angular = np.where(m == 0, np.pi, np.where(m % 2 == 0, 0.0, odd_term))
    log_radial = gammaln((jj + kk) / 2.0 + 1.0) - 0.5 * (gammaln(jj + 1.0) + gammaln(kk + 1.0))
    return angular * np.exp(log_radial) / (2.0 * np.pi)


@dataclass(frozen=True)
class SwitchPDF:
    """Per-step switching probabilities along a down-sweep.

    ``p_tr[i]`` is the decrement of the left-half-plane probability between
    output steps ``i`` and ``i+1`` (clipped at zero); ``delta_grid`` holds the
    midpoints of those steps in down-sweep order.  ``clipped_mass`` is the
    total negative weight removed by clipping, a diagnostic for the
    one-way-transition assumption behind the construction.
    """

    delta_grid: np.ndarray
    p_tr: np.ndarray
    clipped_mass: float
    p_left: np.ndarray
    p_left_deltas: np.ndarray

    @property
    def pdf(self) -> np.ndarray:
        """Normalized density over detuning (unit integral where defined)."""
        width = np.abs(np.gradient(self.delta_grid))
        total = float((self.p_tr * 1.0).sum())
        if total <= 0:
            return np.zeros_like(self.p_tr)
        return self.p_tr / total / width

    def mode(self) -> float:
        return float(self.delta_grid[np.argmax(self.p_tr)])

    def mean(self) -> float:
        total = self.p_tr.sum()
        if total <= 0:
            raise NumericalError("switch PDF has no positive mass")
        return float((self.delta_grid * self.p_tr).sum() / total)


def transition_pdf(params: SystemParams, schedule: SweepSchedule, space: FockSpace,
                   env: ThermalEnvironment = ZERO_TEMPERATURE,
                   window=None, npoints: int = 500,
                   record=None) -> SwitchPDF:
    """Switch-location distribution from the monitored master equation.

    Integrates the down-sweep with the measurement channel folded in
    (``gamma -> gamma + kappa``), tracks the left-half-plane probability of
    the evolving state with the exact half-plane operator, and differences it
    step by step.  ``window`` restricts the analysis to the detuning interval
    where the switch is expected (the construction assumes one-way
    transitions, which holds only across the switch region); it defaults to
    the full schedule.  A precomputed sweep ``record`` of conditional states
    is accepted to avoid re-integration.
    """
    if schedule.direction != "down":
        raise ValueError("transition PDF is defined for down-sweeps")
    if record is None:
        record = integrate_sweep(params, schedule, space, env,
                                 include_measurement=True, npoints=npoints,
                                 return_states=True)
    states = record.states
    if states is None:
        raise ValueError("sweep record must carry the evolving states")
    mat = half_plane_operator(space.dim)
    p_left = np.einsum("tij,ji->t", states, mat).real
    deltas = record.deltas
    if window is not None:
        keep = (deltas >= min(window)) & (deltas <= max(window))
        p_left_w = p_left[keep]
        deltas_w = deltas[keep]
    else:
        p_left_w = p_left
        deltas_w = deltas
    raw = p_left_w[:-1] - p_left_w[1:]
    clipped = float(-raw[raw < 0].sum())
    p_tr = np.clip(raw, 0.0, None)
    if clipped > CLIPPED_MASS_TOL:
        warnings.warn(
            f"left-half-plane probability is non-monotone: clipped mass "
            f"{clipped:.3f} exceeds {CLIPPED_MASS_TOL}; the one-way transition "
            "assumption is violated on this window",
            ModelViolationWarning,
            stacklevel=2,
        )
    mid = 0.5 * (deltas_w[:-1] + deltas_w[1:])
    return SwitchPDF(delta_grid=mid, p_tr=p_tr, clipped_mass=clipped,
                     p_left=p_left, p_left_deltas=deltas)


@dataclass(frozen=True)
class ArctanFit:
    """Result of fitting ``phi(delta) = arctan(A (delta - delta_star)) + C``."""

    delta_star: float
    slope_a: float
    offset_c: float
    fit_rms: float
    rotation: float
    in_window: bool
    n_points: int

    @property
    def ok(self) -> bool:
        return self.in_window and abs(self.slope_a) > 0.05


def _wrap(phase):
    return (phase + np.pi) % (2.0 * np.pi) - np.pi


def fit_arctan(record, window, smooth_bins: int = 5, f_scale: float = 0.8,
               n_starts: int = 5, slope_threshold: float = 0.05,
               require_in_window: bool = True) -> ArctanFit:
    """Extract the switch location from a (noisy) phase record.

    The measured quadratures are boxcar-smoothed, the record is rotated so
    the high-detuning plateau sits at ``+pi/2`` (the arctan model's upper
    rail), and a robust least-squares fit with wrapped phase residuals is run
    from several starting points across the window.  Works on trajectory
    records (measured quadratures) and deterministic sweep records alike.

    The fit is performed on a window-normalized detuning axis, which makes
    the returned parameters exactly equivariant under rescaling of the
    detuning axis.
    """
    deltas = np.asarray(record.deltas, dtype=float)
    if hasattr(record, "x_meas"):
        x = np.asarray(record.x_meas, dtype=float)
        p = np.asarray(record.p_meas, dtype=float)
    else:
        x = np.asarray(record.x, dtype=float)
        p = np.asarray(record.p, dtype=float)
    order = np.argsort(deltas)
    deltas, x, p = deltas[order], x[order], p[order]
    if smooth_bins > 1:
        x = uniform_filter1d(x, smooth_bins, mode="nearest")
        p = uniform_filter1d(p, smooth_bins, mode="nearest")
    lo, hi = min(window), max(window)
    keep = (deltas >= lo) & (deltas <= hi)
    if keep.sum() < 10:
        raise FitError("fewer than 10 samples inside the fit window")
    d_win = deltas[keep]
    phi = np.arctan2(p[keep], x[keep])

    # rotate the high-detuning plateau (pre-switch on a down-sweep) to +pi/2
    tail = max(3, int(0.15 * len(d_win)))
    plateau = np.exp(1j * phi[-tail:]).mean()
    rotation = np.pi / 2 - np.angle(plateau)
    phi_rot = _wrap(phi + rotation)

    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    d_norm = (d_win - mid) / half

    def residuals(q):
        slope, center, offset = q
        return _wrap(phi_rot - (np.arctan(slope * (d_norm - center)) + offset))

    best = None
    first_guess = None
    for center0 in np.linspace(-0.7, 0.7, n_starts):
        guess = [5.0, center0, 0.0]
        if first_guess is None:
            first_guess = guess
        sol = least_squares(residuals, x0=guess, loss="soft_l1",
                            f_scale=f_scale, max_nfev=400)
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitError("arctan fit did not converge", guess=first_guess,
                       residual=None if best is None else float(best.cost))
    slope_n, center_n, offset = best.x
    rms = float(np.sqrt(np.mean(residuals(best.x) ** 2)))
    delta_star = mid + center_n * half
    slope = slope_n / half
    in_window = bool(lo < delta_star < hi)
    fit = ArctanFit(delta_star=float(delta_star), slope_a=float(slope),
                    offset_c=float(_wrap(offset - rotation)), fit_rms=rms,
                    rotation=float(rotation), in_window=in_window,
                    n_points=int(keep.sum()))
    if require_in_window and not in_window:
        raise FitError(
            f"fitted switch {delta_star:.3f} escapes the window ({lo}, {hi})",
            guess=first_guess, residual=rms)
    if abs(slope) <= slope_threshold:
        raise FitError(f"fitted slope {slope:.3g} below threshold; no switch",
                       guess=first_guess, residual=rms)
    return fit
