"""Quantum Fisher information of steady states with respect to the drive
amplitude.

Two evaluation routes are implemented and cross-checked:

* spectral route: ``I = 2 sum_{ij} |<i| drho/df |j>|^2 / (p_i + p_j)`` over
  eigenpairs of the state, excluding pairs with ``p_i + p_j`` at the spectral
  floor;
* decomposition route: ``I = sum_i (dp_i)^2 / p_i
  + 2 sum_{i != j} (p_i - p_j)^2 / (p_i + p_j) |<i | d j/df>|^2`` built from
  eigen-decompositions at ``f +- df`` that are matched and phase/rotation
  aligned to the central basis (orthogonal Procrustes within near-degenerate
  clusters).

State derivatives are central finite differences of steady states; a
Richardson step-halving check guards the step size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .fock import FockSpace, SystemParams
from .liouvillian import (
    DensityMatrix,
    ThermalEnvironment,
    ZERO_TEMPERATURE,
    build_liouvillian,
    steady_state,
)

SPECTRAL_FLOOR = 1e-10
FORMULA_AGREEMENT_RTOL = 1e-6
RICHARDSON_RTOL = 1e-3
PURITY_TOL = 1e-6


def linear_oscillator_qfi(gamma: float, delta: float) -> float:
    """Closed-form steady-state QFI of the linear model (no Kerr, no
    two-photon terms): ``4 / (gamma^2/4 + delta^2)``, independent of the
    drive amplitude."""
    return 4.0 / (0.25 * gamma**2 + delta**2)


def linear_steady_alpha(params: SystemParams) -> complex:
    """Coherent amplitude of the linear model's steady state,
    ``i f / (gamma/2 - i delta)``."""
    return 1j * params.f / (0.5 * params.gamma - 1j * params.delta)


def steady_density(params: SystemParams, space: FockSpace,
                   env: ThermalEnvironment = ZERO_TEMPERATURE) -> DensityMatrix:
    return steady_state(build_liouvillian(params, space, env))


@dataclass(frozen=True)
class QfiResult:
    delta: float
    temperature: float
    qfi: float
    spectral_floor: float
    finite_difference_step: float
    richardson_rel_change: float | None = None
    flagged: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _spectral_route(p, basis, drho, floor):
    m = basis.conj().T @ drho @ basis
    psum = p[:, None] + p[None, :]
    mask = psum > floor
    out = 2.0 * np.sum(np.abs(m[mask]) ** 2 / psum[mask])
    return float(out)


def _clusters(p, tol):
    """Group sorted eigenvalues into clusters separated by less than tol."""
    groups = [[0]]
    for i in range(1, len(p)):
        if p[i] - p[groups[-1][-1]] < tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _align_to_central(basis0, p_shift, basis_shift, clusters):
    """Match and rotate a shifted eigenbasis onto the central one.

    For each central cluster the best-overlapping shifted columns are
    selected, then rotated by the orthogonal Procrustes solution so that
    within-cluster rotations and phases (which are not physical) drop out
    while cross-cluster mixing (which carries the derivative) survives.
    Returns the aligned eigenvalues and eigenvectors in central order.
    """
    dim = basis0.shape[0]
    overlap = basis0.conj().T @ basis_shift
    p_out = np.empty(dim)
    v_out = np.empty_like(basis_shift)
    used = np.zeros(dim, dtype=bool)
    for cluster in clusters:
        scores = np.sum(np.abs(overlap[cluster, :]) ** 2, axis=0)
        scores[used] = -1.0
        sel = np.argsort(scores)[::-1][: len(cluster)]
        used[sel] = True
        block = overlap[np.ix_(cluster, sel)]
        u, _, wh = np.linalg.svd(block.conj().T)
        rot = u @ wh
        v_out[:, cluster] = basis_shift[:, sel] @ rot
        # eigenvalues paired by ascending order inside the cluster
        p_out[cluster] = np.sort(p_shift[sel])
    return p_out, v_out


def _decomposition_route(p0, basis0, rho_minus, rho_plus, d_f, floor,
                         cluster_tol):
    pm, vm = np.linalg.eigh(rho_minus)
    pp, vp = np.linalg.eigh(rho_plus)
    clusters = _clusters(p0, cluster_tol)
    pm_al, vm_al = _align_to_central(basis0, pm, vm, clusters)
    pp_al, vp_al = _align_to_central(basis0, pp, vp, clusters)
    dp = (pp_al - pm_al) / (2.0 * d_f)
    dpsi = (vp_al - vm_al) / (2.0 * d_f)
    total = 0.0
    diag_keep = 2.0 * p0 > floor
    total += float(np.sum(dp[diag_keep] ** 2 / p0[diag_keep]))
    overlaps = basis0.conj().T @ dpsi
    psum = p0[:, None] + p0[None, :]
    pdiff2 = (p0[:, None] - p0[None, :]) ** 2
    mask = (psum > floor) & ~np.eye(len(p0), dtype=bool)
    total += float(2.0 * np.sum(pdiff2[mask] / psum[mask] * np.abs(overlaps[mask]) ** 2))
    return total


def qfi_from_density_matrices(rho0: np.ndarray, rho_minus: np.ndarray,
                              rho_plus: np.ndarray, d_f: float,
                              spectral_floor: float = SPECTRAL_FLOOR,
                              validate: bool = True,
                              agreement_rtol: float = FORMULA_AGREEMENT_RTOL):
    """QFI from three states ``rho(f - df), rho(f), rho(f + df)``.

    Returns ``(qfi, disagreement)`` where ``disagreement`` is the relative
    difference between the two evaluation routes (None when not validated).
    """
    p0, basis0 = np.linalg.eigh(rho0)
    p0 = np.clip(p0, 0.0, None)
    drho = (rho_plus - rho_minus) / (2.0 * d_f)
    qfi = _spectral_route(p0, basis0, drho, spectral_floor)
    disagreement = None
    if validate:
        scale = float(np.abs(drho).max())
        cluster_tol = max(1e-12, 10.0 * scale * d_f)
        alt = _decomposition_route(p0, basis0, rho_minus, rho_plus, d_f,
                                   spectral_floor, cluster_tol)
        disagreement = abs(qfi - alt) / max(abs(qfi), abs(alt), 1e-300)
        if disagreement > agreement_rtol:
            raise NumericalError(
                f"QFI evaluation routes disagree by {disagreement:.3e} "
                f"(spectral {qfi:.6g}, decomposition {alt:.6g}); "
                "the eigenproblem is poorly conditioned at this point")
    return qfi, disagreement


def _steady_matrix(params, space, env):
    return steady_density(params, space, env).matrix


def qfi_mixed(params: SystemParams, env: ThermalEnvironment, space: FockSpace,
              d_f: float | None = None, spectral_floor: float = SPECTRAL_FLOOR,
              validate: bool = True, richardson: bool = False) -> QfiResult:
    """Steady-state QFI for estimating the drive amplitude.

    ``d_f`` defaults to ``1e-3 * max(f, 1)``.  With ``richardson`` the value
    is recomputed at half the step and the point is flagged when the two
    differ by more than ``1e-3`` relative.
    """
    if d_f is None:
        d_f = 1e-3 * max(params.f, 1.0)
    rho0 = _steady_matrix(params, space, env)
    rho_m = _steady_matrix(params.with_f(params.f - d_f), space, env)
    rho_p = _steady_matrix(params.with_f(params.f + d_f), space, env)
    value, _ = qfi_from_density_matrices(rho0, rho_m, rho_p, d_f,
                                         spectral_floor, validate)
    rich = None
    flagged = False
    if richardson:
        rho_m2 = _steady_matrix(params.with_f(params.f - 0.5 * d_f), space, env)
        rho_p2 = _steady_matrix(params.with_f(params.f + 0.5 * d_f), space, env)
        value2, _ = qfi_from_density_matrices(rho0, rho_m2, rho_p2, 0.5 * d_f,
                                              spectral_floor, validate=False)
        rich = abs(value2 - value) / max(abs(value), abs(value2), 1e-300)
        flagged = rich > RICHARDSON_RTOL
    if value < 0:
        if value < -1e-10:
            raise NumericalError(f"QFI came out negative: {value:.3e}")
        value = 0.0
    temperature = env.temperature if env.temperature is not None else 0.0
    return QfiResult(
        delta=params.delta,
        temperature=temperature,
        qfi=value,
        spectral_floor=spectral_floor,
        finite_difference_step=d_f,
        richardson_rel_change=rich,
        flagged=flagged,
    )


def pure_state_qfi_from_vectors(psi0: np.ndarray, psi_minus: np.ndarray,
                                psi_plus: np.ndarray, d_f: float) -> float:
    """``4 (<dpsi|dpsi> - |<psi|dpsi>|^2)`` with gauge-aligned differences.

    The shifted vectors are re-phased so their overlap with the central one
    is real and positive; the formula is gauge invariant, and the alignment
    only removes the arbitrary solver phase.
    """
    def aligned(v):
        ov = np.vdot(psi0, v)
        if abs(ov) == 0:
            raise NumericalError("shifted state is orthogonal to the center; "
                                 "decrease d_f")
        return v * (np.conj(ov) / abs(ov))

    dpsi = (aligned(psi_plus) - aligned(psi_minus)) / (2.0 * d_f)
    term = np.vdot(dpsi, dpsi).real - abs(np.vdot(psi0, dpsi)) ** 2
    return float(4.0 * term)


def qfi_pure(psi_fn, f: float, d_f: float) -> float:
    """Pure-state QFI via a central finite difference of ``psi_fn``.

    ``psi_fn(f)`` must return a unit vector; use :func:`qfi_mixed` when the
    state has purity below ``1 - 1e-6``.
    """
    psi0 = np.asarray(psi_fn(f), dtype=complex)
    return pure_state_qfi_from_vectors(
        psi0,
        np.asarray(psi_fn(f - d_f), dtype=complex),
        np.asarray(psi_fn(f + d_f), dtype=complex),
        d_f,
    )


def dominant_eigenvector(rho: DensityMatrix, purity_tol: float = PURITY_TOL):
    """Unit vector of a (numerically) pure density matrix.

    Raises when the purity deficit exceeds ``purity_tol`` (use
    :func:`qfi_mixed` in that case).
    """
    purity = rho.purity()
    if purity < 1.0 - purity_tol:
        raise NumericalError(f"state purity {purity:.8f} below 1 - {purity_tol}")
    w, v = np.linalg.eigh(rho.matrix)
    return v[:, -1]


def temperature_scan(params: SystemParams, space: FockSpace, temperatures,
                     delta_grid, omega_c: float, d_f: float | None = None,
                     validate: bool = True,
                     richardson: bool = True) -> list[QfiResult]:
    """QFI surface over ``(delta, temperature)``.

    Point failures are captured in the result objects (``error`` field) and
    the scan continues.  Temperatures are in kelvin; the bath occupation is
    the Bose factor at ``omega_c``.
    """
    results = []
    for temperature in temperatures:
        env = ThermalEnvironment.from_temperature(omega_c, temperature)
        for delta in delta_grid:
            point = params.with_delta(float(delta))
            try:
                res = qfi_mixed(point, env, space, d_f=d_f,
                                validate=validate, richardson=richardson)
            except NumericalError as exc:
                res = QfiResult(
                    delta=float(delta), temperature=float(temperature),
                    qfi=float("nan"), spectral_floor=SPECTRAL_FLOOR,
                    finite_difference_step=d_f or 1e-3 * max(params.f, 1.0),
                    error=str(exc),
                )
            results.append(res)
    return results
