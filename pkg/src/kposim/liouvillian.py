"""Vectorized Liouvillian: construction, steady states, spectra.

Vectorization is column-stacking: ``vec(rho) = rho.ravel(order="F")``, so
``vec(A @ rho @ B) = kron(B.T, A) @ vec(rho)``.  The generator implemented
here is

    drho/dt = -i[H, rho] + g_eff (1 + n_th) D[a] rho + g_eff n_th D[a^dag] rho
              + eta D[a^2] rho,

with ``D[O] rho = O rho O^dag - (O^dag O rho + rho O^dag O)/2`` and
``g_eff = gamma`` or ``gamma + kappa`` when the heterodyne channel is folded
into the unconditional evolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants
from scipy.optimize import minimize_scalar

from .errors import DegenerateSteadyStateError, NumericalError
from .fock import FockSpace, SystemParams, build_hamiltonian, field_expectations, make_ladder_operators

HERMITICITY_TOL = 1e-9
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8
STEADY_RESIDUAL_TOL = 1e-8
ZERO_EIGENVALUE_TOL = 1e-8


@dataclass(frozen=True)
class ThermalEnvironment:
    """Bosonic bath characterized by its mean occupation ``n_th``.

    ``omega_c`` (angular frequency, rad/s) and ``temperature`` (K) are kept
    for provenance when the occupation was derived from them.
    """

    n_th: float = 0.0
    omega_c: float | None = None
    temperature: float | None = None

    def __post_init__(self):
        if self.n_th < 0:
            raise ValueError("n_th must be non-negative")

    @classmethod
    def from_temperature(cls, omega_c: float, temperature: float) -> "ThermalEnvironment":
        """Bose-Einstein occupation ``1/(exp(hbar w / kB T) - 1)``; 0 at T=0."""
        if temperature < 0:
            raise ValueError("temperature must be non-negative")
        if temperature == 0:
            n_th = 0.0
        else:
            ratio = constants.hbar * omega_c / (constants.k * temperature)
            n_th = 1.0 / np.expm1(ratio)
        return cls(n_th=n_th, omega_c=omega_c, temperature=temperature)


ZERO_TEMPERATURE = ThermalEnvironment()


@dataclass(frozen=True)
class DensityMatrix:
    space: FockSpace
    matrix: np.ndarray

    def validate(self, hermiticity_tol=HERMITICITY_TOL, trace_tol=TRACE_TOL,
                 positivity_tol=POSITIVITY_TOL) -> "DensityMatrix":
        m = self.matrix
        herm = np.abs(m - m.conj().T).max()
        if herm >= hermiticity_tol:
            raise NumericalError(f"density matrix not Hermitian: max dev {herm:.3e}")
        tr = np.trace(m)
        if abs(tr - 1.0) >= trace_tol:
            raise NumericalError(f"density matrix trace {tr} deviates from 1")
        w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        if w.min() <= -positivity_tol:
            raise NumericalError(f"density matrix has negative eigenvalue {w.min():.3e}")
        return self

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.trace(op @ self.matrix))

    def field_expectations(self):
        """``(n_mean, x, p)`` with ``x = <a + a^dag>``, ``p = <-i(a - a^dag)>``."""
        return field_expectations(self.matrix)

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)


@dataclass(frozen=True)
class SuperOperator:
    """Dense matrix acting on column-stacked density matrices."""

    space: FockSpace
    matrix: np.ndarray

    def apply(self, rho: np.ndarray) -> np.ndarray:
        dim = self.space.dim
        return (self.matrix @ rho.ravel(order="F")).reshape((dim, dim), order="F")

    def trace_preservation_defect(self) -> float:
        """Norm of ``tr . L``; zero for any Lindblad generator."""
        dim = self.space.dim
        tr_row = np.eye(dim).ravel(order="F")
        return float(np.linalg.norm(tr_row @ self.matrix, ord=np.inf))


@dataclass(frozen=True)
class LiouvillianSpectrum:
    """Eigenvalues sorted by ascending ``|Re(lambda)|``; ``gap = |Re(lambda_1)|``."""

    eigenvalues: np.ndarray

    @property
    def gap(self) -> float:
        return float(abs(self.eigenvalues[1].real))

    def validate(self) -> "LiouvillianSpectrum":
        w = self.eigenvalues
        if w.real.max() > 1e-9:
            raise NumericalError(f"Liouvillian eigenvalue with positive real part: {w.real.max():.3e}")
        if abs(w[0]) >= ZERO_EIGENVALUE_TOL:
            raise NumericalError(f"no zero eigenvalue found; smallest is {w[0]}")
        return self


def vectorize(rho: np.ndarray) -> np.ndarray:
    return rho.ravel(order="F")


def unvectorize(v: np.ndarray, dim: int) -> np.ndarray:
    return v.reshape((dim, dim), order="F")


def _dissipator_matrix(op: np.ndarray) -> np.ndarray:
    dim = op.shape[0]
    eye = np.eye(dim)
    odo = op.conj().T @ op
    return (
        np.kron(op.conj(), op)
        - 0.5 * np.kron(eye, odo)
        - 0.5 * np.kron(odo.T, eye)
    )


def _commutator_matrix(h: np.ndarray) -> np.ndarray:
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def effective_gamma(params: SystemParams, include_measurement: bool) -> float:
    return params.gamma + params.kappa if include_measurement else params.gamma


def build_liouvillian(params: SystemParams, space: FockSpace,
                      env: ThermalEnvironment = ZERO_TEMPERATURE,
                      include_measurement: bool = False) -> SuperOperator:
    """Dense generator for the master equation at fixed detuning.

    With ``include_measurement`` the continuously monitored channel is folded
    into the single-photon loss (``gamma -> gamma + kappa``), which is the
    unconditional counterpart of the heterodyne unraveling.
    """
    a, a_dag, _ = make_ladder_operators(space)
    h = build_hamiltonian(params, space)
    mat = _commutator_matrix(h)
    g_eff = effective_gamma(params, include_measurement)
    if g_eff > 0:
        mat += g_eff * (1.0 + env.n_th) * _dissipator_matrix(a)
        if env.n_th > 0:
            mat += g_eff * env.n_th * _dissipator_matrix(a_dag)
    if params.eta > 0:
        mat += params.eta * _dissipator_matrix(a @ a)
    return SuperOperator(space=space, matrix=mat)


def detuning_generator_diagonal(space: FockSpace) -> np.ndarray:
    """Diagonal of the detuning part of the generator, ``+i (n_j - n_k)``.

    The full generator splits as ``L(delta) = L(0) + delta * diag(...)``,
    which makes detuning scans cheap.
    """
    ns = np.arange(space.dim, dtype=float)
    return (1j * (ns[:, None] - ns[None, :])).ravel(order="F")


def steady_state(liouvillian: SuperOperator,
                 residual_tol: float = STEADY_RESIDUAL_TOL) -> DensityMatrix:
    """Solve ``L rho = 0`` with unit trace by a direct bordered solve.

    The trace row is added to the first row of ``L``; for a generator with a
    unique null vector of unit trace this system is nonsingular.  The result
    is Hermitized, renormalized, and validated.  A degenerate zero eigenvalue
    is reported with both candidates.
    """
    dim = liouvillian.space.dim
    mat = liouvillian.matrix
    tr_row = np.eye(dim).ravel(order="F").astype(complex)
    scale = max(1.0, float(np.abs(mat).max()))
    bordered = mat.copy()
    bordered[0, :] += scale * tr_row
    rhs = np.zeros(dim * dim, dtype=complex)
    rhs[0] = scale
    try:
        v = np.linalg.solve(bordered, rhs)
    except np.linalg.LinAlgError:
        v, *_ = np.linalg.lstsq(np.vstack([mat, scale * tr_row]),
                                np.concatenate([np.zeros(dim * dim), [scale]]),
                                rcond=None)
    residual = float(np.linalg.norm(mat @ v))
    if residual >= residual_tol:
        eigs = np.linalg.eigvals(mat)
        order = np.argsort(np.abs(eigs.real))
        lam0, lam1 = eigs[order[0]], eigs[order[1]]
        if abs(lam1.real) < 10 * residual_tol:
            raise DegenerateSteadyStateError(lam0, lam1, 10 * residual_tol)
        raise NumericalError(
            f"steady-state residual {residual:.3e} exceeds {residual_tol:.1e}"
        )
    rho = unvectorize(v, dim)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    return DensityMatrix(space=liouvillian.space, matrix=rho).validate()


def spectrum(liouvillian: SuperOperator, count: int | None = None) -> LiouvillianSpectrum:
    """Full dense spectrum, sorted by ascending ``|Re(lambda)|``.

    ``count`` truncates the returned list; the sort (and hence the gap) is
    always computed from the complete eigenvalue set.
    """
    dim2 = liouvillian.matrix.shape[0]
    if count is not None and count > dim2:
        raise ValueError(f"count={count} exceeds superoperator dimension {dim2}")
    try:
        w = np.linalg.eigvals(liouvillian.matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Liouvillian eigensolver failed: {exc}") from exc
    order = np.argsort(np.abs(w.real), kind="stable")
    w = w[order]
    if count is not None:
        w = w[:count]
    return LiouvillianSpectrum(eigenvalues=w).validate()


@dataclass(frozen=True)
class SteadyScan:
    """Steady-state observables over a detuning grid."""

    deltas: np.ndarray
    n_mean: np.ndarray
    x: np.ndarray
    p: np.ndarray

    @property
    def phi(self) -> np.ndarray:
        """Field phase; NaN where the field amplitude vanishes."""
        amp = np.abs(self.x) + np.abs(self.p)
        phi = np.arctan2(self.p, self.x)
        return np.where(amp < 1e-6, np.nan, phi)


def steady_scan(params: SystemParams, deltas, space: FockSpace,
                env: ThermalEnvironment = ZERO_TEMPERATURE,
                include_measurement: bool = False) -> SteadyScan:
    """Steady-state ``<n>``, ``x``, ``p`` over a detuning grid.

    Reuses the detuning split of the generator so only one full build is
    needed for the whole grid.
    """
    deltas = np.asarray(deltas, dtype=float)
    base = build_liouvillian(params.with_delta(0.0), space, env, include_measurement)
    ldiag = detuning_generator_diagonal(space)
    n_mean = np.empty_like(deltas)
    x = np.empty_like(deltas)
    p = np.empty_like(deltas)
    for i, d in enumerate(deltas):
        mat = base.matrix + np.diag(d * ldiag)
        rho = steady_state(SuperOperator(space=space, matrix=mat))
        n_mean[i], x[i], p[i] = rho.field_expectations()
    return SteadyScan(deltas=deltas, n_mean=n_mean, x=x, p=p)


def gap_at(params: SystemParams, delta: float, space: FockSpace,
           env: ThermalEnvironment = ZERO_TEMPERATURE,
           include_measurement: bool = False) -> float:
    sup = build_liouvillian(params.with_delta(delta), space, env, include_measurement)
    return spectrum(sup).gap


def find_gap_minimum(params: SystemParams, space: FockSpace, bracket,
                     env: ThermalEnvironment = ZERO_TEMPERATURE,
                     xatol: float = 5e-3):
    """Minimize the spectral gap over detuning inside ``bracket``.

    Returns ``(delta_min, gap_min)``.  The gap is V-shaped around a
    first-order transition, so a bounded scalar minimizer is adequate.
    """
    res = minimize_scalar(
        lambda d: gap_at(params, float(d), space, env),
        bounds=tuple(bracket),
        method="bounded",
        options={"xatol": xatol},
    )
    return float(res.x), float(res.fun)
