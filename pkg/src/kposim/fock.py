"""Truncated Fock basis: ladder operators, system Hamiltonian, coherent states.

Conventions used throughout the package:

* All energies and rates are expressed in units of the Kerr nonlinearity
  ``u``; time is measured in units of ``1/u``.  The stored ``u`` field (in Hz)
  is only needed when converting to laboratory units.
* Operators are dense ``dim x dim`` complex arrays on the Fock states
  ``|0>, ..., |dim-1>``.
* The rotating-frame Hamiltonian is
  ``H = -delta*n + (u/2) n(n-1) - (f*a + (g*/2) a^2 + h.c.)``
  with two-photon drive ``g = g_abs * exp(i*theta)`` and real ``f >= 0``.
* Quadratures: ``x = <a + a^dag>``, ``p = <-i (a - a^dag)>``, and the field
  phase is ``atan2(p, x)``.  Note that phase-space grids (see
  ``phase_analysis``) label coherent states by ``alpha = x + i p`` which
  differs from these quadratures by a factor of two; the phase angle is the
  same in both conventions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .errors import TruncationWarning

COHERENT_CONVERGENCE_TOL = 1e-8


@dataclass(frozen=True)
class FockSpace:
    """Truncated Fock space keeping the states ``|0>`` ... ``|dim-1>``."""

    dim: int

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"Fock space needs dim >= 2, got {self.dim}")

    def enlarged(self, extra: int) -> "FockSpace":
        return FockSpace(self.dim + extra)


@dataclass(frozen=True)
class SystemParams:
    """Physical knobs of the driven-dissipative Kerr resonator, in units of u.

    ``u`` is stored explicitly (Hz) so results can be mapped back to
    laboratory units; it does not enter any formula in these units except
    through thermal occupation (see ``qfi.thermal_occupation``).
    """

    delta: float = 0.0
    u: float = 1.0
    f: float = 0.0
    g_abs: float = 0.0
    theta: float = -math.pi / 2
    gamma: float = 0.0
    eta: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        for name in ("f", "g_abs", "gamma", "eta", "kappa"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.u < 0:
            raise ValueError("u must be non-negative (0 only for the linear model)")
        # normalize theta into (-pi, pi]
        th = math.remainder(self.theta, 2 * math.pi)
        if th <= -math.pi:
            th += 2 * math.pi
        object.__setattr__(self, "theta", th)

    @property
    def g(self) -> complex:
        """Two-photon drive amplitude ``g_abs * exp(i*theta)``."""
        return self.g_abs * np.exp(1j * self.theta)

    def with_f(self, f: float) -> "SystemParams":
        return replace(self, f=f)

    def with_delta(self, delta: float) -> "SystemParams":
        return replace(self, delta=delta)


def make_ladder_operators(space: FockSpace):
    """Return ``(a, a_dag, n)`` as dense complex matrices.

    ``<m|a|k> = sqrt(k) delta_{m,k-1}``; ``n = a_dag @ a`` is diagonal with
    entries ``0 .. dim-1``.
    """
    dim = space.dim
    a = np.zeros((dim, dim), dtype=complex)
    ks = np.arange(1, dim)
    a[ks - 1, ks] = np.sqrt(ks)
    a_dag = a.conj().T
    n = np.diag(np.arange(dim, dtype=float)).astype(complex)
    return a, a_dag, n


def build_hamiltonian(params: SystemParams, space: FockSpace) -> np.ndarray:
    """Assemble the rotating-frame Hamiltonian as a dense Hermitian matrix."""
    a, a_dag, n = make_ladder_operators(space)
    eye = np.eye(space.dim)
    g = params.g
    h = -params.delta * n + 0.5 * params.u * n @ (n - eye)
    h -= (
        params.f * (a + a_dag)
        + 0.5 * np.conj(g) * (a @ a)
        + 0.5 * g * (a_dag @ a_dag)
    )
    return h


@dataclass(frozen=True)
class CoherentState:
    """Truncated coherent state, renormalized to unit norm.

    ``truncation_error`` is the probability weight lost to the discarded Fock
    states before renormalization; states with error below
    ``COHERENT_CONVERGENCE_TOL`` are considered converged.
    """

    alpha: complex
    space: FockSpace
    amplitudes: np.ndarray = field(repr=False)
    truncation_error: float = 0.0

    @property
    def converged(self) -> bool:
        return self.truncation_error < COHERENT_CONVERGENCE_TOL


def coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    """Unnormalized truncated coherent amplitudes ``e^{-|a|^2/2} a^k/sqrt(k!)``.

    Kept separate from :func:`coherent_state` because phase-space sampling
    must not renormalize (a renormalized vector would overweight states whose
    support leaks past the truncation).
    """
    k = np.arange(dim)
    log_mod = -0.5 * abs(alpha) ** 2 - 0.5 * gammaln(k + 1.0)
    if alpha == 0:
        amps = np.zeros(dim, dtype=complex)
        amps[0] = 1.0
        return amps
    r = abs(alpha)
    phase = alpha / r
    return np.exp(log_mod + k * math.log(r)) * phase**k


def coherent_state(alpha: complex, space: FockSpace) -> CoherentState:
    """Truncated, renormalized coherent state with reported truncation error."""
    amps = coherent_amplitudes(alpha, space.dim)
    kept = float(np.sum(np.abs(amps) ** 2))
    err = max(0.0, 1.0 - kept)
    if err >= COHERENT_CONVERGENCE_TOL:
        warnings.warn(
            f"coherent state |alpha|^2={abs(alpha)**2:.3g} loses {err:.3g} "
            f"probability at dim={space.dim}",
            TruncationWarning,
            stacklevel=2,
        )
    return CoherentState(
        alpha=complex(alpha),
        space=space,
        amplitudes=amps / math.sqrt(kept),
        truncation_error=err,
    )


def field_expectations(rho: np.ndarray):
    """Return ``(n_mean, x, p)`` for a density matrix without full matmuls."""
    dim = rho.shape[0]
    ks = np.arange(1, dim)
    a_mean = np.sum(np.sqrt(ks) * rho[ks, ks - 1])
    n_mean = float(np.sum(np.arange(dim) * rho.diagonal().real))
    return n_mean, 2.0 * a_mean.real, 2.0 * a_mean.imag


@dataclass(frozen=True)
class ConvergenceCheck:
    """Result of comparing a scalar observable at ``dim`` and ``dim + ddim``."""

    observable: str
    dim: int
    dim_refined: int
    value: float
    value_refined: float
    rtol: float

    @property
    def rel_change(self) -> float:
        scale = max(abs(self.value), abs(self.value_refined), 1e-300)
        return abs(self.value - self.value_refined) / scale

    @property
    def passed(self) -> bool:
        return self.rel_change < self.rtol


def check_dim_convergence(make_value, space: FockSpace, ddim: int = 5,
                          rtol: float = 1e-3, name: str = "observable") -> ConvergenceCheck:
    """Evaluate ``make_value(space)`` at ``dim`` and ``dim + ddim``.

    ``make_value`` must be a pure function of the Fock space; the check
    passes when the two values agree to ``rtol`` relative.
    """
    v0 = float(make_value(space))
    v1 = float(make_value(space.enlarged(ddim)))
    return ConvergenceCheck(
        observable=name,
        dim=space.dim,
        dim_refined=space.dim + ddim,
        value=v0,
        value_refined=v1,
        rtol=rtol,
    )
