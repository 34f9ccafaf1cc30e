"""Driven-dissipative Kerr resonator toolkit.

Steady states and spectra of the Lindblad generator, detuning sweeps with
hysteresis, heterodyne quantum trajectories, a phase-switch amplitude
transducer, and quantum Fisher information at finite temperature.
"""

from .errors import (
    CalibrationError,
    ConfigError,
    DegenerateSteadyStateError,
    ExtrapolationError,
    FitError,
    ModelViolationWarning,
    NoSwitchError,
    NumericalError,
    ProtocolDegradedError,
    SimulationError,
    TruncationWarning,
)
from .fock import (
    CoherentState,
    ConvergenceCheck,
    FockSpace,
    SystemParams,
    build_hamiltonian,
    check_dim_convergence,
    coherent_state,
    make_ladder_operators,
)
from .liouvillian import (
    DensityMatrix,
    LiouvillianSpectrum,
    SuperOperator,
    ThermalEnvironment,
    build_liouvillian,
    find_gap_minimum,
    spectrum,
    steady_scan,
    steady_state,
)
from .dynamics import (
    SweepRecord,
    SweepSchedule,
    SwitchPoint,
    extract_switch,
    fit_sweep_time_convergence,
    integrate_sweep,
)
from .trajectories import (
    NoiseStream,
    TrajectoryRecord,
    heterodyne_ensemble,
    integrate_heterodyne,
    wiener_selfcheck,
)
from .phase_analysis import (
    ArctanFit,
    HusimiGrid,
    SwitchPDF,
    fit_arctan,
    half_plane_operator,
    half_plane_probability,
    husimi_q,
    transition_pdf,
)
from .transducer import (
    CalibrationCurve,
    EstimateDistribution,
    ProtocolConfig,
    calibrate,
    estimate_f,
    kappa_gamma_scan,
    run_protocol,
)
from .qfi import (
    QfiResult,
    linear_oscillator_qfi,
    linear_steady_alpha,
    qfi_mixed,
    qfi_pure,
    temperature_scan,
)

__version__ = "0.1.0"
