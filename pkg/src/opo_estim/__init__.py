"""Joint estimation of the quadratures and a fluctuating pump of an OPO."""

from .config import ExperimentConfig, SweepSpec, load_config
from .errors import (
    ConfigurationError,
    ContractViolation,
    InsufficientDataError,
    NumericalError,
    UndefinedMetricError,
)
from .filters import (
    FilterOutput,
    GaussianBelief,
    JointBelief,
    JointModel,
    ParamBelief,
    build_joint_model,
    dual_kf_run,
    dual_kf_step,
    joint_ekf_run,
    joint_ekf_step,
    kalman_bucy_step,
    kf_baseline_run,
    steady_state_riccati,
)
from .harness import check_invariants, run_case_study, run_single_trial, run_sweep
from .metrics import RpiStat, RpiSummary, mean_sem, rpi
from .model import (
    PhysicalParams,
    StateSpaceModel,
    build_drift,
    build_input_matrix,
    build_measurement_complete,
    build_measurement_single,
    build_model,
    check_fluctuation_dissipation,
    check_fluctuation_observation,
    check_uncertainty,
    derive_noise_correlations,
)
from .sde import (
    PumpProcess,
    SimGrid,
    Trajectory,
    ground_truth_filter,
    simulate_latent,
    simulate_pump,
    write_trajectory_csv,
)

__version__ = "0.1.0"
