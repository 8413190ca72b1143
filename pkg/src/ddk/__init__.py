"""Bayesian data-driven smoothing, prediction, and control for LTI systems
from noisy trajectory data."""

from .baselines import (
    PartitionedData,
    deepc_regularized,
    deepc_unregularized,
    predictor_lambda,
    predictor_regularized,
)
from .covariance import (
    PriorScale,
    autocorrelation,
    sigma_d,
    sigma_g_fast,
    sigma_g_general,
    sigma_z,
)
from .estimator import (
    EstimateReport,
    HyperEstimate,
    InfeasibleConstraintsError,
    Method,
    estimate_g_nonlinear,
    gaussian_map_pd,
    gaussian_map_singular,
    map_estimate,
    marginal_nll,
    one_iteration_estimate,
    pinv_init,
    run_algorithm1,
    sqp_estimate_g,
)
from .lti import (
    LtiSystem,
    dc_gain,
    h2_norm,
    lag,
    make_diffusion_system,
    normalize_h2,
    random_system,
    simulate,
)
from .numerics import (
    PsdDecomposition,
    SolverOptions,
    check_gradient,
    decompose_psd,
    minimize_smooth,
    solve_discrete_lyapunov,
    solve_eq_qp,
)
from .sigdata import (
    Construction,
    SignalMatrix,
    Trajectory,
    build_signal_matrix,
    check_identifiability,
    check_persistent_excitation,
)
from .tasks import (
    ControlObjective,
    TaskKind,
    TaskSpec,
    build_control,
    build_prediction,
    build_smoothing,
    control_cost,
)
from .uncertainty import (
    GAUSSIAN,
    EllipticalFamily,
    NoiseModel,
    log_density,
    sample,
    sample_stationary_process,
    student_t,
)

__version__ = "0.1.0"
