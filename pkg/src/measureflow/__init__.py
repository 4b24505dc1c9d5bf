"""Momentum-accelerated optimization flows over probability measures.

Particle discretizations of gradient, heavy-ball, and variationally
accelerated flows on the 2-Wasserstein space, with an adaptive
Dormand-Prince integrator, exact-transport Lyapunov diagnostics, and an
experiment/CLI layer.
"""

from .ensemble import (
    EmpiricalMeasure,
    PhaseEnsemble,
    init_gaussian,
    kinetic_energy,
    x_marginal,
)
from .errors import InvalidArgument, NonFiniteDrift, ScaleOverflow, ScheduleDomainError
from .functionals import (
    BlobKL,
    LogSumExpPotential,
    ObjectiveFunctional,
    QuadraticPotential,
    TwoLayerNetLoss,
    make_spd_matrix,
)
from .schedules import (
    Schedule,
    ScheduleSample,
    check_optimal_scaling,
    exponential_schedule,
    mirror_schedule,
    nesterov_schedule,
    power_dilation,
    time_dilate,
)
from .flows import (
    DriftField,
    bregman_drift,
    heavy_ball_drift,
    kalman_drift,
    stein_drift,
    vaf_drift,
    wgf_drift,
)
from .integrator import IntegratorConfig, RunRecord, integrate_flat
from .transport import (
    CouplingPlan,
    LyapunovSample,
    lyapunov_hb_convex,
    lyapunov_hb_energy,
    lyapunov_hb_strong,
    lyapunov_vaf,
    w2_squared,
    w2_squared_to_point,
)
from .experiments import (
    ExperimentSpec,
    GapTrace,
    estimate_E_star,
    generate_problem,
    run_comparison,
    sweep_steps_vs_tolerance,
)

__version__ = "0.1.0"
