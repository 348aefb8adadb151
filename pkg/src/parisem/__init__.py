"""Particle-based online EM for state-space models.

Estimates static parameters from a single pass over an observation
stream by combining a bootstrap particle filter with backward-sampled
smoothing of additive sufficient statistics (linear expected cost per
step), alongside the exact quadratic forward smoother as a baseline and
closed-form linear-Gaussian references for validation.
"""

__version__ = "0.1.0"

from .errors import (
    BackwardDegeneracyError,
    BoundViolationError,
    ConfigError,
    DegeneracyError,
    DegenerateStatisticError,
    InstanceTooLargeError,
    ParameterError,
    ScheduleError,
)
from .kalman import (
    KalmanState,
    SmoothedState,
    kalman_filter,
    lg_batch_em_step,
    lg_exact_smoothed_stats,
    lg_loglik,
    rts_smoother,
)
from .models import (
    LGParams,
    LinearGaussianModel,
    MODELS,
    StochasticVolatilityModel,
    SVParams,
    get_model,
    lg_simulate,
    simulate,
    sv_simulate,
)
from .online_em import (
    OnlineEMState,
    StepSizeSchedule,
    TraceRecord,
    init_online_em,
    load_checkpoint,
    online_em_step,
    run_ffbsm_online_em,
    run_online_em,
    save_checkpoint,
)
from .particle import (
    ResamplingTable,
    WeightedParticleSet,
    effective_sample_size,
    init_filter,
    multinomial_draw,
    pf_step,
    self_normalized_estimate,
)
from .smoother import (
    AuxStatMatrix,
    BackwardSampleConfig,
    BackwardSampleDiagnostics,
    backward_indices_ar,
    backward_indices_direct,
    draw_backward_indices,
    exact_path_space_oracle,
    ffbsm_update,
    online_stat_update,
    paris_update,
    smoothed_estimate,
    zero_aux,
)
from .ssm import StateSpaceModel, ar1_gaussian_m_step
