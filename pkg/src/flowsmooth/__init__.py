"""Training-free trajectory smoothing for flow-matching ODE samplers."""

from .core import (
    CallCounter,
    DomainError,
    InvalidArgument,
    NumericFailure,
    SamplerConfig,
    StepRecord,
    TimeGrid,
    Trajectory,
    VelocityFieldSpec,
    as_state,
    evaluate_field,
    make_time_grid,
)
from .diagnostics import (
    endpoint_error,
    ensemble_moments,
    oscillation_energy,
    summarize,
    verify_call_budget,
)
from .fields import (
    CustomField,
    GaussianRfField,
    LinearMatrixField,
    StiffTrackingField,
    exact_endpoint,
    reference_endpoint,
    rotation_matrix,
)
from .samplers import run_sampler
from .schedules import RECTIFIED_FLOW, SnrSchedule, log_snr, lookback_decay

__version__ = "0.1.0"
