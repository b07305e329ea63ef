"""Car-following driver models, online parameter estimation, and benchmarks.

The package covers the full loop: normalize or synthesize trajectory data,
estimate per-driver parameters (desired speed and acceleration-noise
variance) from position traces with a grid-based particle filter,
forward-simulate traffic scenes under competing driver models, and score the
predictions against recorded ground truth.
"""

__version__ = "0.1.0"

from .errors import (
    CarfollowError,
    ConfigError,
    DegeneracyError,
    DomainError,
    TraceError,
)
from .models import (
    CONST_ACCEL_DEFAULT,
    PRESETS,
    ConstantAcceleration,
    ConstantVelocity,
    DeterministicIdm,
    DriverModel,
    EgoObservation,
    IdmParams,
    StochasticIdm,
    StochasticParams,
    VehicleState,
    desired_gap,
    idm_acceleration,
    position_likelihood,
    preset,
    propagate,
    sample_acceleration,
)
from .particle_filter import (
    FilterConfig,
    Particle,
    ParticleSet,
    StepObservation,
    dither,
    filter_step,
    init_particles,
    mean_particle,
    resample,
    run_filter,
    systematic_resample,
)
from .sim import (
    GAP_EPS,
    RolloutConfig,
    Scene,
    TrajectorySet,
    VehicleSeries,
    ego_observation,
    leader_of,
    rollout,
)
from .data import (
    CANONICAL_COLUMNS,
    CanonicalTrace,
    SynthSpec,
    adapt_highd,
    adapt_ngsim,
    extract_observations,
    generate_synthetic,
    load_canonical,
    load_scenarios,
    read_canonical,
    write_canonical,
)
from .metrics import (
    HARD_BRAKE_THRESHOLD,
    AggregateScore,
    EventCounts,
    RmseSeries,
    ScenarioScore,
    aggregate,
    count_events,
    rmse_series,
)
