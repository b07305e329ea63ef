"""Shared helpers for the test suite."""
import numpy as np

from carfollow.models import (
    EgoObservation,
    IdmParams,
    PRESETS,
    VehicleState,
    idm_acceleration,
    propagate,
    sample_acceleration,
)
from carfollow.particle_filter import StepObservation


def free_road_observations(v_des, sigma, steps, dt, seed, v0=None):
    """Transitions of one leaderless stochastic car-following driver."""
    base = PRESETS["default"]
    params = IdmParams(v_des, base.d_min, base.tau, base.a_max, base.b_pref)
    rng = np.random.default_rng(seed)
    x = 0.0
    v = max(0.0, v_des - 3.0) if v0 is None else v0
    out = []
    for _ in range(steps):
        ego = EgoObservation(v=v)
        a = sample_acceleration(idm_acceleration(ego, params), sigma, rng)
        nxt = propagate(VehicleState("ego", x, v, 5.0), a, dt)
        out.append(StepObservation(ego, x, v, nxt.position))
        x, v = nxt.position, nxt.velocity
    return out
