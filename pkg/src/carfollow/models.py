"""Car-following driver models and single-step vehicle kinematics.

Implements the Intelligent Driver Model (IDM, Treiber et al. 2000): the ego
acceleration balances reaching a desired free-flow speed against keeping a
safe dynamic gap to the leader. The stochastic variant perturbs the
deterministic acceleration with zero-mean Gaussian noise whose variance is a
per-driver parameter. The module also provides the one-step kinematic update
shared by simulation and estimation, and the Gaussian next-position density
used to weight parameter hypotheses against observed positions.

All public operations are pure functions over small immutable dataclasses;
anything stateful (random draws) takes an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "IdmParams",
    "StochasticParams",
    "VehicleState",
    "EgoObservation",
    "DriverModel",
    "DeterministicIdm",
    "StochasticIdm",
    "ConstantVelocity",
    "ConstantAcceleration",
    "PRESETS",
    "CONST_ACCEL_DEFAULT",
    "preset",
    "idm_params_from_config",
    "desired_gap",
    "idm_acceleration",
    "idm_acceleration_grid",
    "sample_acceleration",
    "propagate",
    "position_mean",
    "position_likelihood",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class IdmParams:
    """Parameters of the deterministic car-following law.

    Attributes:
        v_des: desired free-flow speed [m/s].
        d_min: minimum gap kept at standstill [m].
        tau: desired time headway [s].
        a_max: maximum acceleration [m/s^2].
        b_pref: preferred (comfortable) braking deceleration, positive [m/s^2].
    """

    v_des: float
    d_min: float
    tau: float
    a_max: float
    b_pref: float

    def __post_init__(self):
        for name in ("v_des", "d_min", "tau", "a_max", "b_pref"):
            value = getattr(self, name)
            _require_finite(name, value)
            if value <= 0.0:
                raise DomainError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class StochasticParams:
    """Deterministic parameters plus the variance of the acceleration noise.

    ``sigma_idm`` is a variance in (m/s^2)^2, not a standard deviation; zero
    degenerates to the deterministic model.
    """

    idm: IdmParams
    sigma_idm: float

    def __post_init__(self):
        _require_finite("sigma_idm", self.sigma_idm)
        if self.sigma_idm < 0.0:
            raise DomainError(f"sigma_idm must be non-negative, got {self.sigma_idm!r}")


@dataclass(frozen=True)
class VehicleState:
    """Kinematic state of one vehicle; ``position`` is the front bumper [m]."""

    id: str
    position: float
    velocity: float
    length: float
    lane: object = 0

    def __post_init__(self):
        _require_finite("position", self.position)
        _require_finite("velocity", self.velocity)
        _require_finite("length", self.length)
        if self.velocity < 0.0:
            raise DomainError(f"velocity must be non-negative, got {self.velocity!r}")
        if self.length <= 0.0:
            raise DomainError(f"length must be strictly positive, got {self.length!r}")


@dataclass(frozen=True)
class EgoObservation:
    """What a driver model sees at one instant.

    Attributes:
        v: own speed [m/s], non-negative.
        r: approach rate, leader speed minus ego speed [m/s] (negative when
            closing in). Ignored when ``has_leader`` is false.
        d: distance headway, ego front bumper to leader rear bumper [m],
            strictly positive. Ignored when ``has_leader`` is false.
        has_leader: whether a vehicle ahead is being followed.
    """

    v: float
    r: float = 0.0
    d: float = math.inf
    has_leader: bool = False

    def __post_init__(self):
        _require_finite("v", self.v)
        if self.v < 0.0:
            raise DomainError(f"v must be non-negative, got {self.v!r}")
        if self.has_leader:
            _require_finite("r", self.r)
            if not (self.d > 0.0) or math.isinf(self.d):
                raise DomainError(
                    f"distance headway d must be positive and finite, got {self.d!r}"
                )


PRESETS = {
    # widely used textbook parameterization
    "default": IdmParams(v_des=30.0, d_min=2.0, tau=1.0, a_max=3.0, b_pref=2.0),
    # nonlinear least-squares fit to highway trajectory data
    "nonlinear_fit": IdmParams(v_des=17.837, d_min=5.249, tau=0.918, a_max=0.758, b_pref=3.811),
}

CONST_ACCEL_DEFAULT = 1.0  # m/s^2, constant-acceleration baseline


def preset(name: str, **overrides) -> IdmParams:
    """Look up a named parameter preset, optionally overriding single fields."""
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}"
        ) from None
    return replace(base, **overrides) if overrides else base


def idm_params_from_config(cfg: dict) -> IdmParams:
    """Build IdmParams from a mapping: optional ``preset`` name plus overrides.

    Example: ``{"preset": "default", "v_des": 25.0}``.
    """
    cfg = dict(cfg)
    name = cfg.pop("preset", "default")
    allowed = {"v_des", "d_min", "tau", "a_max", "b_pref"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown IDM parameter keys {sorted(unknown)}; allowed: {sorted(allowed)}")
    return preset(name, **{k: float(v) for k, v in cfg.items()})


def desired_gap(v: float, r: float, p: IdmParams) -> float:
    """Dynamic target separation for speed ``v`` and approach rate ``r``.

    Sum of the standstill gap, the headway term tau*v, and the approach term
    -v*r / (2*sqrt(a_max*b_pref)); clamped below at d_min so a rapidly
    receding leader cannot drive the target gap under the standstill minimum.
    """
    _require_finite("v", v)
    _require_finite("r", r)
    if v < 0.0:
        raise DomainError(f"v must be non-negative, got {v!r}")
    raw = p.d_min + p.tau * v - v * r / (2.0 * math.sqrt(p.a_max * p.b_pref))
    return max(p.d_min, raw)


def _interaction_term(ego: EgoObservation, p: IdmParams) -> float:
    if not ego.has_leader:
        return 0.0
    ratio = desired_gap(ego.v, ego.r, p) / ego.d
    return ratio * ratio


def idm_acceleration(ego: EgoObservation, p: IdmParams) -> float:
    """Deterministic IDM acceleration a_max * (1 - (v/v_des)^4 - (d_des/d)^2)."""
    if ego.has_leader and ego.d <= 0.0:
        raise DomainError(f"distance headway must be positive, got {ego.d!r}")
    free = (ego.v / p.v_des) ** 4
    a = p.a_max * (1.0 - free - _interaction_term(ego, p))
    if not math.isfinite(a):
        raise DomainError(
            f"acceleration is not finite for v={ego.v!r}, r={ego.r!r}, d={ego.d!r}"
        )
    return a


def idm_acceleration_grid(ego: EgoObservation, p: IdmParams, v_des: np.ndarray) -> np.ndarray:
    """IDM acceleration evaluated for many candidate desired speeds at once.

    The interaction term does not involve v_des, so it is computed once;
    ``p.v_des`` is ignored in favor of the candidates.
    """
    if ego.has_leader and ego.d <= 0.0:
        raise DomainError(f"distance headway must be positive, got {ego.d!r}")
    v_des = np.asarray(v_des, dtype=float)
    free = (ego.v / v_des) ** 4
    return p.a_max * (1.0 - free - _interaction_term(ego, p))


def sample_acceleration(a_idm: float, sigma_idm: float, rng: np.random.Generator) -> float:
    """Draw from N(a_idm, sigma_idm); ``sigma_idm`` is a variance.

    With sigma_idm == 0 the draw is skipped and ``a_idm`` is returned exactly
    (the rng stream is not advanced).
    """
    _require_finite("a_idm", a_idm)
    _require_finite("sigma_idm", sigma_idm)
    if sigma_idm < 0.0:
        raise DomainError(f"sigma_idm must be non-negative, got {sigma_idm!r}")
    if sigma_idm == 0.0:
        return a_idm
    return a_idm + math.sqrt(sigma_idm) * rng.standard_normal()


def _displacement(v: float, a: float, dt: float, accel_only: bool) -> float:
    d = 0.5 * a * dt * dt if accel_only else v * dt + 0.5 * a * dt * dt
    return d if d > 0.0 else 0.0


def propagate(state: VehicleState, a: float, dt: float, accel_only: bool = False) -> VehicleState:
    """Advance one vehicle state by ``dt`` under a constant commanded acceleration.

    Velocity is clamped at zero (braking cannot reverse the vehicle) and the
    position increment is clamped at zero, so positions never decrease. With
    ``accel_only`` the velocity carry v*dt is dropped from the position
    increment, leaving only the 0.5*a*dt^2 contribution.
    """
    _require_finite("a", a)
    _require_finite("dt", dt)
    if dt <= 0.0:
        raise DomainError(f"dt must be strictly positive, got {dt!r}")
    v_new = max(0.0, state.velocity + a * dt)
    x_new = state.position + _displacement(state.velocity, a, dt, accel_only)
    return replace(state, position=x_new, velocity=v_new)


def position_mean(x, v, a, dt: float, accel_only: bool = False):
    """Deterministic next position under the same clamped kinematics as propagate.

    Accepts scalars or arrays for ``a`` (the filter evaluates one mean per
    parameter hypothesis).
    """
    if dt <= 0.0:
        raise DomainError(f"dt must be strictly positive, got {dt!r}")
    disp = 0.5 * np.asarray(a, dtype=float) * dt * dt
    if not accel_only:
        disp = disp + v * dt
    out = x + np.maximum(0.0, disp)
    return float(out) if np.ndim(out) == 0 else out


def position_likelihood(x_true: float, x_pred_mean: float, sigma_idm: float, dt: float) -> float:
    """Gaussian density of the true next position given a predicted mean.

    The density is N(x_pred_mean, sigma_idm * dt^2) evaluated at ``x_true``:
    the acceleration variance scaled into position units by dt^2.
    """
    _require_finite("x_true", x_true)
    _require_finite("x_pred_mean", x_pred_mean)
    if sigma_idm <= 0.0:
        raise DomainError(
            f"sigma_idm must be strictly positive for a proper density, got {sigma_idm!r}"
        )
    if dt <= 0.0:
        raise DomainError(f"dt must be strictly positive, got {dt!r}")
    std = math.sqrt(sigma_idm) * dt
    z = (x_true - x_pred_mean) / std
    return _INV_SQRT_2PI / std * math.exp(-0.5 * z * z)


class DriverModel(abc.ABC):
    """Maps an ego observation to a commanded acceleration."""

    @abc.abstractmethod
    def act(self, ego: EgoObservation, rng: np.random.Generator | None = None) -> float:
        """Return the commanded acceleration [m/s^2] for this instant."""


class DeterministicIdm(DriverModel):
    """Noise-free IDM follower."""

    def __init__(self, params: IdmParams):
        self.params = params

    def act(self, ego, rng=None):
        return idm_acceleration(ego, self.params)


class StochasticIdm(DriverModel):
    """IDM follower with Gaussian acceleration noise of variance sigma_idm."""

    def __init__(self, params: StochasticParams):
        self.params = params

    def act(self, ego, rng=None):
        a = idm_acceleration(ego, self.params.idm)
        if self.params.sigma_idm == 0.0:
            return a
        if rng is None:
            raise DomainError("StochasticIdm.act needs an rng when sigma_idm > 0")
        return sample_acceleration(a, self.params.sigma_idm, rng)

    def mean_model(self) -> DeterministicIdm:
        """The noise-free counterpart (same IDM parameters, noise dropped)."""
        return DeterministicIdm(self.params.idm)


class ConstantVelocity(DriverModel):
    """Holds current speed forever."""

    def act(self, ego, rng=None):
        return 0.0


class ConstantAcceleration(DriverModel):
    """Applies a fixed acceleration regardless of the observation."""

    def __init__(self, accel: float = CONST_ACCEL_DEFAULT):
        _require_finite("accel", accel)
        self.accel = accel

    def act(self, ego, rng=None):
        return self.accel
