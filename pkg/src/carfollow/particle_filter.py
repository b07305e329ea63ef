"""Per-vehicle online estimation of (v_des, sigma_idm) by particle filtering.

Each vehicle carries a population of parameter hypotheses living on a fixed
discrete grid. For every recorded transition the filter proposes a next
position under randomly drawn hypotheses, weights each proposal by how close
it lands to the recorded next position, resamples with a low-variance
systematic scheme, and then perturbs the highest-likelihood survivors by one
grid cell to keep the population from collapsing onto a single cell.

Particles are stored as integer grid indices, so membership in the grid is
preserved exactly through resampling and dithering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, DegeneracyError, DomainError
from .models import EgoObservation, IdmParams, PRESETS, idm_acceleration_grid

__all__ = [
    "NOISE_MODELS",
    "PROPOSAL_MODES",
    "FilterConfig",
    "Particle",
    "ParticleSet",
    "StepObservation",
    "init_particles",
    "systematic_resample",
    "resample",
    "dither",
    "filter_step",
    "run_filter",
    "mean_particle",
]

NOISE_MODELS = ("accel", "position")
PROPOSAL_MODES = ("literal", "sweep")


def _grid_count(lo: float, hi: float, step: float, name: str) -> int:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise ConfigError(f"{name} range must be finite with lo <= hi, got ({lo!r}, {hi!r})")
    if not (step > 0.0) or not math.isfinite(step):
        raise ConfigError(f"{name} step must be strictly positive, got {step!r}")
    n_float = (hi - lo) / step
    n = round(n_float)
    if abs(n_float - n) > 1e-9:
        raise ConfigError(f"{name} step {step!r} must divide the range width {hi - lo!r}")
    return n + 1


def _offset_indices(offsets, step: float, name: str) -> np.ndarray:
    if len(offsets) == 0:
        raise ConfigError(f"{name} dither support must not be empty")
    idx = []
    for off in offsets:
        k = off / step
        if abs(k - round(k)) > 1e-9:
            raise ConfigError(
                f"{name} dither offset {off!r} is not an integer multiple of the grid step {step!r}"
            )
        idx.append(int(round(k)))
    return np.asarray(idx, dtype=np.int64)


class Particle(NamedTuple):
    """A single parameter hypothesis."""

    v_des: float
    sigma_idm: float


@dataclass(frozen=True)
class FilterConfig:
    """Tuning knobs of the per-vehicle parameter filter.

    ``noise_model`` selects how the acceleration variance maps to a
    next-position standard deviation used for both proposing and weighting:

    * ``"accel"`` (default): the acceleration noise is propagated through the
      0.5*a*dt^2 displacement term, giving std = 0.5*sqrt(sigma)*dt^2. The
      per-step signal-to-noise ratio for v_des is then independent of the
      sampling rate.
    * ``"position"``: the variance is applied directly at the position level,
      std = sqrt(sigma)*dt. Simpler, but desired-speed identifiability
      degrades linearly as dt shrinks, so high-rate data washes out v_des.

    Dither offsets must be integer multiples of the corresponding grid step so
    perturbed particles stay on the grid; results are clamped to the support
    box.
    """

    particle_count: int = 500
    v_des_range: tuple[float, float] = (10.0, 40.0)
    v_des_step: float = 0.5
    sigma_range: tuple[float, float] = (0.1, 2.0)
    sigma_step: float = 0.1
    dither_fraction: float = 0.2
    v_des_dither: tuple[float, ...] = (-0.5, 0.0, 0.5)
    sigma_dither: tuple[float, ...] = (-0.1, 0.0, 0.1)
    proposal_mode: str = "literal"
    noise_model: str = "accel"
    base_params: IdmParams = PRESETS["default"]
    accel_only_dynamics: bool = False

    def __post_init__(self):
        if self.particle_count < 1:
            raise ConfigError(f"particle_count must be >= 1, got {self.particle_count!r}")
        _grid_count(*self.v_des_range, self.v_des_step, "v_des")
        _grid_count(*self.sigma_range, self.sigma_step, "sigma")
        if self.v_des_range[0] <= 0.0:
            raise ConfigError("v_des grid must be strictly positive")
        if self.sigma_range[0] <= 0.0:
            raise ConfigError("sigma grid must be strictly positive (zero variance has no density)")
        if not 0.0 <= self.dither_fraction <= 1.0:
            raise ConfigError(f"dither_fraction must lie in [0, 1], got {self.dither_fraction!r}")
        _offset_indices(self.v_des_dither, self.v_des_step, "v_des")
        _offset_indices(self.sigma_dither, self.sigma_step, "sigma")
        if self.proposal_mode not in PROPOSAL_MODES:
            raise ConfigError(f"proposal_mode must be one of {PROPOSAL_MODES}, got {self.proposal_mode!r}")
        if self.noise_model not in NOISE_MODELS:
            raise ConfigError(f"noise_model must be one of {NOISE_MODELS}, got {self.noise_model!r}")

    @property
    def v_des_values(self) -> np.ndarray:
        n = _grid_count(*self.v_des_range, self.v_des_step, "v_des")
        return self.v_des_range[0] + self.v_des_step * np.arange(n)

    @property
    def sigma_values(self) -> np.ndarray:
        n = _grid_count(*self.sigma_range, self.sigma_step, "sigma")
        return self.sigma_range[0] + self.sigma_step * np.arange(n)

    @property
    def grid_size(self) -> int:
        return len(self.v_des_values) * len(self.sigma_values)

    def position_noise_std(self, sigma, dt: float):
        """Next-position standard deviation for variance ``sigma`` under the
        configured noise model."""
        sigma = np.asarray(sigma, dtype=float)
        if self.noise_model == "accel":
            out = 0.5 * np.sqrt(sigma) * dt * dt
        else:
            out = np.sqrt(sigma) * dt
        return float(out) if np.ndim(out) == 0 else out


@dataclass
class ParticleSet:
    """Weighted population of on-grid hypotheses for one vehicle."""

    cfg: FilterConfig
    iv: np.ndarray  # indices into cfg.v_des_values
    isig: np.ndarray  # indices into cfg.sigma_values
    weights: np.ndarray
    seed: object = None

    def __post_init__(self):
        if not (len(self.iv) == len(self.isig) == len(self.weights)):
            raise ValueError("iv, isig and weights must have equal length")

    @property
    def size(self) -> int:
        return len(self.iv)

    @property
    def v_des(self) -> np.ndarray:
        return self.cfg.v_des_values[self.iv]

    @property
    def sigma_idm(self) -> np.ndarray:
        return self.cfg.sigma_values[self.isig]

    def values(self) -> np.ndarray:
        """(I, 2) array of (v_des, sigma_idm) rows."""
        return np.column_stack([self.v_des, self.sigma_idm])


class StepObservation(NamedTuple):
    """One recorded transition: the ego view at t plus the t -> t+dt motion."""

    ego: EgoObservation
    x: float
    v: float
    x_next: float


def init_particles(cfg: FilterConfig, seed=None) -> ParticleSet:
    """Draw ``cfg.particle_count`` hypotheses uniformly (with replacement) from the grid."""
    rng = np.random.default_rng(seed)
    nv = len(cfg.v_des_values)
    ns = len(cfg.sigma_values)
    count = cfg.particle_count
    iv = rng.integers(0, nv, size=count)
    isig = rng.integers(0, ns, size=count)
    weights = np.full(count, 1.0 / count)
    return ParticleSet(cfg, iv, isig, weights, seed)


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    """Low-variance resampling: returns one source index per output slot.

    A single uniform offset is stratified across the cumulative weight
    profile, so a particle with normalized weight w receives floor(n*w) or
    ceil(n*w) copies.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D array")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise DegeneracyError(
            "weights must be finite and non-negative",
            weight_min=float(np.nanmin(w)),
            weight_max=float(np.nanmax(w)),
        )
    total = w.sum()
    if total <= 0.0:
        raise DegeneracyError("all resampling weights are zero", weight_min=0.0, weight_max=float(w.max()))
    n = w.size
    positions = (np.arange(n) + rng.uniform()) / n
    idx = np.searchsorted(np.cumsum(w) / total, positions, side="left")
    return np.minimum(idx, n - 1)


def resample(particles, weights, rng: np.random.Generator):
    """Resample rows of ``particles`` (any array-like, first axis = particle)."""
    particles = np.asarray(particles)
    idx = systematic_resample(weights, rng)
    return np.take(particles, idx, axis=0)


def _dither_selection(last_weights: np.ndarray, fraction: float) -> np.ndarray:
    """Slots to perturb: the ceil(fraction * I) highest weights, ties broken by slot index."""
    n = len(last_weights)
    m = int(math.ceil(fraction * n))
    if m <= 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((np.arange(n), -np.asarray(last_weights, dtype=float)))
    return order[:m]


def dither(particles: ParticleSet, cfg: FilterConfig, last_weights, rng: np.random.Generator) -> ParticleSet:
    """Perturb the highest-likelihood survivors by grid-preserving offsets.

    ``last_weights`` must align with ``particles``: entry i is the weight of
    the slot that produced survivor i in the preceding weighting step. Offsets
    are drawn independently per survivor and per dimension from the configured
    supports, then clamped to the support box.
    """
    last_weights = np.asarray(last_weights, dtype=float)
    if len(last_weights) != particles.size:
        raise ValueError("last_weights must align with the particle population")
    sel = _dither_selection(last_weights, cfg.dither_fraction)
    iv = particles.iv.copy()
    isig = particles.isig.copy()
    if sel.size:
        dv = rng.choice(_offset_indices(cfg.v_des_dither, cfg.v_des_step, "v_des"), size=sel.size)
        ds = rng.choice(_offset_indices(cfg.sigma_dither, cfg.sigma_step, "sigma"), size=sel.size)
        iv[sel] = np.clip(iv[sel] + dv, 0, len(cfg.v_des_values) - 1)
        isig[sel] = np.clip(isig[sel] + ds, 0, len(cfg.sigma_values) - 1)
    return ParticleSet(cfg, iv, isig, particles.weights.copy(), particles.seed)


def filter_step(
    particles: ParticleSet,
    ego: EgoObservation,
    x: float,
    v: float,
    x_next: float,
    dt: float,
    rng: np.random.Generator,
) -> ParticleSet:
    """One propose / weight / resample / dither cycle against a recorded transition.

    ``x`` and ``v`` are the vehicle's recorded position and speed at time t
    (``ego`` is its leader-relative view at the same instant), ``x_next`` the
    recorded position at t + dt. Returns a new equally-weighted population of
    the same size. The rng stream is consumed in a fixed order (proposal draw,
    position noise, resampling offset, dither offsets), so results are fully
    reproducible from the generator state.
    """
    cfg = particles.cfg
    if dt <= 0.0:
        raise DomainError(f"dt must be strictly positive, got {dt!r}")
    if not (math.isfinite(x) and math.isfinite(v) and math.isfinite(x_next)):
        raise DomainError("observed positions and speed must be finite")
    count = particles.size

    if cfg.proposal_mode == "literal":
        j = rng.integers(0, count, size=count)
    else:
        j = np.arange(count)
    iv = particles.iv[j]
    isig = particles.isig[j]

    # accelerations depend only on the v_des cell, noise scale only on the sigma cell
    a_by_cell = idm_acceleration_grid(ego, cfg.base_params, cfg.v_des_values)
    std_by_cell = cfg.position_noise_std(cfg.sigma_values, dt)
    a = a_by_cell[iv]
    std = std_by_cell[isig]

    disp = 0.5 * a * dt * dt
    if not cfg.accel_only_dynamics:
        disp = disp + v * dt
    mean = x + np.maximum(0.0, disp)
    proposed = mean + rng.standard_normal(count) * std

    z = (x_next - proposed) / std
    logw = -0.5 * z * z - np.log(std)
    peak = logw.max()
    if not np.isfinite(peak):
        raise DegeneracyError(
            "all particle weights vanished for this transition",
            observation=StepObservation(ego, x, v, x_next),
            weight_min=0.0,
            weight_max=0.0,
        )
    w = np.exp(logw - peak)
    w /= w.sum()

    idx = systematic_resample(w, rng)
    survivors = ParticleSet(cfg, iv[idx], isig[idx], np.full(count, 1.0 / count), particles.seed)
    return dither(survivors, cfg, w[idx], rng)


def _normalized_coords(cfg: FilterConfig, iv: np.ndarray, isig: np.ndarray):
    wv = cfg.v_des_range[1] - cfg.v_des_range[0]
    ws = cfg.sigma_range[1] - cfg.sigma_range[0]
    zv = (cfg.v_des_values[iv] - cfg.v_des_range[0]) / (wv if wv > 0.0 else 1.0)
    zs = (cfg.sigma_values[isig] - cfg.sigma_range[0]) / (ws if ws > 0.0 else 1.0)
    return zv, zs


def run_filter(
    observations: Iterable[StepObservation],
    dt: float,
    cfg: FilterConfig,
    seed=None,
) -> tuple[ParticleSet, np.ndarray]:
    """Run the filter over one vehicle's recorded transitions.

    ``observations`` is an iterable of :class:`StepObservation` (or plain
    4-tuples). Returns the final population together with the convergence
    trace: entry t is the RMS distance, in range-normalized parameter space,
    between iteration t's population (t = 0 is the initial draw) and the mean
    of the final population. Fully deterministic given ``seed``.
    """
    obs = [StepObservation(*o) for o in observations]
    if not obs:
        raise ValueError("at least one observed transition is required")
    root = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    init_seed, step_seed = root.spawn(2)
    particles = init_particles(cfg, init_seed)
    particles.seed = seed
    rng = np.random.default_rng(step_seed)

    snapshots = [(particles.iv.copy(), particles.isig.copy())]
    for o in obs:
        particles = filter_step(particles, o.ego, o.x, o.v, o.x_next, dt, rng)
        snapshots.append((particles.iv.copy(), particles.isig.copy()))

    zv_fin, zs_fin = _normalized_coords(cfg, snapshots[-1][0], snapshots[-1][1])
    center = (zv_fin.mean(), zs_fin.mean())
    trace = np.empty(len(snapshots))
    for t, (iv, isig) in enumerate(snapshots):
        zv, zs = _normalized_coords(cfg, iv, isig)
        trace[t] = math.sqrt(np.mean((zv - center[0]) ** 2 + (zs - center[1]) ** 2))
    return particles, trace


def mean_particle(particles: ParticleSet) -> Particle:
    """Unweighted arithmetic mean of the population (may fall off the grid)."""
    if particles.size == 0:
        raise ValueError("cannot average an empty particle set")
    return Particle(float(particles.v_des.mean()), float(particles.sigma_idm.mean()))
