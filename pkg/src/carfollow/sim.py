"""Multi-vehicle forward rollout under per-vehicle driver models.

A rollout starts from a scene snapshot and advances all vehicles with a
synchronous update: every commanded acceleration for step k is computed from
the frozen state at step k before any vehicle moves. Target vehicles are
driven by caller-supplied driver models; the remaining vehicles either replay
their recorded trajectories or follow the deterministic car-following law
with a fixed preset.

Lanes are fixed for the whole horizon (no lane changes); the leader of a
vehicle is the nearest same-lane vehicle strictly ahead by current position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, DomainError, TraceError
from .models import (
    DeterministicIdm,
    DriverModel,
    EgoObservation,
    IdmParams,
    PRESETS,
    StochasticIdm,
    VehicleState,
    propagate,
)
from .seeding import derive_rng

__all__ = [
    "GAP_EPS",
    "NONTARGET_MODES",
    "Scene",
    "VehicleSeries",
    "TrajectorySet",
    "RolloutConfig",
    "leader_of",
    "ego_observation",
    "rollout",
]

# floor applied to observed gaps once vehicles are in contact, so the
# car-following law stays defined after a collision under dumb baselines
GAP_EPS = 1e-3

NONTARGET_MODES = ("replay", "idm")


@dataclass(frozen=True)
class Scene:
    """Snapshot of all vehicles at one instant.

    Validates that ids are unique and that same-lane vehicles keep strictly
    positive bumper-to-bumper gaps (scenes describe initial conditions, which
    must be collision-free; rollouts may later produce overlaps and those are
    counted by the metrics instead of rejected).
    """

    timestamp: float
    vehicles: tuple[VehicleState, ...]

    def __post_init__(self):
        ids = [veh.id for veh in self.vehicles]
        if len(set(ids)) != len(ids):
            raise DomainError("vehicle ids in a scene must be unique")
        by_id = {veh.id: veh for veh in self.vehicles}
        lane_order: dict = {}
        for veh in sorted(self.vehicles, key=lambda s: (s.position, str(s.id))):
            lane_order.setdefault(veh.lane, []).append(veh.id)
        for lane, order in lane_order.items():
            for behind_id, ahead_id in zip(order, order[1:]):
                behind, ahead = by_id[behind_id], by_id[ahead_id]
                gap = ahead.position - ahead.length - behind.position
                if gap <= 0.0:
                    raise DomainError(
                        f"vehicles {behind_id!r} and {ahead_id!r} overlap in lane {lane!r} "
                        f"(gap {gap:.3f} m)"
                    )
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_lane_order", lane_order)

    def ids(self) -> list:
        return [veh.id for veh in self.vehicles]

    def vehicle(self, vehicle_id) -> VehicleState:
        try:
            return self._by_id[vehicle_id]
        except KeyError:
            raise KeyError(f"unknown vehicle id {vehicle_id!r}") from None


def leader_of(scene: Scene, vehicle_id):
    """Nearest same-lane vehicle strictly ahead.

    Returns ``(leader_id, gap, r)`` with the bumper-to-bumper gap and the
    approach rate r = v_leader - v_ego, or ``(None, inf, 0.0)`` when nothing
    is ahead.
    """
    ego = scene.vehicle(vehicle_id)
    order = scene._lane_order[ego.lane]
    rank = order.index(vehicle_id)
    if rank + 1 >= len(order):
        return None, math.inf, 0.0
    lead = scene.vehicle(order[rank + 1])
    gap = lead.position - lead.length - ego.position
    return lead.id, gap, lead.velocity - ego.velocity


def ego_observation(scene: Scene, vehicle_id) -> EgoObservation:
    """Ego view of ``vehicle_id`` within ``scene`` (gap floored at GAP_EPS)."""
    lead_id, gap, r = leader_of(scene, vehicle_id)
    v = scene.vehicle(vehicle_id).velocity
    if lead_id is None:
        return EgoObservation(v=v)
    return EgoObservation(v=v, r=r, d=max(gap, GAP_EPS), has_leader=True)


@dataclass
class VehicleSeries:
    """Time series for one vehicle on the owning set's time base.

    ``acceleration[k]`` is the value applied over [t_k, t_k + dt); the final
    sample is NaN. Samples may be NaN outside the vehicle's observed window.
    """

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        if not (len(self.position) == len(self.velocity) == len(self.acceleration)):
            raise ValueError("series arrays must share a length")

    def __len__(self):
        return len(self.position)

    def finite_window(self) -> tuple[int, int]:
        """(first, last) sample indices with finite position; (-1, -1) if none."""
        finite = np.flatnonzero(np.isfinite(self.position))
        if finite.size == 0:
            return -1, -1
        return int(finite[0]), int(finite[-1])


@dataclass
class TrajectorySet:
    """Per-vehicle series sharing one uniform time base (start t0, step dt)."""

    dt: float
    t0: float = 0.0
    series: dict = field(default_factory=dict)
    truncated: frozenset = frozenset()

    def ids(self) -> list:
        return list(self.series)

    @property
    def length(self) -> int:
        return max((len(s) for s in self.series.values()), default=0)

    def times(self, vehicle_id=None) -> np.ndarray:
        n = len(self.series[vehicle_id]) if vehicle_id is not None else self.length
        return self.t0 + self.dt * np.arange(n)

    def window(self, start: int, count: int) -> "TrajectorySet":
        """Sub-range of ``count`` samples per vehicle beginning at index ``start``."""
        if start < 0 or count < 1:
            raise ValueError("window start must be >= 0 and count >= 1")
        out = {}
        for vid, s in self.series.items():
            out[vid] = VehicleSeries(
                s.position[start : start + count].copy(),
                s.velocity[start : start + count].copy(),
                s.acceleration[start : start + count].copy(),
            )
        return TrajectorySet(self.dt, self.t0 + start * self.dt, out, self.truncated)


@dataclass(frozen=True)
class RolloutConfig:
    """Configuration of one forward rollout.

    ``target_models`` maps vehicle ids to driver models; every other vehicle
    in the scene follows ``nontarget_mode`` ("replay" from recorded data, or
    "idm" under ``nontarget_params``). ``mean_only`` swaps stochastic target
    models for their noise-free counterparts.
    """

    horizon: float = 5.0
    dt: float = 0.1
    target_models: Mapping = field(default_factory=dict)
    nontarget_mode: str = "replay"
    nontarget_params: IdmParams = PRESETS["default"]
    mean_only: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0.0 or not math.isfinite(self.dt):
            raise ConfigError(f"dt must be strictly positive, got {self.dt!r}")
        if self.horizon <= 0.0 or not math.isfinite(self.horizon):
            raise ConfigError(f"horizon must be strictly positive, got {self.horizon!r}")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(f"dt {self.dt!r} must divide the horizon {self.horizon!r}")
        if self.nontarget_mode not in NONTARGET_MODES:
            raise ConfigError(
                f"nontarget_mode must be one of {NONTARGET_MODES}, got {self.nontarget_mode!r}"
            )
        for vid, model in self.target_models.items():
            if not isinstance(model, DriverModel):
                raise ConfigError(f"target {vid!r} is not mapped to a DriverModel")

    @property
    def steps(self) -> int:
        return round(self.horizon / self.dt)


def _replay_offset(scene: Scene, data: TrajectorySet, dt: float) -> int:
    if abs(data.dt - dt) > 1e-9:
        raise TraceError(f"replay data dt {data.dt!r} does not match rollout dt {dt!r}")
    off = (scene.timestamp - data.t0) / dt
    if abs(off - round(off)) > 1e-6 or round(off) < 0:
        raise TraceError(
            f"scene timestamp {scene.timestamp!r} does not land on the replay time base "
            f"(t0 {data.t0!r}, dt {dt!r})"
        )
    return int(round(off))


def rollout(scene: Scene, data: TrajectorySet | None, cfg: RolloutConfig) -> TrajectorySet:
    """Simulate ``cfg.horizon`` seconds forward from ``scene``.

    Returns steps+1 samples per vehicle. Replayed vehicles whose recorded data
    ends mid-horizon drop out of the scene at that point and are flagged in
    ``truncated`` (their series are cut at the last recorded sample); the data
    as a whole must cover the horizon. Deterministic given ``cfg.seed``: each
    target vehicle consumes its own derived stream, so results do not depend
    on vehicle ordering.
    """
    steps = cfg.steps
    ids = scene.ids()
    missing = [vid for vid in cfg.target_models if vid not in scene._by_id]
    if missing:
        raise ConfigError(f"target vehicles {missing!r} are not present in the scene")
    nontargets = [vid for vid in ids if vid not in cfg.target_models]

    offset = 0
    if cfg.nontarget_mode == "replay" and nontargets:
        if data is None:
            raise ConfigError("nontarget_mode 'replay' requires trajectory data")
        absent = [vid for vid in nontargets if vid not in data.series]
        if absent:
            raise TraceError(f"replay data is missing vehicles {absent!r}")
        offset = _replay_offset(scene, data, cfg.dt)
        cover = 0
        for vid in nontargets:
            first, last = data.series[vid].finite_window()
            cover = max(cover, last - offset)
        if cover < steps:
            raise TraceError(
                f"replay data covers {cover} steps from the scene start but the horizon needs {steps}"
            )

    models = {}
    for vid, model in cfg.target_models.items():
        if cfg.mean_only and isinstance(model, StochasticIdm):
            model = model.mean_model()
        models[vid] = model
    nontarget_model = DeterministicIdm(cfg.nontarget_params)
    rngs = {vid: derive_rng(cfg.seed, "rollout", vid) for vid in cfg.target_models}

    pos = {vid: np.full(steps + 1, np.nan) for vid in ids}
    vel = {vid: np.full(steps + 1, np.nan) for vid in ids}
    acc = {vid: np.full(steps + 1, np.nan) for vid in ids}
    lane = {}
    length = {}
    for vid in ids:
        state = scene.vehicle(vid)
        pos[vid][0] = state.position
        vel[vid][0] = state.velocity
        lane[vid] = state.lane
        length[vid] = state.length

    active = set(ids)
    truncated = set()
    for k in range(steps):
        # leader lookup against the frozen step-k state
        by_lane: dict = {}
        for vid in active:
            by_lane.setdefault(lane[vid], []).append(vid)
        leader = {}
        for vids in by_lane.values():
            vids.sort(key=lambda vid: (pos[vid][k], str(vid)))
            for behind, ahead in zip(vids, vids[1:]):
                leader[behind] = ahead

        leaving = []
        for vid in active:
            lead = leader.get(vid)
            if lead is None:
                obs = EgoObservation(v=vel[vid][k])
            else:
                gap = pos[lead][k] - length[lead] - pos[vid][k]
                obs = EgoObservation(
                    v=vel[vid][k],
                    r=vel[lead][k] - vel[vid][k],
                    d=max(gap, GAP_EPS),
                    has_leader=True,
                )
            if vid in models or cfg.nontarget_mode == "idm":
                model = models.get(vid, nontarget_model)
                a = model.act(obs, rngs.get(vid))
                state = VehicleState(vid, pos[vid][k], vel[vid][k], length[vid], lane[vid])
                nxt = propagate(state, a, cfg.dt)
                acc[vid][k] = a
                pos[vid][k + 1] = nxt.position
                vel[vid][k + 1] = nxt.velocity
            else:
                idx = offset + k + 1
                s = data.series[vid]
                if idx < len(s) and np.isfinite(s.position[idx]):
                    pos[vid][k + 1] = s.position[idx]
                    vel[vid][k + 1] = s.velocity[idx]
                    acc[vid][k] = (s.velocity[idx] - vel[vid][k]) / cfg.dt
                else:
                    leaving.append(vid)
        for vid in leaving:
            active.discard(vid)
            truncated.add(vid)

    out = {}
    for vid in ids:
        if vid in truncated:
            first, last = VehicleSeries(pos[vid], vel[vid], acc[vid]).finite_window()
            stop = last + 1
            acc[vid][last] = np.nan
            out[vid] = VehicleSeries(pos[vid][:stop], vel[vid][:stop], acc[vid][:stop])
        else:
            out[vid] = VehicleSeries(pos[vid], vel[vid], acc[vid])
    return TrajectorySet(cfg.dt, scene.timestamp, out, frozenset(truncated))
