"""Prediction-quality and safety-event metrics for rollouts.

RMSE series compare predicted against recorded positions/speeds across a set
of target vehicles on a shared time base. Safety events count collisions
(first instant a same-lane bumper-to-bumper gap reaches zero, once per
ordered pair) and hard brakes (samples with deceleration beyond a threshold).
Aggregation across scenarios reports mean and population standard deviation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DomainError
from .sim import Scene, TrajectorySet

__all__ = [
    "HARD_BRAKE_THRESHOLD",
    "RmseSeries",
    "EventCounts",
    "ScenarioScore",
    "AggregateScore",
    "rmse_series",
    "count_events",
    "aggregate",
    "scores_frame",
    "aggregate_frame",
]

HARD_BRAKE_THRESHOLD = 3.0  # m/s^2 of deceleration


@dataclass
class RmseSeries:
    """Root-mean-square prediction error over targets, per horizon sample.

    ``t`` holds offsets from the rollout start (t[0] == 0).
    """

    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray


@dataclass
class EventCounts:
    """Safety events of one rollout; cumulative series share the time base."""

    collisions: int
    hard_brakes: int
    collision_cum: np.ndarray
    hard_brake_cum: np.ndarray
    collision_pairs: list = field(default_factory=list)


@dataclass
class ScenarioScore:
    """End-of-horizon summary for one (model, scenario) pair."""

    scenario_id: str
    model: str
    position_rmse: float
    velocity_rmse: float
    collisions: int
    hard_brakes: int


@dataclass
class AggregateScore:
    """Across-scenario mean and population std of each scenario-level field."""

    model: str
    n_scenarios: int
    position_rmse_mean: float
    position_rmse_std: float
    velocity_rmse_mean: float
    velocity_rmse_std: float
    collisions_mean: float
    collisions_std: float
    hard_brakes_mean: float
    hard_brakes_std: float


def rmse_series(pred: TrajectorySet, truth: TrajectorySet, target_ids) -> RmseSeries:
    """RMSE of position and speed across ``target_ids``, per horizon sample.

    Both sets must share dt and start time; every target needs finite samples
    over the whole prediction length in both sets.
    """
    target_ids = list(target_ids)
    if not target_ids:
        raise DomainError("rmse_series needs at least one target vehicle")
    if abs(pred.dt - truth.dt) > 1e-9:
        raise DomainError(f"time-base mismatch: pred dt {pred.dt!r} vs truth dt {truth.dt!r}")
    if abs(pred.t0 - truth.t0) > 1e-6:
        raise DomainError(f"time-base mismatch: pred t0 {pred.t0!r} vs truth t0 {truth.t0!r}")
    for vid in target_ids:
        if vid not in pred.series or vid not in truth.series:
            raise DomainError(f"target {vid!r} is missing from the prediction or the ground truth")
    length = min(len(pred.series[vid]) for vid in target_ids)
    pos_err = []
    vel_err = []
    for vid in target_ids:
        ps, ts = pred.series[vid], truth.series[vid]
        if len(ps) < length or len(ts) < length:
            raise DomainError(f"target {vid!r} does not cover the prediction window")
        dx = ps.position[:length] - ts.position[:length]
        dv = ps.velocity[:length] - ts.velocity[:length]
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dv))):
            raise DomainError(f"target {vid!r} has gaps inside the prediction window")
        pos_err.append(dx)
        vel_err.append(dv)
    pos_err = np.stack(pos_err)
    vel_err = np.stack(vel_err)
    return RmseSeries(
        t=pred.dt * np.arange(length),
        position=np.sqrt(np.mean(pos_err**2, axis=0)),
        velocity=np.sqrt(np.mean(vel_err**2, axis=0)),
    )


def count_events(traj: TrajectorySet, scene: Scene, brake_threshold: float = HARD_BRAKE_THRESHOLD) -> EventCounts:
    """Count collisions and hard brakes in a rollout.

    Lanes and lengths come from ``scene`` (the rollout's initial snapshot).
    A collision is the first sample where an ordered same-lane pair's gap
    (front bumper of the follower to rear bumper of the vehicle initially
    ahead) reaches zero; each pair is counted once. A hard brake is any sample
    with acceleration below ``-brake_threshold``.
    """
    if brake_threshold <= 0.0 or not math.isfinite(brake_threshold):
        raise DomainError(f"brake_threshold must be strictly positive, got {brake_threshold!r}")
    missing = [vid for vid in traj.ids() if vid not in scene._by_id]
    if missing:
        raise DomainError(f"vehicles {missing!r} of the rollout are absent from the scene")
    n = traj.length
    collision_cum = np.zeros(n)
    hard_brake_cum = np.zeros(n)
    pairs = []

    by_lane: dict = {}
    for vid in traj.ids():
        by_lane.setdefault(scene.vehicle(vid).lane, []).append(vid)
    for lane_ids in by_lane.values():
        lane_ids.sort(key=lambda vid: (scene.vehicle(vid).position, str(vid)))
        for i, behind in enumerate(lane_ids):
            for ahead in lane_ids[i + 1 :]:
                xb = traj.series[behind].position
                xa = traj.series[ahead].position
                m = min(len(xb), len(xa))
                gap = xa[:m] - scene.vehicle(ahead).length - xb[:m]
                hit = np.flatnonzero(np.isfinite(gap) & (gap <= 0.0))
                if hit.size:
                    t = int(hit[0])
                    pairs.append((behind, ahead, t))
                    collision_cum[t:] += 1.0

    for vid in traj.ids():
        acc = traj.series[vid].acceleration
        braking = np.isfinite(acc) & (acc < -brake_threshold)
        for t in np.flatnonzero(braking):
            hard_brake_cum[t:] += 1.0

    return EventCounts(
        collisions=int(collision_cum[-1]) if n else 0,
        hard_brakes=int(hard_brake_cum[-1]) if n else 0,
        collision_cum=collision_cum,
        hard_brake_cum=hard_brake_cum,
        collision_pairs=pairs,
    )


def aggregate(scores: list) -> AggregateScore:
    """Mean and population std (ddof=0) of one model's scenario scores."""
    if not scores:
        raise DomainError("cannot aggregate an empty score list")
    models = {s.model for s in scores}
    if len(models) > 1:
        raise DomainError(f"aggregate expects a single model, got {sorted(models)}")

    def stat(values):
        arr = np.asarray(values, dtype=float)
        return float(arr.mean()), float(arr.std(ddof=0))

    pm, psd = stat([s.position_rmse for s in scores])
    vm, vsd = stat([s.velocity_rmse for s in scores])
    cm, csd = stat([s.collisions for s in scores])
    hm, hsd = stat([s.hard_brakes for s in scores])
    return AggregateScore(
        model=scores[0].model,
        n_scenarios=len(scores),
        position_rmse_mean=pm,
        position_rmse_std=psd,
        velocity_rmse_mean=vm,
        velocity_rmse_std=vsd,
        collisions_mean=cm,
        collisions_std=csd,
        hard_brakes_mean=hm,
        hard_brakes_std=hsd,
    )


def scores_frame(scores: list) -> pd.DataFrame:
    """Per-scenario scores as a tidy table."""
    return pd.DataFrame(
        [
            {
                "scenario_id": s.scenario_id,
                "model": s.model,
                "position_rmse": s.position_rmse,
                "velocity_rmse": s.velocity_rmse,
                "collisions": s.collisions,
                "hard_brakes": s.hard_brakes,
            }
            for s in scores
        ]
    )


def aggregate_frame(aggregates: list) -> pd.DataFrame:
    """Per-model aggregate rows (mean, population std) as a tidy table."""
    return pd.DataFrame(
        [
            {
                "model": a.model,
                "n_scenarios": a.n_scenarios,
                "position_rmse_mean": a.position_rmse_mean,
                "position_rmse_std": a.position_rmse_std,
                "velocity_rmse_mean": a.velocity_rmse_mean,
                "velocity_rmse_std": a.velocity_rmse_std,
                "collisions_mean": a.collisions_mean,
                "collisions_std": a.collisions_std,
                "hard_brakes_mean": a.hard_brakes_mean,
                "hard_brakes_std": a.hard_brakes_std,
            }
            for a in aggregates
        ]
    )
