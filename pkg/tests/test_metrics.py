"""Unit tests for RMSE series, safety-event counting, and aggregation."""
import numpy as np
import pytest

from carfollow.errors import DomainError
from carfollow.metrics import (
    AggregateScore,
    EventCounts,
    ScenarioScore,
    aggregate,
    aggregate_frame,
    count_events,
    rmse_series,
    scores_frame,
)
from carfollow.models import ConstantVelocity, DeterministicIdm, PRESETS, VehicleState
from carfollow.sim import RolloutConfig, Scene, TrajectorySet, VehicleSeries, rollout


def uniform_set(speeds, n=20, dt=0.1, t0=0.0, offsets=None, x0=None):
    series = {}
    for i, (vid, v) in enumerate(speeds.items()):
        start = 0.0 if x0 is None else x0[i]
        shift = 0.0 if offsets is None else offsets.get(vid, 0.0)
        pos = start + shift + v * dt * np.arange(n + 1)
        vel = np.full(n + 1, float(v))
        acc = np.zeros(n + 1)
        series[vid] = VehicleSeries(pos, vel, acc)
    return TrajectorySet(dt, t0, series)


class TestRmseSeries:
    def test_identical_sets_score_zero(self):
        truth = uniform_set({"a": 10.0, "b": 12.0})
        out = rmse_series(truth, truth, ["a", "b"])
        assert np.all(out.position == 0.0)
        assert np.all(out.velocity == 0.0)
        assert out.t[0] == 0.0
        assert out.t[-1] == pytest.approx(2.0)

    def test_constant_offset(self):
        truth = uniform_set({"a": 10.0})
        pred = uniform_set({"a": 10.0}, offsets={"a": 2.0})
        out = rmse_series(pred, truth, ["a"])
        assert np.allclose(out.position, 2.0)
        assert np.all(out.velocity == 0.0)

    def test_two_vehicle_pooling(self):
        truth = uniform_set({"a": 10.0, "b": 10.0})
        pred = uniform_set({"a": 10.0, "b": 10.0}, offsets={"a": 3.0, "b": 4.0})
        out = rmse_series(pred, truth, ["a", "b"])
        assert np.allclose(out.position, np.sqrt((9.0 + 16.0) / 2.0))

    def test_target_order_is_irrelevant(self):
        truth = uniform_set({"a": 10.0, "b": 11.0})
        pred = uniform_set({"a": 10.5, "b": 11.5})
        fwd = rmse_series(pred, truth, ["a", "b"])
        rev = rmse_series(pred, truth, ["b", "a"])
        assert np.array_equal(fwd.position, rev.position)

    def test_shorter_prediction_sets_the_window(self):
        truth = uniform_set({"a": 10.0}, n=30)
        pred = uniform_set({"a": 10.0}, n=10)
        assert len(rmse_series(pred, truth, ["a"]).t) == 11

    def test_time_base_mismatches(self):
        truth = uniform_set({"a": 10.0}, dt=0.1)
        with pytest.raises(DomainError, match="dt"):
            rmse_series(uniform_set({"a": 10.0}, dt=0.04), truth, ["a"])
        with pytest.raises(DomainError, match="t0"):
            rmse_series(uniform_set({"a": 10.0}, t0=1.0), truth, ["a"])

    def test_missing_target(self):
        truth = uniform_set({"a": 10.0})
        with pytest.raises(DomainError, match="missing"):
            rmse_series(uniform_set({"b": 10.0}), truth, ["a"])
        with pytest.raises(DomainError):
            rmse_series(truth, truth, [])

    def test_nan_inside_window_rejected(self):
        truth = uniform_set({"a": 10.0})
        pred = uniform_set({"a": 10.0})
        pred.series["a"].position[5] = np.nan
        with pytest.raises(DomainError, match="gaps"):
            rmse_series(pred, truth, ["a"])


class TestCountEvents:
    def scene(self, states):
        return Scene(0.0, tuple(states))

    def test_clean_idm_rollout_has_no_events(self):
        lead = VehicleState("lead", 40.0, 8.0, 5.0, lane="1")
        ego = VehicleState("ego", 0.0, 10.0, 5.0, lane="1")
        scene = self.scene([ego, lead])
        cfg = RolloutConfig(
            horizon=5.0,
            dt=0.1,
            target_models={
                "ego": DeterministicIdm(PRESETS["default"]),
                "lead": ConstantVelocity(),
            },
        )
        traj = rollout(scene, None, cfg)
        events = count_events(traj, scene)
        assert events.collisions == 0
        assert events.hard_brakes == 0
        assert np.all(events.collision_cum == 0.0)

    def test_closing_pair_collides_at_known_step(self):
        # gap 10 m closes at 20 m/s -> first nonpositive gap at t = 0.5 s
        lead = VehicleState("lead", 15.0, 0.0, 5.0, lane="1")
        ego = VehicleState("ego", 0.0, 20.0, 5.0, lane="1")
        scene = self.scene([ego, lead])
        cfg = RolloutConfig(
            horizon=2.0,
            dt=0.1,
            target_models={"ego": ConstantVelocity(), "lead": ConstantVelocity()},
        )
        traj = rollout(scene, None, cfg)
        events = count_events(traj, scene)
        assert events.collisions == 1
        assert events.collision_pairs == [("ego", "lead", 5)]
        assert events.collision_cum[4] == 0.0
        assert events.collision_cum[5] == 1.0
        assert events.collision_cum[-1] == 1.0  # counted once, not per sample

    def test_cross_lane_overlap_not_counted(self):
        a = VehicleState("a", 0.0, 20.0, 5.0, lane="1")
        b = VehicleState("b", 10.0, 0.0, 5.0, lane="2")
        scene = self.scene([a, b])
        cfg = RolloutConfig(
            horizon=2.0,
            dt=0.1,
            target_models={"a": ConstantVelocity(), "b": ConstantVelocity()},
        )
        traj = rollout(scene, None, cfg)
        assert count_events(traj, scene).collisions == 0

    def test_hard_brake_threshold_is_strict(self):
        scene = self.scene([VehicleState("a", 0.0, 20.0, 5.0)])
        pos = 20.0 * 0.1 * np.arange(6)
        vel = np.full(6, 20.0)
        acc = np.array([0.0, -3.0, -3.0001, -5.0, 0.0, np.nan])
        traj = TrajectorySet(0.1, 0.0, {"a": VehicleSeries(pos, vel, acc)})
        events = count_events(traj, scene)
        assert events.hard_brakes == 2  # -3.0 exactly is not beyond the threshold
        assert events.hard_brake_cum[-1] == 2.0
        assert np.all(np.diff(events.hard_brake_cum) >= 0.0)

    def test_custom_brake_threshold(self):
        scene = self.scene([VehicleState("a", 0.0, 20.0, 5.0)])
        pos = 20.0 * 0.1 * np.arange(4)
        traj = TrajectorySet(
            0.1, 0.0, {"a": VehicleSeries(pos, np.full(4, 20.0), np.array([-2.5, -2.5, 0.0, np.nan]))}
        )
        assert count_events(traj, scene).hard_brakes == 0
        assert count_events(traj, scene, brake_threshold=2.0).hard_brakes == 2
        with pytest.raises(DomainError):
            count_events(traj, scene, brake_threshold=0.0)

    def test_pass_through_counts_every_ordered_pair(self):
        # three stopped vehicles; the rear one drives through both ahead
        states = [
            VehicleState("r", 0.0, 30.0, 5.0, lane="1"),
            VehicleState("m", 20.0, 0.0, 5.0, lane="1"),
            VehicleState("f", 40.0, 0.0, 5.0, lane="1"),
        ]
        scene = self.scene(states)
        cfg = RolloutConfig(
            horizon=3.0,
            dt=0.1,
            target_models={vid: ConstantVelocity() for vid in ("r", "m", "f")},
        )
        traj = rollout(scene, None, cfg)
        events = count_events(traj, scene)
        assert events.collisions == 2
        assert {(b, a) for b, a, _ in events.collision_pairs} == {("r", "m"), ("r", "f")}

    def test_rollout_vehicle_missing_from_scene(self):
        scene = self.scene([VehicleState("a", 0.0, 10.0, 5.0)])
        traj = uniform_set({"a": 10.0, "ghost": 10.0})
        with pytest.raises(DomainError, match="ghost"):
            count_events(traj, scene)


class TestAggregate:
    def score(self, sid, model="m", pos=1.0, vel=0.5, col=0, brakes=0):
        return ScenarioScore(sid, model, pos, vel, col, brakes)

    def test_single_scenario_has_zero_std(self):
        agg = aggregate([self.score("s1", pos=2.0)])
        assert agg.n_scenarios == 1
        assert agg.position_rmse_mean == 2.0
        assert agg.position_rmse_std == 0.0

    def test_population_std(self):
        agg = aggregate([self.score("s1", pos=4.0, col=1), self.score("s2", pos=6.0, col=3)])
        assert agg.position_rmse_mean == pytest.approx(5.0)
        assert agg.position_rmse_std == pytest.approx(1.0)  # ddof=0
        assert agg.collisions_mean == pytest.approx(2.0)
        assert agg.collisions_std == pytest.approx(1.0)

    def test_mixed_models_rejected(self):
        with pytest.raises(DomainError, match="single model"):
            aggregate([self.score("s1", model="m1"), self.score("s1", model="m2")])
        with pytest.raises(DomainError, match="empty"):
            aggregate([])

    def test_tidy_frames(self):
        scores = [self.score("s1"), self.score("s2", pos=3.0)]
        df = scores_frame(scores)
        assert list(df["scenario_id"]) == ["s1", "s2"]
        agg_df = aggregate_frame([aggregate(scores)])
        assert agg_df.loc[0, "position_rmse_mean"] == pytest.approx(2.0)
        assert agg_df.loc[0, "n_scenarios"] == 2
