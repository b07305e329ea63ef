"""Unit tests for the car-following models and kinematics."""
import math

import numpy as np
import pytest
from scipy.stats import norm

from carfollow.errors import ConfigError, DomainError
from carfollow.models import (
    CONST_ACCEL_DEFAULT,
    ConstantAcceleration,
    ConstantVelocity,
    DeterministicIdm,
    EgoObservation,
    IdmParams,
    PRESETS,
    StochasticIdm,
    StochasticParams,
    VehicleState,
    desired_gap,
    idm_acceleration,
    idm_acceleration_grid,
    idm_params_from_config,
    position_likelihood,
    position_mean,
    preset,
    propagate,
    sample_acceleration,
)

DEFAULT = PRESETS["default"]


def oracle_gap(v, r, p):
    raw = p.d_min + p.tau * v - v * r / (2.0 * math.sqrt(p.a_max * p.b_pref))
    return max(p.d_min, raw)


def oracle_accel(v, r, d, has_leader, p):
    inter = (oracle_gap(v, r, p) / d) ** 2 if has_leader else 0.0
    return p.a_max * (1.0 - (v / p.v_des) ** 4 - inter)


def random_params(rng):
    return IdmParams(
        v_des=rng.uniform(5.0, 40.0),
        d_min=rng.uniform(0.5, 5.0),
        tau=rng.uniform(0.3, 3.0),
        a_max=rng.uniform(0.5, 4.0),
        b_pref=rng.uniform(0.5, 4.0),
    )


class TestDesiredGap:
    def test_standstill(self):
        assert desired_gap(0.0, 0.0, DEFAULT) == 2.0

    def test_cruise_headway(self):
        # 2 + 1.0 * 10, no approach term
        assert desired_gap(10.0, 0.0, DEFAULT) == pytest.approx(12.0, abs=1e-12)

    def test_closing_approach_term(self):
        expected = 2.0 + 10.0 - 10.0 * (-2.0) / (2.0 * math.sqrt(3.0 * 2.0))
        assert desired_gap(10.0, -2.0, DEFAULT) == pytest.approx(expected, rel=1e-12)
        assert desired_gap(10.0, -2.0, DEFAULT) == pytest.approx(16.08248290463863, rel=1e-12)

    def test_receding_leader_clamps_at_standstill_gap(self):
        # raw value goes far negative for a strongly receding leader
        assert desired_gap(5.0, 40.0, DEFAULT) == DEFAULT.d_min

    def test_matches_oracle_on_random_grid(self):
        rng = np.random.default_rng(101)
        for _ in range(300):
            p = random_params(rng)
            v = rng.uniform(0.0, 40.0)
            r = rng.uniform(-10.0, 10.0)
            assert desired_gap(v, r, p) == pytest.approx(oracle_gap(v, r, p), rel=1e-12, abs=1e-12)

    def test_rejects_negative_speed(self):
        with pytest.raises(DomainError):
            desired_gap(-1.0, 0.0, DEFAULT)

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            desired_gap(math.inf, 0.0, DEFAULT)


class TestIdmAcceleration:
    def test_free_road_from_rest_is_max_accel(self):
        assert idm_acceleration(EgoObservation(v=0.0), DEFAULT) == 3.0

    def test_free_road_at_desired_speed_is_zero(self):
        assert idm_acceleration(EgoObservation(v=30.0), DEFAULT) == 0.0

    def test_free_road_above_desired_speed_brakes(self):
        assert idm_acceleration(EgoObservation(v=35.0), DEFAULT) < 0.0

    def test_worked_example(self):
        ego = EgoObservation(v=10.0, r=-2.0, d=20.0, has_leader=True)
        expected = oracle_accel(10.0, -2.0, 20.0, True, DEFAULT)
        got = idm_acceleration(ego, DEFAULT)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(1.023, abs=5e-4)

    def test_monotone_in_gap(self):
        gaps = np.linspace(2.0, 120.0, 80)
        accs = [
            idm_acceleration(EgoObservation(v=15.0, r=-1.0, d=float(d), has_leader=True), DEFAULT)
            for d in gaps
        ]
        assert np.all(np.diff(accs) > 0.0)

    def test_matches_oracle_on_random_grid(self):
        rng = np.random.default_rng(202)
        for _ in range(500):
            p = random_params(rng)
            v = rng.uniform(0.0, 40.0)
            r = rng.uniform(-10.0, 10.0)
            d = rng.uniform(0.5, 200.0)
            has_leader = rng.uniform() < 0.8
            ego = EgoObservation(v=v, r=r, d=d, has_leader=True) if has_leader else EgoObservation(v=v)
            expected = oracle_accel(v, r, d, has_leader, p)
            assert idm_acceleration(ego, p) == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_grid_variant_matches_scalar(self):
        rng = np.random.default_rng(303)
        v_des = 10.0 + 0.5 * np.arange(61)
        for _ in range(20):
            v = rng.uniform(0.0, 38.0)
            ego = EgoObservation(v=v, r=rng.uniform(-5, 5), d=rng.uniform(5, 100), has_leader=True)
            got = idm_acceleration_grid(ego, DEFAULT, v_des)
            for j in (0, 17, 60):
                p = IdmParams(float(v_des[j]), DEFAULT.d_min, DEFAULT.tau, DEFAULT.a_max, DEFAULT.b_pref)
                assert got[j] == pytest.approx(idm_acceleration(ego, p), rel=1e-12)

    def test_invalid_gap_rejected_at_observation(self):
        with pytest.raises(DomainError):
            EgoObservation(v=5.0, r=0.0, d=0.0, has_leader=True)
        with pytest.raises(DomainError):
            EgoObservation(v=5.0, r=0.0, d=-3.0, has_leader=True)


class TestSampleAcceleration:
    def test_zero_variance_is_exact_and_skips_rng(self):
        rng = np.random.default_rng(7)
        assert sample_acceleration(1.234, 0.0, rng) == 1.234
        # stream untouched: next draw equals a fresh generator's first draw
        assert rng.standard_normal() == np.random.default_rng(7).standard_normal()

    def test_moments(self):
        rng = np.random.default_rng(99)
        draws = np.array([sample_acceleration(0.5, 0.64, rng) for _ in range(20000)])
        assert draws.mean() == pytest.approx(0.5, abs=0.02)
        assert draws.var() == pytest.approx(0.64, rel=0.05)

    def test_sigma_is_variance_not_std(self):
        rng = np.random.default_rng(5)
        draws = np.array([sample_acceleration(0.0, 4.0, rng) for _ in range(20000)])
        assert draws.std() == pytest.approx(2.0, rel=0.05)

    def test_rejects_negative_variance(self):
        with pytest.raises(DomainError):
            sample_acceleration(0.0, -0.1, np.random.default_rng(0))


class TestPropagate:
    def test_uniform_motion(self):
        s = propagate(VehicleState("a", 0.0, 10.0, 4.0), 0.0, 0.5)
        assert s.position == 5.0
        assert s.velocity == 10.0

    def test_acceleration_terms(self):
        s = propagate(VehicleState("a", 1.0, 10.0, 4.0), 2.0, 0.1)
        assert s.position == pytest.approx(1.0 + 10.0 * 0.1 + 0.5 * 2.0 * 0.01, rel=1e-15)
        assert s.velocity == pytest.approx(10.2, rel=1e-15)

    def test_braking_clamps_velocity_at_zero(self):
        s = propagate(VehicleState("a", 0.0, 1.0, 4.0), -30.0, 0.1)
        assert s.velocity == 0.0

    def test_position_never_decreases(self):
        s = propagate(VehicleState("a", 3.0, 0.0, 4.0), -5.0, 0.1)
        assert s.position == 3.0

    def test_random_grid_keeps_invariants(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            state = VehicleState("a", rng.uniform(-50, 50), rng.uniform(0, 40), 4.0)
            nxt = propagate(state, rng.uniform(-10, 5), rng.uniform(0.01, 0.2))
            assert nxt.velocity >= 0.0
            assert nxt.position >= state.position

    def test_accel_only_drops_velocity_carry(self):
        s = propagate(VehicleState("a", 2.0, 10.0, 4.0), 2.0, 0.1, accel_only=True)
        assert s.position == pytest.approx(2.0 + 0.5 * 2.0 * 0.01, rel=1e-15)
        s = propagate(VehicleState("a", 2.0, 10.0, 4.0), -2.0, 0.1, accel_only=True)
        assert s.position == 2.0  # negative displacement clamped

    def test_position_mean_matches_propagate(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            x, v = rng.uniform(-10, 10), rng.uniform(0, 30)
            a, dt = rng.uniform(-8, 4), rng.uniform(0.02, 0.2)
            assert position_mean(x, v, a, dt) == propagate(VehicleState("a", x, v, 4.0), a, dt).position

    def test_rejects_bad_dt(self):
        with pytest.raises(DomainError):
            propagate(VehicleState("a", 0.0, 1.0, 4.0), 0.0, 0.0)
        with pytest.raises(DomainError):
            propagate(VehicleState("a", 0.0, 1.0, 4.0), math.nan, 0.1)


class TestPositionLikelihood:
    def test_peak_value(self):
        assert position_likelihood(0.0, 0.0, 1.0, 1.0) == pytest.approx(
            1.0 / math.sqrt(2.0 * math.pi), rel=1e-12
        )

    def test_worked_example(self):
        # deviation 0.05 m, variance 0.25, dt 0.1 -> std 0.05
        got = position_likelihood(0.05, 0.0, 0.25, 0.1)
        assert got == pytest.approx(norm.pdf(0.05, 0.0, math.sqrt(0.25) * 0.1), rel=1e-12)
        assert got == pytest.approx(4.8394, abs=5e-4)

    def test_symmetry(self):
        for delta in (0.01, 0.3, 2.5):
            assert position_likelihood(1.0 + delta, 1.0, 0.5, 0.1) == pytest.approx(
                position_likelihood(1.0 - delta, 1.0, 0.5, 0.1), rel=1e-12
            )

    def test_matches_scipy_on_random_grid(self):
        rng = np.random.default_rng(17)
        for _ in range(300):
            mu = rng.uniform(-100, 100)
            x = mu + rng.uniform(-5, 5)
            sigma = rng.uniform(0.05, 3.0)
            dt = rng.uniform(0.01, 0.5)
            assert position_likelihood(x, mu, sigma, dt) == pytest.approx(
                norm.pdf(x, mu, math.sqrt(sigma) * dt), rel=1e-12
            )

    def test_integrates_to_one(self):
        sigma, dt = 0.7, 0.1
        std = math.sqrt(sigma) * dt
        xs = np.linspace(-8.0 * std, 8.0 * std, 20001)
        ys = [position_likelihood(float(x), 0.0, sigma, dt) for x in xs]
        assert np.trapezoid(ys, xs) == pytest.approx(1.0, abs=1e-6)

    def test_rejects_degenerate_inputs(self):
        with pytest.raises(DomainError):
            position_likelihood(0.0, 0.0, 0.0, 0.1)
        with pytest.raises(DomainError):
            position_likelihood(0.0, 0.0, 0.5, 0.0)
        with pytest.raises(DomainError):
            position_likelihood(math.inf, 0.0, 0.5, 0.1)


class TestParamsAndPresets:
    def test_default_preset_values(self):
        p = preset("default")
        assert (p.v_des, p.d_min, p.tau, p.a_max, p.b_pref) == (30.0, 2.0, 1.0, 3.0, 2.0)

    def test_nonlinear_fit_preset_values(self):
        p = preset("nonlinear_fit")
        assert (p.v_des, p.d_min, p.tau, p.a_max, p.b_pref) == (17.837, 5.249, 0.918, 0.758, 3.811)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("aggressive")

    def test_preset_overrides(self):
        p = preset("default", v_des=22.0)
        assert p.v_des == 22.0
        assert p.tau == 1.0

    def test_params_from_config(self):
        p = idm_params_from_config({"preset": "default", "v_des": 25.0, "tau": 1.5})
        assert (p.v_des, p.tau, p.d_min) == (25.0, 1.5, 2.0)

    def test_params_from_config_rejects_unknown_key(self):
        with pytest.raises(ConfigError):
            idm_params_from_config({"speed_limit": 30.0})

    @pytest.mark.parametrize("field", ["v_des", "d_min", "tau", "a_max", "b_pref"])
    def test_rejects_non_positive(self, field):
        kwargs = dict(v_des=30.0, d_min=2.0, tau=1.0, a_max=3.0, b_pref=2.0)
        kwargs[field] = 0.0
        with pytest.raises(DomainError):
            IdmParams(**kwargs)
        kwargs[field] = math.nan
        with pytest.raises(DomainError):
            IdmParams(**kwargs)

    def test_stochastic_params_reject_negative_variance(self):
        with pytest.raises(DomainError):
            StochasticParams(DEFAULT, -0.5)


class TestStateAndObservation:
    def test_vehicle_state_validation(self):
        with pytest.raises(DomainError):
            VehicleState("a", 0.0, -1.0, 4.0)
        with pytest.raises(DomainError):
            VehicleState("a", 0.0, 1.0, 0.0)
        with pytest.raises(DomainError):
            VehicleState("a", math.nan, 1.0, 4.0)

    def test_observation_defaults_to_free_road(self):
        ego = EgoObservation(v=12.0)
        assert not ego.has_leader
        assert math.isinf(ego.d)

    def test_observation_validation(self):
        with pytest.raises(DomainError):
            EgoObservation(v=-0.1)
        with pytest.raises(DomainError):
            EgoObservation(v=1.0, r=math.nan, d=10.0, has_leader=True)
        with pytest.raises(DomainError):
            EgoObservation(v=1.0, r=0.0, d=math.inf, has_leader=True)


class TestDriverModels:
    def test_constant_velocity(self):
        assert ConstantVelocity().act(EgoObservation(v=17.0)) == 0.0

    def test_constant_acceleration(self):
        assert ConstantAcceleration().act(EgoObservation(v=0.0)) == CONST_ACCEL_DEFAULT
        assert ConstantAcceleration(0.4).act(EgoObservation(v=0.0)) == 0.4

    def test_stochastic_zero_noise_equals_deterministic(self):
        rng = np.random.default_rng(23)
        det = DeterministicIdm(DEFAULT)
        sto = StochasticIdm(StochasticParams(DEFAULT, 0.0))
        for _ in range(50):
            ego = EgoObservation(v=rng.uniform(0, 35), r=rng.uniform(-5, 5), d=rng.uniform(3, 80), has_leader=True)
            assert sto.act(ego, rng) == det.act(ego)

    def test_stochastic_requires_rng(self):
        sto = StochasticIdm(StochasticParams(DEFAULT, 0.5))
        with pytest.raises(DomainError):
            sto.act(EgoObservation(v=5.0))

    def test_mean_model_strips_noise(self):
        sto = StochasticIdm(StochasticParams(DEFAULT, 1.5))
        det = sto.mean_model()
        ego = EgoObservation(v=12.0, r=-1.0, d=30.0, has_leader=True)
        assert det.act(ego) == idm_acceleration(ego, DEFAULT)
