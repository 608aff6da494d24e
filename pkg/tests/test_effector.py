import numpy as np
import pytest

from clothfold.cloth import NumericError, ParameterError
from clothfold.effector import (
    ControllerGains,
    EffectorState,
    critically_damped_kd,
    interpolate_setpoint,
    osc_command,
    step_effector,
)

GRAVITY = np.array([0.0, 0.0, -9.81])
NO_GRAVITY = np.zeros(3)


class TestInterpolateSetpoint:
    def test_single_iteration_scalar_case(self):
        out = interpolate_setpoint(np.zeros(3), np.array([1.0, 0, 0]), np.zeros(3))
        assert out[0] == pytest.approx(0.03)
        assert out[1] == out[2] == 0.0

    def test_target_is_fixed_point(self):
        x_t = np.array([0.2, -0.1, 0.5])
        a_t = np.array([0.03, 0.0, -0.02])
        target = x_t + a_t
        out = interpolate_setpoint(x_t, a_t, target)
        assert np.allclose(out, target, atol=1e-15)

    def test_ten_iterations_closed_form(self):
        x = np.zeros(3)
        target = np.array([1.0, 0.0, 0.0])
        for _ in range(10):
            x = interpolate_setpoint(np.zeros(3), target, x)
        assert abs(x[0] - (1.0 - 0.97 ** 10)) < 1e-9

    def test_residual_contracts_by_exactly_097(self):
        rng = np.random.Generator(np.random.PCG64(5))
        for _ in range(200):
            x_t = rng.normal(0, 1, 3)
            a_t = rng.normal(0, 0.03, 3)
            x = x_t.copy()
            target = x_t + a_t
            for _ in range(10):
                prev = np.linalg.norm(target - x)
                x = interpolate_setpoint(x_t, a_t, x)
                cur = np.linalg.norm(target - x)
                if prev > 1e-12:
                    assert abs(cur / prev - 0.97) < 1e-12


class TestOscCommand:
    def test_zero_error_gives_gravity_compensation(self):
        state = EffectorState(np.array([0.1, 0.2, 0.3]), np.zeros(3), mass=2.0)
        force = osc_command(state, state.position, ControllerGains(), GRAVITY)
        assert np.allclose(force, [0.0, 0.0, 2.0 * 9.81])

    def test_proportional_law(self):
        state = EffectorState(np.zeros(3), np.zeros(3), mass=1.0)
        gains = ControllerGains(kp=100.0, kd=1.0)
        force = osc_command(state, np.array([0.01, 0.0, 0.0]), gains, NO_GRAVITY)
        assert np.allclose(force, [1.0, 0.0, 0.0])

    def test_stateless(self):
        state = EffectorState(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
        args = (state, np.array([1.1, 0.0, 0.0]), ControllerGains(), GRAVITY)
        assert np.array_equal(osc_command(*args), osc_command(*args))

    def test_critically_damped_no_overshoot(self):
        mass = 1.0
        kp = np.full(3, 300.0)
        gains = ControllerGains(kp=kp, kd=critically_damped_kd(kp, mass))
        state = EffectorState(np.zeros(3), np.zeros(3), mass=mass)
        setpoint = np.array([0.1, 0.0, 0.0])
        dt = 0.001
        prev_x = state.position[0]
        for _ in range(5000):
            force = osc_command(state, setpoint, gains, GRAVITY)
            state = step_effector(state, force, dt, GRAVITY)
            assert state.position[0] <= setpoint[0] + 1e-9
            assert state.position[0] >= prev_x - 1e-9  # monotone approach
            prev_x = state.position[0]
        assert abs(state.position[0] - 0.1) < 1e-4

    def test_invalid_gains(self):
        with pytest.raises(ParameterError):
            ControllerGains(kp=0.0)
        with pytest.raises(ParameterError):
            ControllerGains(kd=-1.0)


class TestStepEffector:
    def test_zero_net_force_at_rest(self):
        state = EffectorState(np.array([0.3, 0.0, 0.5]), np.zeros(3))
        nxt = step_effector(state, np.zeros(3), 0.01, NO_GRAVITY)
        assert np.array_equal(nxt.position, state.position)
        assert np.array_equal(nxt.velocity, state.velocity)

    def test_unit_force_velocity(self):
        state = EffectorState(np.zeros(3), np.zeros(3), mass=1.0)
        nxt = step_effector(state, np.array([1.0, 0, 0]), 0.01, NO_GRAVITY)
        assert nxt.velocity[0] == pytest.approx(0.01)

    def test_gravity_compensated_hold_no_drift(self):
        state = EffectorState(np.array([0.1, 0.2, 0.3]), np.zeros(3), mass=1.5)
        gains = ControllerGains()
        for _ in range(100):
            force = osc_command(state, np.array([0.1, 0.2, 0.3]), gains, GRAVITY)
            nxt = step_effector(state, force, 0.01, GRAVITY)
            assert np.max(np.abs(nxt.position - state.position)) < 1e-9
            state = nxt

    def test_nonfinite_force_rejected(self):
        state = EffectorState(np.zeros(3), np.zeros(3))
        with pytest.raises(NumericError):
            step_effector(state, np.array([np.inf, 0, 0]), 0.01, GRAVITY)

    def test_bad_dt(self):
        state = EffectorState(np.zeros(3), np.zeros(3))
        with pytest.raises(ParameterError):
            step_effector(state, np.zeros(3), 0.0, GRAVITY)


class TestConvergence:
    def test_default_gains_reach_static_setpoint(self):
        # 10 cm offset, default gains: within 2 cm in <= 2 s, no divergence over 10 s
        state = EffectorState(np.zeros(3), np.zeros(3), mass=1.0)
        setpoint = np.array([0.1, 0.0, 0.0])
        gains = ControllerGains()
        dt = 0.01
        reached_at = None
        for i in range(1000):
            force = osc_command(state, setpoint, gains, GRAVITY)
            state = step_effector(state, force, dt, GRAVITY)
            dist = np.linalg.norm(state.position - setpoint)
            if reached_at is None and dist <= 0.02:
                reached_at = (i + 1) * dt
            assert dist < 0.2, "controller diverged"
        assert reached_at is not None and reached_at <= 2.0
