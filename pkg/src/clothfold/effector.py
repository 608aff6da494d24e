"""Point-mass effector with a task-space PD controller and setpoint interpolation.

The controller stands in for a torque-controlled arm: a Cartesian PD law with
exact gravity compensation acting on a single point mass. The policy's
per-step displacement target is fed to the controller through an exponential
setpoint interpolator so low-frequency actions become a continuous
high-frequency reference.
"""

from dataclasses import dataclass, field

import numpy as np

from .cloth import NumericError, ParameterError

# Interpolator coefficients: each iteration moves the setpoint 3% of the
# remaining way to the target, leaving a fixed 0.97 residual contraction.
BLEND_NEW = 0.03
BLEND_OLD = 0.97


@dataclass
class EffectorState:
    position: np.ndarray   # (3,) m
    velocity: np.ndarray   # (3,) m/s
    mass: float = 1.0      # kg

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if not self.mass > 0.0:
            raise ParameterError(f"effector mass must be > 0, got {self.mass}")

    def copy(self) -> "EffectorState":
        return EffectorState(self.position.copy(), self.velocity.copy(), self.mass)


def critically_damped_kd(kp, mass: float) -> np.ndarray:
    return 2.0 * np.sqrt(np.asarray(kp, dtype=float) * mass)


@dataclass
class ControllerGains:
    """Per-axis PD gains. Deliberately not tuned per task or per cloth."""

    kp: np.ndarray = field(default_factory=lambda: np.full(3, 300.0))
    kd: np.ndarray = field(default_factory=lambda: critically_damped_kd(np.full(3, 300.0), 1.0))

    def __post_init__(self):
        self.kp = np.broadcast_to(np.asarray(self.kp, dtype=float), (3,)).copy()
        self.kd = np.broadcast_to(np.asarray(self.kd, dtype=float), (3,)).copy()
        if not (np.all(self.kp > 0.0) and np.all(self.kd > 0.0)):
            raise ParameterError("controller gains must be > 0")


def interpolate_setpoint(x_t, a_t, x_tj) -> np.ndarray:
    """One interpolation iteration toward the target position x_t + a_t."""
    x_t = np.asarray(x_t, dtype=float)
    a_t = np.asarray(a_t, dtype=float)
    x_tj = np.asarray(x_tj, dtype=float)
    return BLEND_NEW * (x_t + a_t) + BLEND_OLD * x_tj


def osc_command(state: EffectorState, setpoint, gains: ControllerGains,
                gravity) -> np.ndarray:
    """PD force toward the setpoint plus exact gravity compensation."""
    setpoint = np.asarray(setpoint, dtype=float)
    gravity = np.asarray(gravity, dtype=float)
    force = gains.kp * (setpoint - state.position) - gains.kd * state.velocity
    force += state.mass * (-gravity)
    return force


def step_effector(state: EffectorState, force, dt: float, gravity) -> EffectorState:
    """Semi-implicit Euler on the point mass under (force + gravity)."""
    if dt <= 0.0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    force = np.asarray(force, dtype=float)
    if not np.isfinite(force).all():
        raise NumericError("non-finite effector force")
    gravity = np.asarray(gravity, dtype=float)
    accel = force / state.mass + gravity
    velocity = state.velocity + accel * dt
    position = state.position + velocity * dt
    return EffectorState(position, velocity, state.mass)
