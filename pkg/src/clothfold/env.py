"""Goal-conditioned folding environment.

One episode: a cloth is grasped at corner p1, and the policy must carry p1 to
its goal g1 while the free corner p0 of the same edge swings to g0 (the goals
sit near the corners across the fold line). Actions are desired effector
displacements in [-1, 1]^3, scaled to +-0.03 m; each policy step runs ten
10 ms control iterations of setpoint interpolation, PD force, and cloth
integration. Reward is dense while both corners are within delta of their
goals and -1 otherwise.
"""

from dataclasses import dataclass

import numpy as np

from .cloth import (ClothParams, ParameterError, accumulate_forces, build_cloth,
                    grasp_index, step_cloth, tracked_indices, tracked_points)
from .effector import (ControllerGains, EffectorState, critically_damped_kd,
                       interpolate_setpoint, osc_command, step_effector)
from .render import (CameraConfig, VisualConfig, VisualRanges, default_camera,
                     project_many, render, sample_visual_config)

GRAVITY = np.array([0.0, 0.0, -9.81])

ACTION_DIM = 3
GOAL_DIM = 6            # g0 then g1
TRACKED_STATE_DIM = 48  # 8 tracked points, position then velocity
FULL_STATE_DIM = TRACKED_STATE_DIM + GOAL_DIM + ACTION_DIM
LABEL_DIM = 16          # 8 (u, v) pixel pairs, normalized to [0, 1]


class EpisodeError(RuntimeError):
    """Raised when step() is called on a finished or unstarted episode."""


@dataclass
class Goal:
    """Target positions for the free corner (g0) and the grasped corner (g1)."""

    g0: np.ndarray
    g1: np.ndarray

    def __post_init__(self):
        self.g0 = np.asarray(self.g0, dtype=float).reshape(3)
        self.g1 = np.asarray(self.g1, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.g0)) and np.all(np.isfinite(self.g1))):
            raise ParameterError("goal positions must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.g0, self.g1])

    @classmethod
    def from_vector(cls, vec) -> "Goal":
        vec = np.asarray(vec, dtype=float).reshape(6)
        return cls(vec[:3], vec[3:])


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode constants. The defaults are the task as evaluated.

    kp is higher than the bare controller default: the setpoint interpolator
    only covers ~26% of a commanded displacement per policy step, so soft
    gains cannot traverse the workspace within 25 steps. kd defaults to the
    critically damped value.
    """

    max_steps: int = 25
    substeps: int = 10
    sim_dt: float = 0.01        # s
    delta: float = 0.04         # m, per-corner success threshold
    action_scale: float = 0.03  # m, displacement for a +-1 action
    hold_limit: int = 10        # steps; episode ends when exceeded consecutively
    goal_noise: float = 0.02    # m, radius of the goal jitter ball
    kp: float = 1000.0          # N/m, effector PD
    kd: float | None = None     # N*s/m; None = critically damped
    effector_mass: float = 1.0  # kg
    image_size: int = 100

    def __post_init__(self):
        for name in ("max_steps", "substeps", "sim_dt", "delta", "action_scale",
                     "hold_limit", "kp", "effector_mass", "image_size"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.goal_noise < 0:
            raise ParameterError(f"goal_noise must be >= 0, got {self.goal_noise}")
        if self.kd is not None and not self.kd > 0:
            raise ParameterError(f"kd must be > 0 or None, got {self.kd}")

    def gains(self) -> ControllerGains:
        kd = self.kd if self.kd is not None else critically_damped_kd(self.kp, self.effector_mass)
        return ControllerGains(kp=self.kp, kd=kd)


@dataclass
class Observation:
    """What the policy sees: an image (when rendering) plus proprioception.

    state carries the tracked cloth points for the state-observing baseline
    policy; image-based policies must not consume it.
    """

    prev_action: np.ndarray       # (3,) in [-1, 1]
    goal: np.ndarray              # (6,)
    image: np.ndarray | None      # (S, S) uint8, None when rendering is off
    state: np.ndarray             # (48,)


@dataclass
class StepResult:
    observation: Observation
    full_state: np.ndarray        # (57,) tracked points + goal + action
    reward: float
    done: bool
    info: dict


def reward(p0, p1, g0, g1, delta: float) -> float:
    """Dense-when-successful reward: 0.5 * sum(1 - d_i/delta) if both corners
    are within delta of their goals, else -1."""
    d0 = float(np.linalg.norm(np.asarray(p0, dtype=float) - np.asarray(g0, dtype=float)))
    d1 = float(np.linalg.norm(np.asarray(p1, dtype=float) - np.asarray(g1, dtype=float)))
    if d0 <= delta and d1 <= delta:
        return 0.5 * ((1.0 - d0 / delta) + (1.0 - d1 / delta))
    return -1.0


def reward_from_goal_vectors(achieved, goal, delta: float):
    """reward() on (p0, p1) / (g0, g1) packed as 6-vectors.

    Accepts (..., 6) batches, scored elementwise along the trailing axis;
    a single 6-vector returns a plain float (used by hindsight relabeling).
    """
    achieved = np.asarray(achieved, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if achieved.shape[-1:] != (6,) or goal.shape != achieved.shape:
        raise ParameterError(f"achieved/goal must be matching (..., 6) "
                             f"vectors, got {achieved.shape} and {goal.shape}")
    d0 = np.linalg.norm(achieved[..., :3] - goal[..., :3], axis=-1)
    d1 = np.linalg.norm(achieved[..., 3:] - goal[..., 3:], axis=-1)
    inside = (d0 <= delta) & (d1 <= delta)
    r = np.where(inside, 0.5 * ((1.0 - d0 / delta) + (1.0 - d1 / delta)), -1.0)
    return float(r) if r.ndim == 0 else r


def corner_metrics(p0, p1, g0, g1, delta: float) -> tuple[float, float, float, bool]:
    """(d0, d1, d_sum, success): corner distances and the joint success test."""
    d0 = float(np.linalg.norm(np.asarray(p0, dtype=float) - np.asarray(g0, dtype=float)))
    d1 = float(np.linalg.norm(np.asarray(p1, dtype=float) - np.asarray(g1, dtype=float)))
    return d0, d1, d0 + d1, bool(d0 <= delta and d1 <= delta)


def achieved_goal(full_state: np.ndarray) -> np.ndarray:
    """The (p0, p1) slice of a full state, packed like Goal.as_vector()."""
    full_state = np.asarray(full_state, dtype=float)
    return full_state[..., :6].copy()


def _uniform_ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    """Uniform sample from a solid 3D ball of the given radius."""
    direction = rng.normal(0.0, 1.0, 3)
    norm = np.linalg.norm(direction)
    if norm < 1e-12:
        return np.zeros(3)
    return direction / norm * radius * rng.uniform() ** (1.0 / 3.0)


def nominal_goal(params: ClothParams) -> Goal:
    """The unjittered goals: initial positions of the corners across the fold."""
    state, _ = build_cloth(params, np.zeros(3))
    n = params.grid_n
    return Goal(state.positions[n * (n - 1)].copy(), state.positions[n * n - 1].copy())


def rollout_actions(env: "FoldEnv", actions, goal: Goal | None = None) -> list:
    """Reset and replay an action sequence open-loop; returns all StepResults.

    Stops early if the episode terminates before the actions run out.
    """
    results = [env.reset(goal=goal)]
    for action in actions:
        results.append(env.step(action))
        if results[-1].done:
            break
    return results


class FoldEnv:
    """The folding POMDP over a pool of fabrics.

    Each reset draws a fabric uniformly from the pool, rebuilds the cloth
    flat, re-samples visuals (when ranges are given), and jitters the goals
    inside a 2 cm ball around the corners across the fold line. All draws
    come from one seeded generator, so a seed fixes the whole episode
    sequence; render noise uses a separate stream so trajectories are
    identical whether or not images are rendered.
    """

    def __init__(self, pool, config: EpisodeConfig | None = None,
                 visual_ranges: VisualRanges | None = None,
                 render_images: bool = True, seed: int = 0):
        pool = list(pool)
        if not pool:
            raise ParameterError("cloth parameter pool is empty")
        self.pool = pool
        self.config = config if config is not None else EpisodeConfig()
        self.visual_ranges = visual_ranges
        self.render_images = render_images
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self._noise_rng = None
        self._state = None
        self._active = False

    def reset(self, goal: Goal | None = None) -> StepResult:
        cfg = self.config
        rng = self._rng
        self.fabric_index = int(rng.integers(len(self.pool)))
        self.params = self.pool[self.fabric_index]
        self._cloth, self._topology = build_cloth(self.params, np.zeros(3))
        n = self.params.grid_n
        self._grasp = grasp_index(n)
        self._tracked_idx = tracked_indices(n)
        self._effector = EffectorState(self._cloth.positions[self._grasp].copy(),
                                       np.zeros(3), mass=cfg.effector_mass)
        self._gains = cfg.gains()

        if goal is not None:
            self.goal = goal
        else:
            # Goals: the corners across the fold line, jittered in a small ball.
            far_left = self._cloth.positions[n * (n - 1)].copy()
            far_right = self._cloth.positions[n * n - 1].copy()
            self.goal = Goal(far_left + _uniform_ball(rng, cfg.goal_noise),
                             far_right + _uniform_ball(rng, cfg.goal_noise))

        if self.visual_ranges is not None:
            self._camera, self._visual = sample_visual_config(rng, self.visual_ranges)
        else:
            side = self.params.side_length
            center = np.array([side / 2.0, side / 2.0, -side / 4.0])
            self._camera = default_camera(center, image_size=cfg.image_size)
            self._visual = VisualConfig()
        self._noise_rng = np.random.Generator(np.random.PCG64(int(rng.integers(2 ** 63))))

        self._step_count = 0
        self._consecutive_near = 0
        self._active = True
        zero_action = np.zeros(ACTION_DIM)
        return self._result(zero_action, reward_value=0.0, done=False,
                            reason=None, clamped=False)

    def step(self, action) -> StepResult:
        if not self._active:
            raise EpisodeError("episode is not active; call reset()")
        cfg = self.config
        action = np.asarray(action, dtype=float).reshape(ACTION_DIM)
        if not np.all(np.isfinite(action)):
            raise ParameterError("action must be finite")
        clipped = np.clip(action, -1.0, 1.0)
        clamped = bool(np.any(clipped != action))

        scaled = clipped * cfg.action_scale
        anchor = self._effector.position.copy()
        setpoint = anchor.copy()
        for _ in range(cfg.substeps):
            setpoint = interpolate_setpoint(anchor, scaled, setpoint)
            force = osc_command(self._effector, setpoint, self._gains, GRAVITY)
            self._effector = step_effector(self._effector, force, cfg.sim_dt, GRAVITY)
            cloth_forces = accumulate_forces(self._cloth, self._topology,
                                             self.params, GRAVITY)
            self._cloth = step_cloth(self._cloth, cloth_forces, self.params, cfg.sim_dt,
                                     pin=(self._grasp, self._effector.position.copy(),
                                          self._effector.velocity.copy()))

        self._step_count += 1
        p0 = self._cloth.positions[0]
        d1 = float(np.linalg.norm(self._cloth.positions[self._grasp] - self.goal.g1))
        self._consecutive_near = self._consecutive_near + 1 if d1 <= cfg.delta else 0

        if self._consecutive_near > cfg.hold_limit:
            done, reason = True, "hold"
        elif self._step_count >= cfg.max_steps:
            done, reason = True, "timeout"
        else:
            done, reason = False, None
        if done:
            self._active = False

        r = reward(p0, self._cloth.positions[self._grasp],
                   self.goal.g0, self.goal.g1, cfg.delta)
        return self._result(clipped, reward_value=r, done=done,
                            reason=reason, clamped=clamped)

    def _result(self, action: np.ndarray, reward_value: float, done: bool,
                reason: str | None, clamped: bool) -> StepResult:
        cfg = self.config
        pos, vel = tracked_points(self._cloth)
        state_vec = np.concatenate([pos.ravel(), vel.ravel()])
        goal_vec = self.goal.as_vector()
        full_state = np.concatenate([state_vec, goal_vec, action])

        image = None
        if self.render_images:
            image = render(self._cloth.positions, self._camera, self._visual,
                           noise_seed=int(self._noise_rng.integers(2 ** 63)))
        uv = project_many(self._cloth.positions[self._tracked_idx],
                          self._camera, clamp_near=True)
        labels = np.clip(uv / (cfg.image_size - 1), 0.0, 1.0).ravel()

        d0, d1, d_sum, success = corner_metrics(
            pos[0], pos[1], self.goal.g0, self.goal.g1, cfg.delta)
        info = {
            "d0": d0, "d1": d1, "d_sum": d_sum, "success": success,
            "action_clamped": clamped, "corner_uv": labels,
            "step": self._step_count,
            "fabric_index": self.fabric_index, "reason": reason,
        }
        obs = Observation(prev_action=action.copy(), goal=goal_vec,
                          image=image, state=state_vec)
        return StepResult(observation=obs, full_state=full_state,
                          reward=float(reward_value), done=done, info=info)

    @property
    def active(self) -> bool:
        return self._active

    @property
    def step_count(self) -> int:
        return self._step_count

    @property
    def camera(self) -> CameraConfig:
        return self._camera

    @property
    def cloth_positions(self) -> np.ndarray:
        return self._cloth.positions.copy()

    @property
    def effector_position(self) -> np.ndarray:
        return self._effector.position.copy()
