"""Cloth-dynamics randomization: sampling, demonstration scoring, top-M pools.

The pool is built by sampling candidate cloth parameters uniformly from
configured ranges, replaying expert demonstrations open-loop on each
candidate, and keeping the M candidates with the highest mean final-step
reward. Demonstrations come from a scripted expert that searches over
smooth (knot-interpolated) action schedules on a reference cloth and is
accepted only when the replayed schedule achieves task success.
"""

from dataclasses import dataclass, fields

import numpy as np

from .cloth import ClothParams, NumericError, ParameterError
from .env import EpisodeConfig, FoldEnv, Goal, nominal_goal, rollout_actions

FLOAT_FIELDS = ("side_length", "mass_per_point", "k_struct", "k_shear",
                "k_bend", "damping", "air_drag")

# Designated cloth for demonstration generation: a small, fast grid at the
# stiff end of the stable sampling region, validated against random-action
# blow-up at the environment step size.
REFERENCE_CLOTH = ClothParams(grid_n=5, side_length=0.1, mass_per_point=0.002,
                              k_struct=12.0, k_shear=6.0, k_bend=1.2,
                              damping=0.002, air_drag=0.0002)


class ExpertError(RuntimeError):
    """Raised when the scripted expert cannot reach success on the reference cloth."""


class IdentificationError(RuntimeError):
    """Raised when the top-M pool cannot be built."""


@dataclass(frozen=True)
class ParamRanges:
    """Per-field (low, high) sampling ranges for ClothParams.

    Defaults bracket the reference cloth while keeping every draw inside
    the integrator's stable region at a 10 ms step (stiffness-to-mass
    ratio bounded, damping well under the explicit limit), so sampled
    fabrics never blow up under arbitrary in-range actions.
    """

    grid_n: tuple = (5, 5)
    side_length: tuple = (0.08, 0.12)
    mass_per_point: tuple = (0.002, 0.004)
    k_struct: tuple = (6.0, 12.0)
    k_shear: tuple = (3.0, 6.0)
    k_bend: tuple = (0.6, 1.2)
    damping: tuple = (0.001, 0.008)
    air_drag: tuple = (0.0001, 0.001)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if lo > hi:
                raise ParameterError(f"{f.name} range is inverted: ({lo}, {hi})")
        if self.grid_n[0] < 3 or int(self.grid_n[0]) != self.grid_n[0] \
                or int(self.grid_n[1]) != self.grid_n[1]:
            raise ParameterError(f"grid_n range must be integers >= 3, got {self.grid_n}")
        for name in FLOAT_FIELDS:
            lo, _ = getattr(self, name)
            floor = 0.0 if name == "air_drag" else 1e-12
            if lo < floor:
                raise ParameterError(f"{name} range must stay positive, got low={lo}")


@dataclass
class Demonstration:
    """An expert action schedule with the goal it was produced for."""

    actions: np.ndarray       # (T, 3) in [-1, 1]
    goal: Goal
    annotation: str = ""

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=float)
        if self.actions.ndim != 2 or self.actions.shape[1] != 3 or len(self.actions) == 0:
            raise ParameterError(f"actions must be a non-empty (T, 3) array, got {self.actions.shape}")
        if len(self.actions) > 25:
            raise ParameterError(f"demonstrations are capped at 25 steps, got {len(self.actions)}")
        if not np.all(np.isfinite(self.actions)) or np.any(np.abs(self.actions) > 1.0):
            raise ParameterError("actions must be finite and within [-1, 1]")


@dataclass
class FabricPool:
    """The top-M cloth parameter sets with their demonstration scores."""

    entries: list           # list[ClothParams], descending score
    scores: list            # list[float]
    seed: int | None = None

    def __post_init__(self):
        if len(self.entries) != len(self.scores):
            raise ParameterError("entries and scores must have equal length")
        if any(self.scores[i] < self.scores[i + 1] for i in range(len(self.scores) - 1)):
            raise ParameterError("pool scores must be in descending order")

    def __len__(self) -> int:
        return len(self.entries)


def sample_cloth_params(rng: np.random.Generator, ranges: ParamRanges) -> ClothParams:
    """One uniform draw per field, in fixed field order."""
    lo, hi = ranges.grid_n
    grid_n = int(lo) if lo == hi else int(rng.integers(int(lo), int(hi) + 1))
    values = {}
    for name in FLOAT_FIELDS:
        f_lo, f_hi = getattr(ranges, name)
        values[name] = float(rng.uniform(f_lo, f_hi))
    return ClothParams(grid_n=grid_n, **values)


def _knot_actions(theta: np.ndarray, knots: np.ndarray, steps: int) -> np.ndarray:
    """Piecewise-linear action schedule through per-axis knot values."""
    theta = theta.reshape(3, len(knots))
    actions = np.empty((steps, 3))
    t = np.arange(steps)
    for axis in range(3):
        actions[:, axis] = np.interp(t, knots, theta[axis])
    return np.clip(actions, -1.0, 1.0)


def _final_result(candidate: ClothParams, actions: np.ndarray, goal: Goal,
                  config: EpisodeConfig):
    env = FoldEnv([candidate], config=config, render_images=False, seed=0)
    with np.errstate(over="ignore", invalid="ignore"):
        return rollout_actions(env, actions, goal=goal)[-1]


def scripted_expert(reference_cloth: ClothParams, goal: Goal | None = None,
                    config: EpisodeConfig | None = None, seed: int = 0,
                    population: int = 64, elites: int = 8,
                    generations: int = 30, stop_margin: float = 1.5,
                    annotation: str = "") -> Demonstration:
    """Search for a successful fold schedule on the reference cloth.

    The schedule is a smooth arc through action-space waypoints, seeded to
    carry the grasped corner toward its goal and refined by iterative elite
    reselection. Accepted only if the replayed schedule ends the episode
    with both corners inside delta.
    """
    config = config if config is not None else EpisodeConfig()
    if goal is None:
        goal = nominal_goal(reference_cloth)
    rng = np.random.Generator(np.random.PCG64(seed))
    steps = config.max_steps
    knots = np.unique(np.clip(np.round(np.linspace(0, steps - 1, 6)), 0, steps - 1)).astype(int)

    env_probe = FoldEnv([reference_cloth], config=config, render_images=False, seed=0)
    env_probe.reset(goal=goal)
    carry = goal.g1 - env_probe.effector_position
    norm = np.linalg.norm(carry)
    carry = carry / norm if norm > 1e-9 else np.zeros(3)
    mean = np.zeros((3, len(knots)))
    mean[:, :4] = carry[:, None]
    mean = mean.ravel()
    sigma = np.full(mean.shape, 0.5)

    best_score = -np.inf
    best_actions = None
    best_success = False
    for _ in range(generations):
        cand = np.clip(rng.normal(mean, sigma, size=(population, mean.size)), -1, 1)
        scored = []
        for theta in cand:
            actions = _knot_actions(theta, knots, steps)
            try:
                last = _final_result(reference_cloth, actions, goal, config)
            except NumericError:
                scored.append((-100.0, theta))
                continue
            success = bool(last.info["success"])
            score = (10.0 if success else 0.0) - last.info["d_sum"]
            scored.append((score, theta))
            if score > best_score:
                best_score, best_actions, best_success = score, actions, success
        scored.sort(key=lambda s: s[0], reverse=True)
        elite = np.stack([s[1] for s in scored[:elites]])
        mean = elite.mean(axis=0)
        sigma = elite.std(axis=0) + 0.02
        if best_score >= 10.0 - stop_margin * config.delta:
            break

    if not best_success:
        raise ExpertError(
            f"no successful schedule found in {generations} generations "
            f"(best score {best_score:.3f})")
    return Demonstration(actions=best_actions, goal=goal, annotation=annotation)


def evaluate_candidate(candidate: ClothParams, demos: list,
                       config: EpisodeConfig | None = None) -> float:
    """Mean final-step reward of all demos replayed open-loop on the candidate."""
    if not demos:
        raise ParameterError("demos must be non-empty")
    config = config if config is not None else EpisodeConfig()
    rewards = []
    for demo in demos:
        try:
            last = _final_result(candidate, demo.actions, demo.goal, config)
            rewards.append(last.reward)
        except NumericError:
            rewards.append(-1.0)
    return float(np.mean(rewards))


def identify_top_m(rng: np.random.Generator, ranges: ParamRanges, demos: list,
                   n_candidates: int = 200, m: int = 20,
                   include: tuple = (), config: EpisodeConfig | None = None,
                   seed_note: int | None = None) -> FabricPool:
    """Sample candidates, score them on the demos, keep the M best.

    Ties break by sampling order (earlier candidate wins); `include` seeds
    the candidate list (counted toward n_candidates) so a known reference
    cloth can compete.
    """
    if n_candidates < m:
        raise IdentificationError(f"n_candidates={n_candidates} is below m={m}")
    if len(include) > n_candidates:
        raise IdentificationError("more included candidates than n_candidates")
    candidates = list(include)
    while len(candidates) < n_candidates:
        candidates.append(sample_cloth_params(rng, ranges))

    scores = [evaluate_candidate(c, demos, config) for c in candidates]
    finite = [i for i, s in enumerate(scores) if np.isfinite(s)]
    if len(finite) < m:
        bad = [i for i, s in enumerate(scores) if not np.isfinite(s)]
        raise IdentificationError(
            f"only {len(finite)} of {len(candidates)} candidates scored "
            f"finitely (need {m}); non-finite: {bad}")
    order = sorted(finite, key=lambda i: (-scores[i], i))[:m]
    return FabricPool(entries=[candidates[i] for i in order],
                      scores=[scores[i] for i in order], seed=seed_note)


def save_pool(pool: FabricPool, path) -> None:
    """Write a pool as flat text, one `key = repr(value)` line per field."""
    lines = ["# fabric pool v1"]
    if pool.seed is not None:
        lines.append(f"seed = {pool.seed}")
    lines.append(f"count = {len(pool)}")
    for i, (params, score) in enumerate(zip(pool.entries, pool.scores)):
        lines.append(f"[fabric {i}]")
        lines.append(f"score = {score!r}")
        lines.append(f"grid_n = {params.grid_n}")
        for name in FLOAT_FIELDS:
            lines.append(f"{name} = {getattr(params, name)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pool(path) -> FabricPool:
    """Read a pool file written by save_pool (exact float round trip)."""
    entries = []
    scores = []
    seed = None
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[fabric"):
                if current is not None:
                    entries.append(ClothParams(**current["params"]))
                    scores.append(current["score"])
                current = {"params": {}, "score": None}
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if current is None:
                if key == "seed":
                    seed = int(value)
                continue
            if key == "score":
                current["score"] = float(value)
            elif key == "grid_n":
                current["params"]["grid_n"] = int(value)
            else:
                current["params"][key] = float(value)
    if current is not None:
        entries.append(ClothParams(**current["params"]))
        scores.append(current["score"])
    return FabricPool(entries=entries, scores=scores, seed=seed)


def save_demonstration(demo: Demonstration, path) -> None:
    """Write a demonstration as flat text: goal, annotation, one action per line."""
    lines = ["# demonstration v1",
             "annotation = " + " ".join(demo.annotation.split()),
             "goal = " + " ".join(repr(float(v)) for v in demo.goal.as_vector()),
             f"steps = {len(demo.actions)}"]
    for action in demo.actions:
        lines.append(" ".join(repr(float(v)) for v in action))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_demonstration(path) -> Demonstration:
    """Read a demonstration file written by save_demonstration."""
    annotation = ""
    goal = None
    actions = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("annotation ="):
                annotation = line.partition("=")[2].strip()
            elif line.startswith("goal ="):
                goal = Goal.from_vector([float(v) for v in line.partition("=")[2].split()])
            elif line.startswith("steps ="):
                continue
            else:
                actions.append([float(v) for v in line.split()])
    if goal is None or not actions:
        raise ParameterError(f"malformed demonstration file: {path}")
    return Demonstration(actions=np.array(actions), goal=goal, annotation=annotation)
