"""Line-delimited trajectory logs: one named-field record per policy step.

A log starts with a header block (seed, success threshold, goal), then one
line per step with fixed field names:

    step=0 action=... effector=... tracked=... reward=... d0=... d1=... done=0

Vector fields are comma-separated floats written with repr, so a parsed
log reproduces the logged doubles exactly. tracked holds the 8 tracked
cloth points (24 numbers), the first two of which are the moving corners.
"""

from dataclasses import dataclass

import numpy as np

from .cloth import ParameterError
from .env import corner_metrics

TRAJ_HEADER = "# trajectory log v1"
RECORD_FIELDS = ("step", "action", "effector", "tracked",
                 "reward", "d0", "d1", "done")


class TrajectoryError(RuntimeError):
    """Raised when a trajectory log cannot be parsed; names the line."""


@dataclass(frozen=True)
class TrajectoryRecord:
    """One policy step: command, effector, tracked points, and metrics."""

    step: int
    action: np.ndarray     # (3,)
    effector: np.ndarray   # (3,)
    tracked: np.ndarray    # (8, 3)
    reward: float
    d0: float
    d1: float
    done: bool

    def __post_init__(self):
        for name, shape in (("action", (3,)), ("effector", (3,)),
                            ("tracked", (8, 3))):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != shape:
                raise ParameterError(f"{name} must have shape {shape}, "
                                     f"got {value.shape}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class TrajectoryLog:
    """A whole logged episode plus the context needed to interpret it."""

    seed: int
    delta: float
    goal: np.ndarray       # (6,)
    records: tuple

    def __post_init__(self):
        goal = np.asarray(self.goal, dtype=float)
        if goal.shape != (6,):
            raise ParameterError(f"goal must have shape (6,), got {goal.shape}")
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "records", tuple(self.records))

    def d_sum_trace(self) -> list:
        """Corner distance sums recomputed from the logged tracked points."""
        out = []
        for record in self.records:
            _, _, d_sum, _ = corner_metrics(record.tracked[0], record.tracked[1],
                                            self.goal[:3], self.goal[3:],
                                            self.delta)
            out.append(d_sum)
        return out


def _vector(values) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(values).ravel())


def format_record(record: TrajectoryRecord) -> str:
    return (f"step={record.step} action={_vector(record.action)} "
            f"effector={_vector(record.effector)} "
            f"tracked={_vector(record.tracked)} reward={record.reward!r} "
            f"d0={record.d0!r} d1={record.d1!r} done={int(record.done)}")


def save_trajectory(log: TrajectoryLog, path) -> None:
    lines = [TRAJ_HEADER,
             f"seed = {log.seed}",
             f"delta = {log.delta!r}",
             "goal = " + " ".join(repr(float(v)) for v in log.goal),
             f"steps = {len(log.records)}"]
    lines.extend(format_record(record) for record in log.records)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_record(line: str, lineno: int) -> TrajectoryRecord:
    values = {}
    for token in line.split():
        name, eq, raw = token.partition("=")
        if not eq or name not in RECORD_FIELDS:
            raise TrajectoryError(f"line {lineno}: bad field {token!r}")
        if name in values:
            raise TrajectoryError(f"line {lineno}: duplicate field {name!r}")
        values[name] = raw
    missing = [name for name in RECORD_FIELDS if name not in values]
    if missing:
        raise TrajectoryError(f"line {lineno}: missing fields {missing}")
    try:
        tracked = np.array([float(v) for v in values["tracked"].split(",")])
        return TrajectoryRecord(
            step=int(values["step"]),
            action=np.array([float(v) for v in values["action"].split(",")]),
            effector=np.array([float(v) for v in values["effector"].split(",")]),
            tracked=tracked.reshape(8, 3),
            reward=float(values["reward"]), d0=float(values["d0"]),
            d1=float(values["d1"]), done=bool(int(values["done"])))
    except (ValueError, ParameterError) as err:
        raise TrajectoryError(f"line {lineno}: {err}") from err


def load_trajectory(path) -> TrajectoryLog:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != TRAJ_HEADER:
        raise TrajectoryError(f"not a trajectory log: {path}")
    meta, records = {}, []
    declared = None
    for lineno, line in enumerate(lines[1:], 2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith(("seed ", "delta ", "goal ", "steps ")) and "=" in line:
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            try:
                if key == "seed":
                    meta["seed"] = int(value)
                elif key == "delta":
                    meta["delta"] = float(value)
                elif key == "goal":
                    meta["goal"] = np.array([float(v) for v in value.split()])
                elif key == "steps":
                    declared = int(value)
            except ValueError as err:
                raise TrajectoryError(f"line {lineno}: {err}") from err
        else:
            records.append(_parse_record(line, lineno))
    for key in ("seed", "delta", "goal"):
        if key not in meta:
            raise TrajectoryError(f"missing header field {key!r} in {path}")
    if declared is not None and declared != len(records):
        raise TrajectoryError(f"log declares {declared} steps "
                              f"but has {len(records)}")
    try:
        return TrajectoryLog(seed=meta["seed"], delta=meta["delta"],
                             goal=meta["goal"], records=tuple(records))
    except ParameterError as err:
        raise TrajectoryError(str(err)) from err


def log_episode(env, act_fn, seed: int, goal=None) -> TrajectoryLog:
    """Roll one episode and capture a trajectory log of it."""
    result = env.reset(goal=goal)
    records = []
    while env.active:
        action = np.asarray(act_fn(result.observation), dtype=float)
        result = env.step(action)
        info = result.info
        records.append(TrajectoryRecord(
            step=int(info["step"]), action=action,
            effector=env.effector_position,
            tracked=result.full_state[:24].reshape(8, 3),
            reward=result.reward, d0=float(info["d0"]), d1=float(info["d1"]),
            done=bool(result.done)))
    return TrajectoryLog(seed=seed, delta=env.config.delta,
                         goal=env.goal.as_vector(), records=tuple(records))
