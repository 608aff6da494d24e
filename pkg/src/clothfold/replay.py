"""Transition storage: FIFO replay buffer, hindsight relabeling, demo copies."""

from dataclasses import dataclass, replace

import numpy as np

from .cloth import ParameterError
from .env import reward_from_goal_vectors


@dataclass
class Transition:
    """One environment step, stored with everything both actor kinds need.

    achieved_goal is the (p0, p1) pair after the step, so relabeling a
    transition with its own achieved_goal yields zero distances. terminal
    marks the episode's last transition, whatever ended it; the bootstrap
    mask is derived from it at batch time (see stack_batch). uv_labels are
    the rendered tracked-point coordinates for the observation's image.
    """

    full_state: np.ndarray          # (57,)
    image: np.ndarray | None        # (S, S) uint8, None when not rendering
    prev_action: np.ndarray         # (3,)
    action: np.ndarray              # (3,)
    reward: float
    next_full_state: np.ndarray     # (57,)
    next_image: np.ndarray | None
    goal: np.ndarray                # (6,)
    achieved_goal: np.ndarray       # (6,)
    uv_labels: np.ndarray | None    # (16,) in [0, 1]
    terminal: bool
    demo: bool = False


class ReplayBuffer:
    """Ring storage with exact capacity and first-in-first-out eviction."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ParameterError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._storage: list = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._storage)

    def add(self, transition: Transition) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(transition)
        else:
            self._storage[self._cursor] = transition
            self._cursor = (self._cursor + 1) % self.capacity

    def add_many(self, transitions) -> None:
        for tr in transitions:
            self.add(tr)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """batch_size uniform draws with replacement, or None while underfilled."""
        if len(self._storage) < batch_size:
            return None
        idx = rng.integers(0, len(self._storage), size=batch_size)
        return [self._storage[i] for i in idx]

    def snapshot(self) -> list:
        """Stored transitions, oldest first."""
        return self._storage[self._cursor:] + self._storage[:self._cursor]


def _with_goal(transition: Transition, goal: np.ndarray, reward: float) -> Transition:
    """Copy of a transition under a different goal, state vectors rewritten."""
    full = transition.full_state.copy()
    nxt = transition.next_full_state.copy()
    full[48:54] = goal
    nxt[48:54] = goal
    return replace(transition, full_state=full, next_full_state=nxt,
                   goal=goal.copy(), reward=reward)


def her_relabel(episode: list, k: int, rng: np.random.Generator,
                delta: float = 0.04) -> list:
    """k hindsight copies per transition, goals drawn from later achievements.

    Each copy replaces the goal with the achieved_goal of a uniformly chosen
    step from the transition's own step onward, and recomputes the reward
    from the stored achievement under that goal.
    """
    if not episode:
        raise ParameterError("episode must be non-empty")
    out = []
    for t, tr in enumerate(episode):
        for _ in range(k):
            future = int(rng.integers(t, len(episode)))
            goal = episode[future].achieved_goal.astype(float)
            reward = reward_from_goal_vectors(tr.achieved_goal, goal, delta)
            out.append(_with_goal(tr, goal, reward))
    return out


def noised_demo_copy(episode: list, sigma: float, rng: np.random.Generator) -> list:
    """Demo-flagged copy with Gaussian noise added to the stored actions only.

    Noise is applied once, here; downstream states are left as recorded, and
    noised actions are clipped back into [-1, 1].
    """
    out = []
    for tr in episode:
        action = tr.action.astype(float)
        if sigma > 0.0:
            action = np.clip(action + rng.normal(0.0, sigma, size=3), -1.0, 1.0)
        out.append(replace(tr, action=action, demo=True))
    return out


def stack_batch(transitions: list) -> dict:
    """Column arrays for one update step; image columns are None in state mode.

    The done column masks bootstrapping, and only ending the episode in
    success (r >= 0 exactly when both corners are inside delta) is absorbing.
    A failed ending is a truncation: its value still chains into the state
    the cloth was left in, so stopping early is never worth more than
    finishing the fold.
    """
    batch = {
        "full_state": np.stack([t.full_state for t in transitions]),
        "next_full_state": np.stack([t.next_full_state for t in transitions]),
        "prev_action": np.stack([t.prev_action for t in transitions]),
        "action": np.stack([t.action for t in transitions]),
        "reward": np.array([t.reward for t in transitions], dtype=float),
        "goal": np.stack([t.goal for t in transitions]),
        "achieved_goal": np.stack([t.achieved_goal for t in transitions]),
        "demo": np.array([t.demo for t in transitions], dtype=bool),
    }
    batch["done"] = np.array(
        [t.terminal and t.reward >= 0.0 for t in transitions], dtype=float)
    if all(t.image is not None for t in transitions):
        batch["image"] = np.stack([t.image for t in transitions])
        batch["next_image"] = np.stack([t.next_image for t in transitions])
    else:
        batch["image"] = None
        batch["next_image"] = None
    if all(t.uv_labels is not None for t in transitions):
        batch["uv_labels"] = np.stack([t.uv_labels for t in transitions])
    else:
        batch["uv_labels"] = None
    return batch
