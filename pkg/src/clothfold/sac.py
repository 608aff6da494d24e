"""Soft actor-critic training: updates, demo injection, train loop, checkpoints.

Actors are image-based in the two visual modes and state-based in the
single-cloth baseline; critics always consume privileged tracked-point
state. Episodes enter the buffer with hindsight-relabeled copies, and every
tenth agent episode a stored demonstration episode is injected with fresh
action noise.
"""

import copy
import io
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .cloth import NumericError, ParameterError
from .env import achieved_goal
from .nets import QNet, StatePolicy, VisualPolicy, select_action, squashed_gaussian
from .replay import (ReplayBuffer, Transition, her_relabel, noised_demo_copy,
                     stack_batch)

logger = logging.getLogger("clothfold")

MODES = ("ours", "ours-minus", "fixed")
CHECKPOINT_MAGIC = b"CFLD"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when an update produces non-finite losses."""


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.99
    lr: float = 3e-4
    batch_size: int = 256
    polyak: float = 0.005
    entropy_target: float = -3.0
    her_k: int = 4
    demo_every: int = 10          # one demo episode per this many agent episodes
    demo_noise: float = 0.05      # sigma on stored demo actions
    aux_weight: float = 0.1
    buffer_capacity: int = 10 ** 6
    hidden_dim: int = 256
    latent_dim: int = 128
    conv_channels: tuple = (8, 16, 32)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ParameterError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.polyak <= 1.0:
            raise ParameterError(f"polyak must be in [0, 1], got {self.polyak}")
        if self.lr <= 0 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ParameterError("lr, batch_size, buffer_capacity must be positive")
        if self.her_k < 0 or self.demo_every < 0 or self.demo_noise < 0 \
                or self.aux_weight < 0:
            raise ParameterError("her_k, demo_every, demo_noise, aux_weight "
                                 "must be non-negative")


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 100
    cycles: int = 20
    env_steps: int = 1000
    gradient_steps: int = 1000
    eval_episodes: int = 20

    def __post_init__(self):
        if min(self.epochs, self.cycles, self.eval_episodes) < 1 \
                or min(self.env_steps, self.gradient_steps) < 0:
            raise ParameterError(f"invalid schedule {self}")


def batch_to_tensors(batch: dict, visual: bool, dtype=torch.float32) -> dict:
    """Torch columns for one update; actor observations matched to actor kind."""

    def t(x):
        return torch.as_tensor(x, dtype=dtype)

    state = t(batch["full_state"][:, :48])
    next_state = t(batch["next_full_state"][:, :48])
    goal = t(batch["goal"])
    prev_action = t(batch["prev_action"])
    action = t(batch["action"])
    out = {
        "state": state, "next_state": next_state, "goal": goal,
        "action": action,
        "reward": t(batch["reward"]), "done": t(batch["done"]),
        "uv_labels": None if batch["uv_labels"] is None else t(batch["uv_labels"]),
    }
    if visual:
        if batch["image"] is None:
            raise ParameterError("visual update needs image columns in the batch")
        image = t(batch["image"]).unsqueeze(1) / 255.0
        next_image = t(batch["next_image"]).unsqueeze(1) / 255.0
        out["actor_obs"] = (image, prev_action, goal)
        out["next_actor_obs"] = (next_image, action, goal)
    else:
        out["actor_obs"] = (state, prev_action, goal)
        out["next_actor_obs"] = (next_state, action, goal)
    return out


def sac_losses(actor, q1, q2, q1_target, q2_target, log_alpha, tensors: dict,
               gamma: float, entropy_target: float, aux_weight: float) -> dict:
    """All loss terms for one batch, as differentiable scalars.

    Critic targets use the clipped double-Q value of a fresh next action
    minus the entropy term; the done column masks bootstrapping (success
    endings only, see stack_batch). Targets are clamped to the value range
    the reward law allows, which keeps critic overestimation from
    compounding through the bootstrap. The auxiliary corner error joins
    the actor loss with its configured weight.
    """
    state, goal, action = tensors["state"], tensors["goal"], tensors["action"]
    alpha = log_alpha.exp().detach()

    with torch.no_grad():
        n_mean, n_log_std, _ = actor(*tensors["next_actor_obs"])
        next_action, next_logp = squashed_gaussian(n_mean, n_log_std)
        target_q = torch.min(
            q1_target(tensors["next_state"], goal, next_action),
            q2_target(tensors["next_state"], goal, next_action)) - alpha * next_logp
        y = tensors["reward"] + gamma * (1.0 - tensors["done"]) * target_q
        if not torch.isfinite(y).all():
            raise TrainingError("non-finite critic target")
        bound = 1.0 / max(1.0 - gamma, 1e-6)
        y = y.clamp(-bound, bound)

    critic1 = ((q1(state, goal, action) - y) ** 2).mean()
    critic2 = ((q2(state, goal, action) - y) ** 2).mean()

    mean, log_std, corners = actor(*tensors["actor_obs"])
    new_action, logp = squashed_gaussian(mean, log_std)
    q_new = torch.min(q1(state, goal, new_action), q2(state, goal, new_action))
    actor_core = (alpha * logp - q_new).mean()
    if corners is not None and tensors["uv_labels"] is not None and aux_weight > 0:
        aux = ((corners - tensors["uv_labels"]) ** 2).mean()
        actor_total = actor_core + aux_weight * aux
    else:
        aux = torch.zeros((), dtype=actor_core.dtype)
        actor_total = actor_core
    alpha_loss = -(log_alpha * (logp + entropy_target).detach()).mean()

    return {"critic1": critic1, "critic2": critic2, "actor": actor_total,
            "actor_core": actor_core, "aux": aux, "alpha": alpha_loss,
            "entropy": -logp.detach().mean()}


def polyak_update(target: torch.nn.Module, online: torch.nn.Module, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, in place."""
    with torch.no_grad():
        for tp, p in zip(target.parameters(), online.parameters()):
            tp.mul_(1.0 - tau).add_(p, alpha=tau)


class SACAgent:
    """Actor, twin critics with targets, temperature, and their optimizers."""

    def __init__(self, mode: str, config: LearnerConfig | None = None,
                 image_size: int = 100, seed: int = 0, dtype=torch.float32):
        if mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.config = config if config is not None else LearnerConfig()
        self.image_size = image_size
        self.dtype = dtype
        cfg = self.config
        torch.manual_seed(seed)
        if self.visual:
            self.actor = VisualPolicy(image_size=image_size,
                                      conv_channels=cfg.conv_channels,
                                      latent_dim=cfg.latent_dim,
                                      hidden_dim=cfg.hidden_dim, dtype=dtype)
        else:
            self.actor = StatePolicy(hidden_dim=cfg.hidden_dim, dtype=dtype)
        self.q1 = QNet(hidden_dim=cfg.hidden_dim, dtype=dtype)
        self.q2 = QNet(hidden_dim=cfg.hidden_dim, dtype=dtype)
        self.q1_target = copy.deepcopy(self.q1).requires_grad_(False)
        self.q2_target = copy.deepcopy(self.q2).requires_grad_(False)
        self.log_alpha = torch.zeros(1, dtype=dtype, requires_grad=True)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=cfg.lr)
        self.critic_opt = torch.optim.Adam(
            list(self.q1.parameters()) + list(self.q2.parameters()), lr=cfg.lr)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=cfg.lr)

    @property
    def visual(self) -> bool:
        return self.mode in ("ours", "ours-minus")

    def act(self, observation, deterministic: bool = False):
        """(action (3,), corner predictions (16,) or None) for one observation."""
        return select_action(self.actor, observation, deterministic)

    def update(self, batch: dict) -> dict:
        """One gradient step on critics, actor, and temperature; Polyak targets."""
        tensors = batch_to_tensors(batch, self.visual, self.dtype)
        losses = sac_losses(self.actor, self.q1, self.q2, self.q1_target,
                            self.q2_target, self.log_alpha, tensors,
                            self.config.gamma, self.config.entropy_target,
                            self.config.aux_weight)
        report = {k: float(v.detach()) for k, v in losses.items()}
        if not all(np.isfinite(v) for v in report.values()):
            raise TrainingError(f"non-finite losses: {report}")
        # Actor first: its loss graph runs through the live critics, so the
        # critic step must not mutate those weights before this backward.
        self.actor_opt.zero_grad()
        losses["actor"].backward()
        self.actor_opt.step()
        self.critic_opt.zero_grad()
        (losses["critic1"] + losses["critic2"]).backward()
        self.critic_opt.step()
        self.alpha_opt.zero_grad()
        losses["alpha"].backward()
        self.alpha_opt.step()
        polyak_update(self.q1_target, self.q1, self.config.polyak)
        polyak_update(self.q2_target, self.q2, self.config.polyak)
        return report

    def tensor_dict(self) -> dict:
        """All learnable tensors under stable names, for checkpointing."""
        out = {}
        for prefix, module in (("actor", self.actor), ("q1", self.q1),
                               ("q2", self.q2), ("q1_target", self.q1_target),
                               ("q2_target", self.q2_target)):
            for name, tensor in module.state_dict().items():
                out[f"{prefix}.{name}"] = tensor
        out["log_alpha"] = self.log_alpha.detach()
        return out

    def load_tensor_dict(self, tensors: dict) -> None:
        own = self.tensor_dict()
        if set(own) != set(tensors):
            missing = set(own) ^ set(tensors)
            raise ParameterError(f"checkpoint does not match this agent: {sorted(missing)}")
        with torch.no_grad():
            for prefix, module in (("actor", self.actor), ("q1", self.q1),
                                   ("q2", self.q2), ("q1_target", self.q1_target),
                                   ("q2_target", self.q2_target)):
                state = {name.split(".", 1)[1]: torch.as_tensor(arr, dtype=self.dtype)
                         for name, arr in tensors.items()
                         if name.startswith(prefix + ".")}
                try:
                    module.load_state_dict(state)
                except RuntimeError as err:
                    raise ParameterError(f"checkpoint shapes do not match "
                                         f"this agent: {err}") from err
            self.log_alpha.copy_(torch.as_tensor(tensors["log_alpha"],
                                                 dtype=self.dtype).reshape(1))


def collect_episode(env, act_fn, goal=None, max_actions=None) -> tuple:
    """Roll one episode, returning (transitions, final info).

    act_fn maps an Observation to an action; max_actions truncates the
    rollout early (used when replaying stored demonstrations).
    """
    result = env.reset(goal=goal)
    transitions = []
    while env.active:
        if max_actions is not None and len(transitions) >= max_actions:
            break
        obs = result.observation
        action = np.asarray(act_fn(obs), dtype=float).copy()
        if not np.all(np.isfinite(action)):
            raise NumericError("policy produced a non-finite action")
        nxt = env.step(action)
        labels = result.info.get("corner_uv")
        transitions.append(Transition(
            full_state=result.full_state, image=obs.image,
            prev_action=obs.prev_action.copy(), action=action,
            reward=nxt.reward, next_full_state=nxt.full_state,
            next_image=nxt.observation.image, goal=obs.goal.copy(),
            achieved_goal=achieved_goal(nxt.full_state),
            uv_labels=None if labels is None else labels.copy(),
            terminal=bool(nxt.done),
            demo=False))
        result = nxt
    return transitions, result.info


class DemoStore:
    """Pre-rolled demonstration episodes, drawn with fresh action noise."""

    def __init__(self, episodes: list, sigma: float):
        if not episodes or any(not ep for ep in episodes):
            raise ParameterError("demo store needs non-empty episodes")
        self.episodes = episodes
        self.sigma = sigma

    def draw(self, rng: np.random.Generator) -> list:
        episode = self.episodes[int(rng.integers(len(self.episodes)))]
        return noised_demo_copy(episode, self.sigma, rng)


def build_demo_store(demo_env, demos: list, sigma: float) -> DemoStore:
    """Replay demonstrations on their source cloth and store the transitions."""
    episodes = []
    for demo in demos:
        actions = iter(demo.actions)
        episode, _ = collect_episode(demo_env, lambda obs: next(actions),
                                     goal=demo.goal, max_actions=len(demo.actions))
        episodes.append(episode)
    return DemoStore(episodes, sigma)


def evaluate(env, act_fn, episodes: int) -> list:
    """Per-episode end metrics for a fixed policy: d0, d1, d_sum, success, steps."""
    rows = []
    for _ in range(episodes):
        _, info = collect_episode(env, act_fn)
        rows.append({"d0": info["d0"], "d1": info["d1"], "d_sum": info["d_sum"],
                     "success": bool(info["success"]), "steps": info["step"]})
    return rows


def train_loop(env, agent: SACAgent, schedule: TrainSchedule,
               rng: np.random.Generator, demo_store: DemoStore | None = None,
               buffer: ReplayBuffer | None = None, start_epoch: int = 0,
               on_epoch=None) -> list:
    """Cycles of collection and optimization, with an evaluation per epoch.

    Each cycle rolls whole episodes until its environment-step quota is met,
    ingesting every episode with hindsight relabels (and a noised demo
    episode, relabeled the same way, after every demo_every-th agent
    episode), then takes the configured number of gradient steps. Episodes
    that blow up numerically are discarded and logged. Returns one metrics
    row per epoch.
    """
    cfg = agent.config
    if buffer is None:
        buffer = ReplayBuffer(cfg.buffer_capacity)
    delta = env.config.delta
    episodes_seen = 0
    rows = []
    for epoch in range(start_epoch, start_epoch + schedule.epochs):
        loss_acc: dict = {}
        updates = 0
        for _ in range(schedule.cycles):
            steps = 0
            failures = 0
            while steps < schedule.env_steps:
                try:
                    episode, _ = collect_episode(
                        env, lambda obs: agent.act(obs)[0])
                except NumericError as err:
                    logger.warning("episode discarded after numeric failure: %s", err)
                    failures += 1
                    if failures > 20:
                        raise TrainingError(
                            "more than 20 consecutive episodes discarded; "
                            "environment appears unstable") from err
                    continue
                failures = 0
                steps += len(episode)
                buffer.add_many(episode)
                if cfg.her_k > 0:
                    buffer.add_many(her_relabel(episode, cfg.her_k, rng, delta))
                episodes_seen += 1
                if (demo_store is not None and cfg.demo_every > 0
                        and episodes_seen % cfg.demo_every == 0):
                    demo_episode = demo_store.draw(rng)
                    buffer.add_many(demo_episode)
                    if cfg.her_k > 0:
                        buffer.add_many(her_relabel(demo_episode, cfg.her_k,
                                                    rng, delta))
            for _ in range(schedule.gradient_steps):
                batch = buffer.sample(cfg.batch_size, rng)
                if batch is None:
                    break
                report = agent.update(stack_batch(batch))
                updates += 1
                for key, value in report.items():
                    loss_acc[key] = loss_acc.get(key, 0.0) + value
        eval_rows = evaluate(env, lambda obs: agent.act(obs, deterministic=True)[0],
                             schedule.eval_episodes)
        row = {
            "epoch": epoch,
            "success_rate": float(np.mean([r["success"] for r in eval_rows])),
            "mean_d_sum": float(np.mean([r["d_sum"] for r in eval_rows])),
            "updates": updates,
        }
        for key in ("critic1", "critic2", "actor", "aux", "alpha", "entropy"):
            row[f"{key}_loss" if key != "entropy" else key] = (
                loss_acc.get(key, float("nan")) / updates if updates else float("nan"))
        rows.append(row)
        if on_epoch is not None:
            on_epoch(epoch, row)
    return rows


def _write_tensor(fh, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
    fh.write(array.astype("<f4").tobytes())


def save_checkpoint(agent: SACAgent, path, epoch: int = 0) -> None:
    """Versioned binary dump: magic, mode, epoch, then a named-tensor manifest."""
    tensors = {name: t.detach().cpu().numpy() for name, t in agent.tensor_dict().items()}
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    mode = agent.mode.encode("utf-8")
    buf.write(struct.pack("<I", len(mode)))
    buf.write(mode)
    buf.write(struct.pack("<I", epoch))
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        _write_tensor(buf, name, tensors[name])
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class CheckpointError(RuntimeError):
    """Raised for unreadable or mismatched checkpoint files."""


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def read_checkpoint(path) -> tuple:
    """(mode, epoch, {name: float32 array}) from a checkpoint file."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"not a checkpoint file: {path}")
        version = struct.unpack("<I", _read_exact(fh, 4))[0]
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        mode_len = struct.unpack("<I", _read_exact(fh, 4))[0]
        mode = _read_exact(fh, mode_len).decode("utf-8")
        epoch = struct.unpack("<I", _read_exact(fh, 4))[0]
        count = struct.unpack("<I", _read_exact(fh, 4))[0]
        tensors = {}
        for _ in range(count):
            name_len = struct.unpack("<I", _read_exact(fh, 4))[0]
            name = _read_exact(fh, name_len).decode("utf-8")
            ndim = struct.unpack("<I", _read_exact(fh, 4))[0]
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, 4 * size), dtype="<f4")
            tensors[name] = data.reshape(shape).copy()
    return mode, epoch, tensors


def load_checkpoint(path, agent: SACAgent) -> int:
    """Restore agent weights from a checkpoint; returns its epoch number."""
    mode, epoch, tensors = read_checkpoint(path)
    if mode != agent.mode:
        raise CheckpointError(f"checkpoint mode {mode!r} does not match "
                              f"agent mode {agent.mode!r}")
    agent.load_tensor_dict(tensors)
    return epoch
