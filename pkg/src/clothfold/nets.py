"""Policy and value networks: image actor, state actor, and twin critics.

The image actor is three mappings: a convolutional encoder producing a
latent code, an action head on (latent, previous action, goal) giving a
squashed-Gaussian distribution, and a corner head predicting the 8 tracked
cloth points as normalized (u, v) image coordinates. Critics consume
privileged simulator state (tracked positions/velocities, goal, action)
and never see images; image actors never see the tracked state.
"""

import math

import numpy as np
import torch
from torch import nn

from .cloth import ParameterError

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
UV_DIM = 16


def _mlp(in_dim: int, hidden_dim: int, out_dim: int, dtype) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, hidden_dim, dtype=dtype), nn.ReLU(),
        nn.Linear(hidden_dim, hidden_dim, dtype=dtype), nn.ReLU(),
        nn.Linear(hidden_dim, out_dim, dtype=dtype))


def _conv_out_size(image_size: int, n_layers: int) -> int:
    size = image_size
    for _ in range(n_layers):
        size = (size - 3) // 2 + 1
        if size < 1:
            raise ParameterError(f"image size {image_size} too small for "
                                 f"{n_layers} stride-2 conv layers")
    return size


class VisualPolicy(nn.Module):
    """Image actor: conv encoder, squashed-Gaussian action head, corner head."""

    def __init__(self, image_size: int = 100, conv_channels: tuple = (8, 16, 32),
                 latent_dim: int = 128, hidden_dim: int = 256,
                 action_dim: int = 3, goal_dim: int = 6, uv_dim: int = UV_DIM,
                 dtype=torch.float32):
        super().__init__()
        self.image_size = image_size
        self.action_dim = action_dim
        self.goal_dim = goal_dim
        self.uv_dim = uv_dim
        convs = []
        in_ch = 1
        for ch in conv_channels:
            convs.extend([nn.Conv2d(in_ch, ch, kernel_size=3, stride=2, dtype=dtype),
                          nn.ReLU()])
            in_ch = ch
        self.encoder = nn.Sequential(*convs)
        side = _conv_out_size(image_size, len(conv_channels))
        self.to_latent = nn.Sequential(
            nn.Flatten(), nn.Linear(conv_channels[-1] * side * side, latent_dim, dtype=dtype),
            nn.ReLU())
        self.action_trunk = nn.Sequential(
            nn.Linear(latent_dim + action_dim + goal_dim, hidden_dim, dtype=dtype), nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim, dtype=dtype), nn.ReLU())
        self.mean_head = nn.Linear(hidden_dim, action_dim, dtype=dtype)
        self.log_std_head = nn.Linear(hidden_dim, action_dim, dtype=dtype)
        self.corner_head = _mlp(latent_dim, hidden_dim, uv_dim, dtype)

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        """image: (B, 1, S, S) scaled to [0, 1]."""
        if image.ndim != 4 or image.shape[-1] != self.image_size:
            raise ParameterError(f"expected (B, 1, {self.image_size}, "
                                 f"{self.image_size}) image, got {tuple(image.shape)}")
        return self.to_latent(self.encoder(image))

    def forward(self, image, prev_action, goal):
        """Returns (action mean, log std, corner predictions in [0, 1])."""
        latent = self.encode(image)
        trunk = self.action_trunk(torch.cat([latent, prev_action, goal], dim=-1))
        corners = torch.sigmoid(self.corner_head(latent))
        return self.mean_head(trunk), self.log_std_head(trunk), corners


class StatePolicy(nn.Module):
    """State actor for the single-cloth baseline: tracked points, goal, previous action."""

    def __init__(self, state_dim: int = 48, goal_dim: int = 6, action_dim: int = 3,
                 hidden_dim: int = 256, dtype=torch.float32):
        super().__init__()
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.goal_dim = goal_dim
        self.trunk = nn.Sequential(
            nn.Linear(state_dim + action_dim + goal_dim, hidden_dim, dtype=dtype), nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim, dtype=dtype), nn.ReLU())
        self.mean_head = nn.Linear(hidden_dim, action_dim, dtype=dtype)
        self.log_std_head = nn.Linear(hidden_dim, action_dim, dtype=dtype)

    def forward(self, state, prev_action, goal):
        """Returns (action mean, log std, None): no corner predictions."""
        if state.shape[-1] != self.state_dim:
            raise ParameterError(f"expected {self.state_dim}-dim state, "
                                 f"got {state.shape[-1]}")
        trunk = self.trunk(torch.cat([state, prev_action, goal], dim=-1))
        return self.mean_head(trunk), self.log_std_head(trunk), None


class QNet(nn.Module):
    """Critic: (tracked positions/velocities, goal, action) to a scalar value."""

    def __init__(self, state_dim: int = 48, goal_dim: int = 6, action_dim: int = 3,
                 hidden_dim: int = 256, dtype=torch.float32):
        super().__init__()
        self.state_dim = state_dim
        self.net = _mlp(state_dim + goal_dim + action_dim, hidden_dim, 1, dtype)

    def forward(self, state, goal, action) -> torch.Tensor:
        if state.shape[-1] != self.state_dim:
            raise ParameterError(f"expected {self.state_dim}-dim state, "
                                 f"got {state.shape[-1]}")
        return self.net(torch.cat([state, goal, action], dim=-1)).squeeze(-1)


def squashed_gaussian(mean: torch.Tensor, log_std: torch.Tensor,
                      deterministic: bool = False):
    """Sample a tanh-squashed Gaussian action and its log probability.

    Deterministic mode returns tanh(mean). The log probability includes the
    tanh change-of-variables term in its numerically stable form.
    """
    log_std = torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = torch.exp(log_std)
    if deterministic:
        pre = mean
    else:
        pre = mean + std * torch.randn_like(mean)
    action = torch.tanh(pre)
    gauss_logp = (-0.5 * ((pre - mean) / std) ** 2 - log_std
                  - 0.5 * math.log(2.0 * math.pi)).sum(dim=-1)
    squash = (2.0 * (math.log(2.0) - pre - torch.nn.functional.softplus(-2.0 * pre))).sum(dim=-1)
    return action, gauss_logp - squash


def actor_inputs(policy: nn.Module, observation, dtype=torch.float32) -> tuple:
    """Tensors (batch of one) for a single env observation, matched to the actor kind."""
    prev = torch.as_tensor(np.asarray(observation.prev_action, dtype=np.float64),
                           dtype=dtype).reshape(1, -1)
    goal = torch.as_tensor(np.asarray(observation.goal, dtype=np.float64),
                           dtype=dtype).reshape(1, -1)
    if isinstance(policy, StatePolicy):
        state = torch.as_tensor(np.asarray(observation.state, dtype=np.float64),
                                dtype=dtype).reshape(1, -1)
        return state, prev, goal
    if observation.image is None:
        raise ParameterError("image actor needs a rendered observation")
    image = torch.as_tensor(np.asarray(observation.image, dtype=np.float64) / 255.0,
                            dtype=dtype).reshape(1, 1, *observation.image.shape)
    return image, prev, goal


def select_action(policy: nn.Module, observation, deterministic: bool = False):
    """One action from one observation: (action (3,), corner predictions (16,) or None)."""
    with torch.no_grad():
        mean, log_std, corners = policy(*actor_inputs(policy, observation))
        action, _ = squashed_gaussian(mean, log_std, deterministic)
    corners_np = None if corners is None else corners.squeeze(0).numpy().astype(float)
    return action.squeeze(0).numpy().astype(float), corners_np


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
