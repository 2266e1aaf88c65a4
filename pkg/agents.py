#!/usr/bin/env python3
"""
Value-learning agents for the transformation search.

Each of the three cascading agents (head feature, operator, tail feature)
is a small DQN with its own replay buffer and target network.
"""

import hashlib
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from config import SearchConfig
from errors import NoValidActionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer; oldest transitions are evicted first."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ValueError(f"Replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.transitions = deque(maxlen=capacity)
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.transitions)

    def push(self, transition: Transition) -> None:
        self.transitions.append(transition)

    def sample(self, batch_size: int) -> List[Transition]:
        """Uniform sample without replacement within the batch."""
        if batch_size > len(self.transitions):
            raise ValueError(f"Cannot sample {batch_size} from {len(self.transitions)} transitions")
        indices = self.rng.choice(len(self.transitions), size=batch_size, replace=False)
        return [self.transitions[i] for i in indices]


class QNetwork(nn.Module):
    def __init__(self, state_dim: int, n_actions: int, hidden_dim: int = 128):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Linear(state_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, n_actions),
        )

    def forward(self, state: torch.Tensor) -> torch.Tensor:
        return self.layers(state)


def _q_values(qnet: Union[nn.Module, Callable], state) -> np.ndarray:
    if isinstance(qnet, nn.Module):
        param = next(qnet.parameters())
        with torch.no_grad():
            out = qnet(torch.as_tensor(np.asarray(state), dtype=param.dtype))
    else:
        out = qnet(state)
    if isinstance(out, torch.Tensor):
        out = out.detach().cpu().numpy()
    return np.asarray(out, dtype=float).reshape(-1)


def select_action(qnet, state, epsilon: float, valid_mask: Sequence[bool],
                  rng: Optional[np.random.Generator] = None) -> int:
    """
    Epsilon-greedy over valid actions. With probability epsilon pick uniformly
    among valid actions, otherwise the valid action with the highest Q value.
    """
    mask = np.asarray(valid_mask, dtype=bool)
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise NoValidActionError("Action mask excludes every action")
    rng = rng if rng is not None else np.random.default_rng()

    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.choice(valid))
    q = _q_values(qnet, state)
    if q.shape[0] != mask.shape[0]:
        raise ValueError(f"Q has {q.shape[0]} actions but mask has {mask.shape[0]}")
    masked = np.where(mask, q, -np.inf)
    return int(np.argmax(masked))


def td_loss(batch: Sequence[Transition], qnet: nn.Module, q_target: nn.Module,
            gamma: float) -> torch.Tensor:
    """Mean of (Q(s,a) - (r + gamma * max_a' Q_target(s', a')))^2; terminal targets are r."""
    if not batch:
        raise ValueError("td_loss needs a nonempty batch")
    dtype = next(qnet.parameters()).dtype
    states = torch.as_tensor(np.stack([t.state for t in batch]), dtype=dtype)
    next_states = torch.as_tensor(np.stack([t.next_state for t in batch]), dtype=dtype)
    actions = torch.as_tensor([t.action for t in batch], dtype=torch.long)
    rewards = torch.as_tensor([t.reward for t in batch], dtype=dtype)
    not_terminal = torch.as_tensor([0.0 if t.terminal else 1.0 for t in batch], dtype=dtype)

    q_taken = qnet(states).gather(1, actions.unsqueeze(1)).squeeze(1)
    with torch.no_grad():
        next_max = q_target(next_states).max(dim=1).values
    target = rewards + gamma * not_terminal * next_max
    return F.mse_loss(q_taken, target)


def epsilon_at(step: int, start: float, end: float, decay: float) -> float:
    """Exponential decay from start toward end."""
    return end + (start - end) * math.exp(-step / decay)


def parameter_fingerprint(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode('utf-8'))
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


class DQNAgent:
    """One cascade agent: online/target Q-networks, replay and Adam."""

    def __init__(self, name: str, state_dim: int, n_actions: int, cfg: SearchConfig, seed: int):
        self.name = name
        self.n_actions = n_actions
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.qnet = QNetwork(state_dim, n_actions, cfg.hidden_dim)
            self.q_target = QNetwork(state_dim, n_actions, cfg.hidden_dim)
        self.q_target.load_state_dict(self.qnet.state_dict())
        self.q_target.eval()
        self.optimizer = torch.optim.Adam(self.qnet.parameters(), lr=cfg.learning_rate)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, seed=seed)
        self.rng = np.random.default_rng(seed)
        self.steps = 0
        self.losses: List[float] = []

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.steps, self.cfg.epsilon_start, self.cfg.epsilon_end, self.cfg.epsilon_decay)

    def act(self, state: np.ndarray, valid_mask: Optional[Sequence[bool]] = None) -> int:
        mask = np.ones(self.n_actions, dtype=bool) if valid_mask is None else valid_mask
        action = select_action(self.qnet, state, self.epsilon, mask, self.rng)
        self.steps += 1
        return action

    def remember(self, transition: Transition) -> None:
        """Store a transition for replay."""
        self.buffer.push(transition)

    def learn(self) -> Optional[float]:
        """One gradient step once the buffer holds a full batch."""
        if len(self.buffer) < self.cfg.batch_size:
            return None
        batch = self.buffer.sample(self.cfg.batch_size)
        loss = td_loss(batch, self.qnet, self.q_target, self.cfg.gamma)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        value = float(loss.item())
        self.losses.append(value)
        return value

    def sync_target(self) -> None:
        self.q_target.load_state_dict(self.qnet.state_dict())
        logger.debug(f"{self.name} agent: target network synced at step {self.steps}")

    def target_fingerprint(self) -> str:
        return parameter_fingerprint(self.q_target)


class RandomAgent:
    """Uniform choice over valid actions; never learns."""

    def __init__(self, name: str, n_actions: int, seed: int):
        self.name = name
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)
        self.steps = 0

    def act(self, state: np.ndarray, valid_mask: Optional[Sequence[bool]] = None) -> int:
        mask = np.ones(self.n_actions, dtype=bool) if valid_mask is None else valid_mask
        action = select_action(None, state, 1.0, mask, self.rng)
        self.steps += 1
        return action

    def remember(self, transition: Transition) -> None:
        """Random policy keeps no memory."""

    def learn(self) -> Optional[float]:
        return None

    def sync_target(self) -> None:
        pass
