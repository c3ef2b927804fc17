"""Deep deterministic policy gradient over the symmetric action cube.

The state is the metrics vector of the last evaluation (zeros after an
invalid one); an action in [-1, 1]^d maps to a configuration with -1 at the
lower bound, 0 at the default and +1 at the upper bound.
"""

from __future__ import annotations

import numpy as np

from ..params import ParameterSpace
from .history import Optimizer, Step, TuningHistory
from .mlp import Mlp


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s, a, r, s2) -> None:
        i = self.pos
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(0, self.size, size=batch)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]

    def to_json(self) -> dict:
        n = self.size
        return {"capacity": self.capacity, "pos": self.pos, "size": n,
                "s": self.s[:n].tolist(), "a": self.a[:n].tolist(), "r": self.r[:n].tolist(),
                "s2": self.s2[:n].tolist()}

    def load_json(self, obj: dict) -> None:
        n = obj["size"]
        self.size, self.pos = n, obj["pos"]
        if n:
            self.s[:n], self.a[:n] = obj["s"], obj["a"]
            self.r[:n], self.s2[:n] = obj["r"], obj["s2"]


def action_to_config(space: ParameterSpace, action: np.ndarray) -> np.ndarray:
    u = np.full(len(space), 0.5)
    u[space.tunable_indices] = 0.5 * (np.clip(action, -1.0, 1.0) + 1.0)
    return space.from_unit(u)


def config_to_action(space: ParameterSpace, config: np.ndarray) -> np.ndarray:
    return 2.0 * space.to_unit(config)[space.tunable_indices] - 1.0


class DdpgAgent(Optimizer):
    name = "rl"

    def __init__(self, space: ParameterSpace, state_dim: int, seed: int = 0, total_steps: int = 200,
                 hidden: int = 64, gamma: float = 0.9, tau: float = 0.005, actor_lr: float = 1e-4,
                 critic_lr: float = 1e-3, batch: int = 32, warmup: int = 64, capacity: int = 10_000,
                 sigma_start: float = 0.5, sigma_end: float = 0.05, clip: float = 1.0):
        self.space = space
        self.state_dim = state_dim
        self.action_dim = len(space.tunable_indices)
        self.rng = np.random.default_rng(seed)
        self.actor = Mlp([state_dim, hidden, hidden, self.action_dim], "tanh", self.rng)
        self.critic = Mlp([state_dim + self.action_dim, hidden, hidden, 1], "identity", self.rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.replay = ReplayBuffer(capacity, state_dim, self.action_dim)
        self.gamma, self.tau = gamma, tau
        self.actor_lr, self.critic_lr = actor_lr, critic_lr
        self.batch, self.warmup, self.clip = batch, warmup, clip
        self.total_steps = max(1, total_steps)
        self.sigma_start, self.sigma_end = sigma_start, sigma_end
        self.t = 0
        self.state = None
        self.pending = None

    def sigma(self) -> float:
        frac = min(1.0, self.t / max(1, self.total_steps - 1))
        return self.sigma_start + (self.sigma_end - self.sigma_start) * frac

    def _state_of(self, outcome) -> np.ndarray:
        if not outcome.valid or len(outcome.metrics) != self.state_dim:
            return np.zeros(self.state_dim)
        return np.asarray(outcome.metrics, dtype=float)

    def act(self, state: np.ndarray, explore: bool = True) -> np.ndarray:
        a = self.actor.forward(state)[0]
        if explore:
            a = a + self.rng.normal(0.0, self.sigma(), size=self.action_dim)
        return np.clip(a, -1.0, 1.0)

    def suggest(self, history: TuningHistory) -> np.ndarray:
        if self.state is None:
            self.state = self._state_of(history.default_outcome)
        a = self.act(self.state)
        self.pending = (self.state.copy(), a)
        return action_to_config(self.space, a)

    def observe(self, history: TuningHistory, step: Step) -> None:
        s, a = self.pending
        s2 = self._state_of(step.outcome)
        self.replay.push(s, a, step.reward, s2)
        if len(self.replay) >= self.warmup:
            self.update()
        self.state = s2
        self.pending = None
        self.t += 1

    def update(self) -> tuple[float, float]:
        s, a, r, s2 = self.replay.sample(self.rng, self.batch)
        n = len(r)
        a2 = self.actor_target.forward(s2)
        q_next = self.critic_target.forward(np.hstack([s2, a2]))[:, 0]
        target = r + self.gamma * q_next

        q, cache = self.critic.forward(np.hstack([s, a]), keep=True)
        err = q[:, 0] - target
        gw, gb, _ = self.critic.backward(cache, (2.0 / n) * err[:, None])
        self.critic.sgd(gw, gb, self.critic_lr, self.clip)

        mu, acache = self.actor.forward(s, keep=True)
        _, ccache = self.critic.forward(np.hstack([s, mu]), keep=True)
        _, _, gin = self.critic.backward(ccache, np.full((n, 1), -1.0 / n))
        gw, gb, _ = self.actor.backward(acache, gin[:, self.state_dim:])
        self.actor.sgd(gw, gb, self.actor_lr, self.clip)

        self.actor_target.soft_update(self.actor, self.tau)
        self.critic_target.soft_update(self.critic, self.tau)
        return float(np.mean(err ** 2)), float(-np.mean(q))

    def state_dict(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "t": self.t,
                "state": None if self.state is None else self.state.tolist(),
                "actor": self.actor.to_json(), "critic": self.critic.to_json(),
                "actor_target": self.actor_target.to_json(), "critic_target": self.critic_target.to_json(),
                "replay": self.replay.to_json()}

    def load_state_dict(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self.t = state["t"]
        self.state = None if state["state"] is None else np.asarray(state["state"])
        self.actor = Mlp.from_json(state["actor"])
        self.critic = Mlp.from_json(state["critic"])
        self.actor_target = Mlp.from_json(state["actor_target"])
        self.critic_target = Mlp.from_json(state["critic_target"])
        self.replay.load_json(state["replay"])


def ddpg_step(agent: DdpgAgent, history: TuningHistory, last: Step | None = None) -> np.ndarray:
    """Feed the last step (if any) to the agent and return its next configuration."""
    if last is not None and agent.pending is not None:
        agent.observe(history, last)
    return agent.suggest(history)
