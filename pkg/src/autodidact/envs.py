"""Small MDPs with enumerable state spaces and an exact policy-evaluation oracle.

Every environment exposes its full transition model through ``transitions``;
the simulator (``step``) and the dynamic-programming oracle (``true_values``)
both read from it, so the two can never disagree about the dynamics.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

TERMINAL = -1


@dataclass(frozen=True)
class EnvSpec:
    name: str
    observation_dim: int
    action_count: int
    max_episode_steps: int

    def __post_init__(self):
        if self.observation_dim < 1:
            raise ValueError("observation_dim must be positive")
        if self.action_count < 2:
            raise ValueError("action_count must be >= 2")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool
    # episode cut by the step cap; the successor state is not terminal
    truncated: bool = False

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


@dataclass
class ValueTable:
    """V^pi over the non-terminal states; terminal states are implicitly 0."""

    values: np.ndarray
    gamma: float
    sweeps: int = 0
    residual: float = 0.0

    def __getitem__(self, state: int) -> float:
        if state == TERMINAL:
            return 0.0
        return float(self.values[state])

    def __len__(self) -> int:
        return len(self.values)


class TabularEnv:
    """Base class: deterministic-or-stochastic tabular dynamics plus a simulator."""

    name = "tabular"
    reward_set: frozenset = frozenset()

    def __init__(self, n_states: int, action_count: int, max_episode_steps: int):
        self.n_states = n_states
        self.spec = EnvSpec(self.name, self.observation_dim, action_count, max_episode_steps)
        self.rng = np.random.default_rng(0)
        self.state = self.start_state
        self.t = 0
        self._done = True

    @property
    def observation_dim(self) -> int:
        return self.n_states

    @property
    def action_count(self) -> int:
        return self.spec.action_count

    @property
    def start_state(self) -> int:
        raise NotImplementedError

    def transitions(self, state: int, action: int) -> list[tuple[float, int, float]]:
        """All (probability, next_state, reward) outcomes; next_state TERMINAL ends the episode."""
        raise NotImplementedError

    def observation(self, state: int) -> np.ndarray:
        obs = np.zeros(self.observation_dim)
        if state != TERMINAL:
            obs[state] = 1.0
        return obs

    def all_observations(self) -> np.ndarray:
        return np.stack([self.observation(s) for s in range(self.n_states)])

    def reset(self, seed: int = 0) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.state = self.start_state
        self.t = 0
        self._done = False
        return self.observation(self.state)

    def step(self, action: int) -> StepResult:
        if self._done:
            raise ValueError("episode is over; call reset() first")
        if not 0 <= action < self.action_count:
            raise ValueError(f"action {action} out of range [0, {self.action_count})")
        outcomes = self.transitions(self.state, action)
        if len(outcomes) == 1:
            _, nxt, reward = outcomes[0]
        else:
            probs = np.array([o[0] for o in outcomes])
            i = int(np.searchsorted(np.cumsum(probs), self.rng.random() * probs.sum(), side="right"))
            _, nxt, reward = outcomes[min(i, len(outcomes) - 1)]
        self.t += 1
        self.state = nxt
        terminal = nxt == TERMINAL
        truncated = not terminal and self.t >= self.spec.max_episode_steps
        self._done = terminal or truncated
        return StepResult(self.observation(nxt), float(reward), terminal, truncated)


class RandomWalkChain(TabularEnv):
    """N states in a line; stepping off the left end pays -1, off the right end +1."""

    name = "RandomWalkChain"
    reward_set = frozenset({-1.0, 0.0, 1.0})
    LEFT, RIGHT = 0, 1

    def __init__(self, n: int = 19, max_episode_steps: int = 1000):
        if n < 1:
            raise ValueError("chain needs at least one state")
        self.n = n
        super().__init__(n, 2, max_episode_steps)

    @property
    def start_state(self) -> int:
        return self.n // 2

    def transitions(self, state, action):
        if action == self.LEFT:
            return [(1.0, TERMINAL, -1.0)] if state == 0 else [(1.0, state - 1, 0.0)]
        return [(1.0, TERMINAL, 1.0)] if state == self.n - 1 else [(1.0, state + 1, 0.0)]


class DelayedCorridor(TabularEnv):
    """Walk forward L cells; the only reward (+1) comes on leaving the last cell."""

    name = "DelayedCorridor"
    reward_set = frozenset({0.0, 1.0})
    FORWARD, BACK = 0, 1

    def __init__(self, length: int = 30):
        if length < 1:
            raise ValueError("corridor length must be positive")
        self.length = length
        super().__init__(length, 2, 4 * length)

    @property
    def start_state(self) -> int:
        return 0

    def transitions(self, state, action):
        if action == self.FORWARD:
            if state == self.length - 1:
                return [(1.0, TERMINAL, 1.0)]
            return [(1.0, state + 1, 0.0)]
        return [(1.0, max(state - 1, 0), 0.0)]


class PeriodicKeyGrid(TabularEnv):
    """5x5 grid whose key cell pays +5 on every P-th step; a few cells pay +0.1 on entry.

    The state is (cell, phase) with phase = t mod P, so the key-collection
    states recur every period. The episode has no terminal state and ends
    at the step cap.
    """

    name = "PeriodicKeyGrid"
    reward_set = frozenset({0.0, 0.1, 5.0})
    SIZE = 5
    KEY_CELL = (4, 4)
    SMALL_CELLS = ((0, 2), (2, 0), (1, 3), (3, 1), (2, 4))
    MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))  # up, down, left, right, stay

    def __init__(self, period: int = 12, max_episode_steps: int | None = None):
        if period < 1:
            raise ValueError("period must be positive")
        self.period = period
        n_cells = self.SIZE * self.SIZE
        cap = max_episode_steps if max_episode_steps is not None else 10 * period
        super().__init__(n_cells * period, len(self.MOVES), cap)

    @property
    def start_state(self) -> int:
        return 0

    def encode(self, row: int, col: int, phase: int) -> int:
        return (row * self.SIZE + col) * self.period + phase

    def decode(self, state: int) -> tuple[int, int, int]:
        cell, phase = divmod(state, self.period)
        row, col = divmod(cell, self.SIZE)
        return row, col, phase

    def transitions(self, state, action):
        row, col, phase = self.decode(state)
        dr, dc = self.MOVES[action]
        r2 = min(max(row + dr, 0), self.SIZE - 1)
        c2 = min(max(col + dc, 0), self.SIZE - 1)
        phase2 = (phase + 1) % self.period
        reward = 0.0
        if (r2, c2) == self.KEY_CELL and phase2 == 0:
            reward = 5.0
        elif (r2, c2) in self.SMALL_CELLS and (r2, c2) != (row, col):
            reward = 0.1
        return [(1.0, self.encode(r2, c2, phase2), reward)]


ENVIRONMENTS: dict[str, type[TabularEnv]] = {
    cls.name: cls for cls in (RandomWalkChain, DelayedCorridor, PeriodicKeyGrid)
}

_NAME_RE = re.compile(r"^\s*(\w+)\s*(?:\(\s*([\d\s,]*)\s*\))?\s*$")


def make_env(name: str) -> TabularEnv:
    """Build an environment from a name such as ``"DelayedCorridor(30)"`` or ``"PeriodicKeyGrid"``."""
    m = _NAME_RE.match(name)
    if not m or m.group(1) not in ENVIRONMENTS:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    args = [int(a) for a in (m.group(2) or "").split(",") if a.strip()]
    return ENVIRONMENTS[m.group(1)](*args)


def env_reset(env: TabularEnv, seed: int = 0) -> np.ndarray:
    return env.reset(seed)


def env_step(env: TabularEnv, action: int) -> StepResult:
    return env.step(action)


def uniform_policy(env: TabularEnv) -> np.ndarray:
    return np.full((env.n_states, env.action_count), 1.0 / env.action_count)


def policy_table(env: TabularEnv, policy_fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Tabulate a policy given as a function of a batch of observations."""
    return np.asarray(policy_fn(env.all_observations()), dtype=np.float64)


def true_values(env: TabularEnv, policy: np.ndarray, gamma: float,
                tol: float = 1e-12, max_sweeps: int = 1_000_000) -> ValueTable:
    """Evaluate ``policy`` exactly by synchronous Bellman sweeps to sup-norm tolerance ``tol``."""
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (env.n_states, env.action_count):
        raise ValueError(f"policy must have shape {(env.n_states, env.action_count)}")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("policy rows must be probability distributions")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")

    n = env.n_states
    P = np.zeros((n, n))
    r = np.zeros(n)
    for s in range(n):
        for a in range(env.action_count):
            pa = policy[s, a]
            if pa == 0.0:
                continue
            for p, nxt, rew in env.transitions(s, a):
                r[s] += pa * p * rew
                if nxt != TERMINAL:
                    P[s, nxt] += pa * p

    V = np.zeros(n)
    for sweep in range(1, max_sweeps + 1):
        V_new = r + gamma * (P @ V)
        delta = np.max(np.abs(V_new - V))
        V = V_new
        if delta <= tol:
            residual = float(np.max(np.abs(r + gamma * (P @ V) - V)))
            return ValueTable(V, gamma, sweep, residual)
    raise RuntimeError(f"policy evaluation did not converge in {max_sweeps} sweeps")
