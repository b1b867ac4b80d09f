"""TD targets built from mixtures of n-step returns.

Within a rollout segment of M steps, state j can bootstrap from any of the
successor values ``boot_values[j..M-1]``; the return that bootstraps from
``boot_values[k]`` is the (k - j + 1)-step return. A mixer assigns each
state a weight row over those returns:

* ``nstep``  - all weight on the longest available return (plain A3C),
* ``lambda`` - truncated lambda-return weights,
* ``car``    - softmax of the successor states' learned confidences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MODES = ("nstep", "lambda", "car")


@dataclass(frozen=True)
class TrajectorySegment:
    """One rollout window.

    ``rewards[j]`` is received after acting in state j; ``boot_values[j]`` and
    ``confidences[j]`` belong to the state reached after step j. The last
    boot value is the segment's bootstrap value (0 when terminal).
    """

    rewards: np.ndarray
    boot_values: np.ndarray
    confidences: np.ndarray
    terminal: bool
    gamma: float
    observations: np.ndarray | None = None
    actions: np.ndarray | None = None
    next_observations: np.ndarray | None = None

    def __post_init__(self):
        for name in ("rewards", "boot_values", "confidences"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        M = len(self.rewards)
        if M < 1:
            raise ValueError("segment must contain at least one step")
        if len(self.boot_values) != M or len(self.confidences) != M:
            raise ValueError("rewards, boot_values and confidences must have equal length")
        if self.terminal and self.boot_values[-1] != 0.0:
            raise ValueError("terminal segment must bootstrap from 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("rewards", "boot_values", "confidences"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if self.actions is not None:
            object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))
            if len(self.actions) != M:
                raise ValueError("actions length must match rewards")
        for name in ("observations", "next_observations"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
                if len(arr) != M:
                    raise ValueError(f"{name} length must match rewards")
                object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def bootstrap_value(self) -> float:
        return float(self.boot_values[-1])


@dataclass(frozen=True)
class MixerConfig:
    mode: str = "nstep"
    lam: float | None = None
    window: int = 20

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.window < 1:
            raise ValueError("window must be positive")
        if self.mode == "lambda":
            if self.lam is None:
                raise ValueError("lambda mode requires a lambda value")
            if not 0.0 <= self.lam <= 1.0:
                raise ValueError("lambda must lie in [0, 1]")
        elif self.lam is not None:
            raise ValueError("lambda is only used in lambda mode")


def n_step_return(segment: TrajectorySegment, j: int, n: int) -> float:
    M = len(segment)
    if n < 1 or j < 0 or j + n > M:
        raise ValueError(f"need 0 <= j and 1 <= n with j + n <= {M}, got j={j}, n={n}")
    g = segment.gamma
    total = 0.0
    for i in range(n):
        total += g**i * segment.rewards[j + i]
    if not (segment.terminal and j + n == M):
        total += g**n * segment.boot_values[j + n - 1]
    return total


def lambda_weight_vector(h: int, lam: float) -> np.ndarray:
    if h < 1:
        raise ValueError("horizon must be >= 1")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    w = np.empty(h)
    for i in range(h - 1):
        w[i] = (1.0 - lam) * lam**i
    w[h - 1] = lam ** (h - 1)
    return w


def confidence_weights(confidences) -> np.ndarray:
    c = np.asarray(confidences, dtype=np.float64)
    if c.ndim != 1 or len(c) < 1:
        raise ValueError("need a non-empty confidence vector")
    e = np.exp(c - c.max())
    return e / e.sum()


def suffix_softmax_matrix(confidences) -> np.ndarray:
    """Row j is the softmax of ``confidences[j:]`` placed in columns j..M-1."""
    c = np.asarray(confidences, dtype=np.float64)
    M = len(c)
    W = np.zeros((M, M))
    for j in range(M):
        W[j, j:] = confidence_weights(c[j:])
    return W


def build_weight_matrix(segment: TrajectorySegment) -> np.ndarray:
    return suffix_softmax_matrix(segment.confidences)


def mixing_matrix(segment: TrajectorySegment, config: MixerConfig) -> np.ndarray:
    M = len(segment)
    if config.mode == "car":
        return build_weight_matrix(segment)
    W = np.zeros((M, M))
    for j in range(M):
        if config.mode == "nstep":
            W[j, M - 1] = 1.0
        else:
            W[j, j:] = lambda_weight_vector(M - j, config.lam)
    return W


def return_matrix(segment: TrajectorySegment) -> np.ndarray:
    """G[j, k] = the (k-j+1)-step return of state j, by backward recursion; 0 below the diagonal."""
    M = len(segment)
    r, b, g = segment.rewards, segment.boot_values, segment.gamma
    G = np.zeros((M, M))
    for j in range(M - 1, -1, -1):
        G[j, j] = r[j] + g * b[j]
        if j + 1 < M:
            G[j, j + 1:] = r[j] + g * G[j + 1, j + 1:]
    return G


def target_components(segment: TrajectorySegment, config: MixerConfig):
    """Targets plus the return matrix and weight matrix they were mixed from."""
    if len(segment) > config.window:
        raise ValueError(f"segment length {len(segment)} exceeds window {config.window}")
    G = return_matrix(segment)
    W = mixing_matrix(segment, config)
    return (W * G).sum(axis=1), G, W


def compute_targets(segment: TrajectorySegment, config: MixerConfig) -> np.ndarray:
    return target_components(segment, config)[0]


def oracle_targets(segment: TrajectorySegment, config: MixerConfig) -> list[float]:
    """Reference targets by literal enumeration of every n-step return (test use only)."""
    M = len(segment)
    if M > config.window:
        raise ValueError(f"segment length {M} exceeds window {config.window}")
    g = float(segment.gamma)
    rewards = [float(x) for x in segment.rewards]
    boots = [float(x) for x in segment.boot_values]
    targets = []
    for j in range(M):
        h = M - j
        returns = []
        for n in range(1, h + 1):
            total = math.fsum(math.pow(g, i - 1) * rewards[j + i - 1] for i in range(1, n + 1))
            last = j + n == M
            bootstrap = 0.0 if (last and segment.terminal) else boots[j + n - 1]
            returns.append(total + math.pow(g, n) * bootstrap)
        if config.mode == "nstep":
            weights = [0.0] * (h - 1) + [1.0]
        elif config.mode == "lambda":
            lam = float(config.lam)
            weights = [(1.0 - lam) * math.pow(lam, n - 1) for n in range(1, h)] + [math.pow(lam, h - 1)]
        else:
            cs = [float(x) for x in segment.confidences[j:]]
            top = max(cs)
            ex = [math.exp(c - top) for c in cs]
            z = math.fsum(ex)
            weights = [e / z for e in ex]
        targets.append(math.fsum(w * G for w, G in zip(weights, returns)))
    return targets
