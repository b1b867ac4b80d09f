"""Shared-trunk MLP with policy, value and confidence heads, and its exact gradients.

Parameters live in one flat float64 vector; ``ParamLayout`` maps named
blocks (``trunk.0.weight``, ``policy.bias``, ...) to contiguous slices, with
roles ordered trunk, policy_head, value_head, confidence_head.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .returns import MixerConfig, TrajectorySegment, target_components

ROLES = ("trunk", "policy_head", "value_head", "confidence_head")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    action_count: int
    hidden_dims: tuple[int, ...] = (64, 64)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.action_count < 1:
            raise ValueError("input_dim and action_count must be positive")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if self.activation != "relu":
            raise ValueError("only the 'relu' activation is supported")

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "action_count": self.action_count,
                "hidden_dims": list(self.hidden_dims), "activation": self.activation}


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    role: str
    shape: tuple[int, ...]
    start: int
    stop: int


class ParamLayout:
    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        blocks = []
        fan_in = spec.input_dim
        for i, width in enumerate(spec.hidden_dims):
            blocks += [(f"trunk.{i}.weight", "trunk", (width, fan_in)),
                       (f"trunk.{i}.bias", "trunk", (width,))]
            fan_in = width
        blocks += [("policy.weight", "policy_head", (spec.action_count, fan_in)),
                   ("policy.bias", "policy_head", (spec.action_count,)),
                   ("value.weight", "value_head", (1, fan_in)),
                   ("value.bias", "value_head", (1,)),
                   ("confidence.weight", "confidence_head", (1, fan_in)),
                   ("confidence.bias", "confidence_head", (1,))]
        self.entries: list[LayoutEntry] = []
        offset = 0
        for name, role, shape in blocks:
            size = int(np.prod(shape))
            self.entries.append(LayoutEntry(name, role, shape, offset, offset + size))
            offset += size
        self.size = offset
        self._by_name = {e.name: e for e in self.entries}

    def __getitem__(self, name: str) -> LayoutEntry:
        return self._by_name[name]

    def role_slice(self, role: str) -> slice:
        members = [e for e in self.entries if e.role == role]
        if not members:
            raise KeyError(role)
        return slice(members[0].start, members[-1].stop)

    def view(self, vector: np.ndarray, name: str) -> np.ndarray:
        e = self._by_name[name]
        return vector[e.start:e.stop].reshape(e.shape)

    def describe(self) -> list[dict]:
        return [{"name": e.name, "role": e.role, "shape": list(e.shape),
                 "start": e.start, "stop": e.stop} for e in self.entries]


@dataclass
class NetworkOutput:
    policy: np.ndarray
    value: np.ndarray | float
    confidence: np.ndarray | float
    cache: dict = field(repr=False, default_factory=dict)


@dataclass
class LossDiagnostics:
    actor_objective: float
    entropy: float
    critic_loss: float
    total_loss: float
    mean_abs_advantage: float
    components: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def as_dict(self) -> dict:
        return {"actor_objective": self.actor_objective, "entropy": self.entropy,
                "critic_loss": self.critic_loss, "total_loss": self.total_loss,
                "mean_abs_advantage": self.mean_abs_advantage}


def entropy_logit_grad(policy: np.ndarray, log_policy: np.ndarray) -> np.ndarray:
    """d(-H)/d(logits), rows centred so a uniform row gives exactly zero."""
    ref = log_policy.max(axis=-1, keepdims=True)
    shifted = log_policy - ref
    return policy * (shifted - (policy * shifted).sum(axis=-1, keepdims=True))


class ActorCriticNet:
    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.layout = ParamLayout(spec)

    @property
    def n_params(self) -> int:
        return self.layout.size

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        params = np.zeros(self.layout.size)
        for e in self.layout.entries:
            if e.name.endswith(".weight"):
                bound = 1.0 / np.sqrt(e.shape[1])
                params[e.start:e.stop] = rng.uniform(-bound, bound, size=e.stop - e.start)
        return params

    def zero_heads(self, params: np.ndarray) -> np.ndarray:
        out = params.copy()
        for role in ("policy_head", "value_head", "confidence_head"):
            out[self.layout.role_slice(role)] = 0.0
        return out

    def trunk(self, params: np.ndarray, x: np.ndarray):
        """Trunk features plus the (input, pre-activation) pair of every layer."""
        h = x
        layers = []
        for i in range(len(self.spec.hidden_dims)):
            W = self.layout.view(params, f"trunk.{i}.weight")
            b = self.layout.view(params, f"trunk.{i}.bias")
            pre = h @ W.T + b
            layers.append((h, pre))
            h = np.maximum(pre, 0.0)
        return h, layers

    def forward(self, params: np.ndarray, obs) -> NetworkOutput:
        """Evaluate one observation (1-D) or a batch (2-D)."""
        x = np.asarray(obs, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.spec.input_dim:
            raise ValueError(f"observation has length {x.shape[1]}, expected {self.spec.input_dim}")
        L = self.layout
        z, layers = self.trunk(params, x)
        logits = z @ L.view(params, "policy.weight").T + L.view(params, "policy.bias")
        m = logits.max(axis=1, keepdims=True)
        log_policy = logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
        policy = np.exp(log_policy)
        value = (z @ L.view(params, "value.weight").T)[:, 0] + L.view(params, "value.bias")[0]
        conf = (z @ L.view(params, "confidence.weight").T)[:, 0] + L.view(params, "confidence.bias")[0]
        cache = {"features": z, "layers": layers, "log_policy": log_policy}
        if single:
            return NetworkOutput(policy[0], float(value[0]), float(conf[0]), cache)
        return NetworkOutput(policy, value, conf, cache)

    def _backward(self, params, cache, d_logits, d_value) -> np.ndarray:
        """Backprop head-output gradients through policy/value heads and the trunk."""
        L = self.layout
        grad = np.zeros(L.size)
        z = cache["features"]
        Wp = L.view(params, "policy.weight")
        wv = L.view(params, "value.weight")
        L.view(grad, "policy.weight")[...] = d_logits.T @ z
        L.view(grad, "policy.bias")[...] = d_logits.sum(axis=0)
        L.view(grad, "value.weight")[...] = (d_value @ z)[None, :]
        L.view(grad, "value.bias")[...] = d_value.sum()
        dz = d_logits @ Wp + d_value[:, None] * wv
        for i in range(len(self.spec.hidden_dims) - 1, -1, -1):
            inp, pre = cache["layers"][i]
            da = dz * (pre > 0)
            L.view(grad, f"trunk.{i}.weight")[...] = da.T @ inp
            L.view(grad, f"trunk.{i}.bias")[...] = da.sum(axis=0)
            if i:
                dz = da @ L.view(params, f"trunk.{i}.weight")
        return grad

    def loss_gradients(self, params: np.ndarray, segment: TrajectorySegment, targets,
                       beta: float, mixer: MixerConfig | None = None,
                       train_actor: bool = True, components: bool = False):
        """Gradient of the combined per-segment loss, to be *descended*.

        The combined loss is, summed over the segment's states,
        ``(T - V)^2 - A * log pi(a|s) - beta * H(pi(.|s))`` with the advantage
        ``A = T - V`` and the targets ``T`` held constant for the trunk, policy
        and value parameters. With ``mixer.mode == "car"`` the confidence head
        also receives the critic-loss gradient through the softmax weights; its
        successor features are treated as fixed inputs, so nothing from that
        path reaches the trunk.
        """
        targets = np.asarray(targets, dtype=np.float64)
        M = len(segment)
        if targets.shape != (M,):
            raise ValueError(f"expected {M} targets, got shape {targets.shape}")
        if segment.observations is None or segment.actions is None:
            raise ValueError("segment needs observations and actions")
        out = self.forward(params, segment.observations)
        V = out.value
        adv = targets - V
        policy, log_policy = out.policy, out.cache["log_policy"]
        idx = np.arange(M)

        d_value = -2.0 * adv
        if train_actor:
            onehot = np.zeros_like(policy)
            onehot[idx, segment.actions] = 1.0
            d_actor = -adv[:, None] * (onehot - policy)
            d_entropy = beta * entropy_logit_grad(policy, log_policy)
        else:
            d_actor = d_entropy = np.zeros_like(policy)
        grad = self._backward(params, out.cache, d_actor + d_entropy, d_value)

        conf_grad = np.zeros(self.layout.size)
        if mixer is not None and mixer.mode == "car":
            conf_grad = self._confidence_path_grad(params, segment, mixer, targets, adv)
            grad = grad + conf_grad

        entropy = float(-(policy * log_policy).sum())
        actor_obj = float((adv * log_policy[idx, segment.actions]).sum()) if train_actor else 0.0
        critic = float((adv**2).sum())
        total = critic - actor_obj - (beta * entropy if train_actor else 0.0)
        diag = LossDiagnostics(actor_obj, entropy, critic, total, float(np.abs(adv).mean()))
        if components:
            zeros_v = np.zeros(M)
            zeros_p = np.zeros_like(policy)
            diag.components = {
                "actor": self._backward(params, out.cache, d_actor, zeros_v),
                "entropy": self._backward(params, out.cache, d_entropy, zeros_v),
                "critic_value": self._backward(params, out.cache, zeros_p, d_value),
                "critic_confidence": conf_grad,
            }
        return grad, diag

    def _confidence_path_grad(self, params, segment, mixer, targets, adv) -> np.ndarray:
        if segment.next_observations is None:
            raise ValueError("confidence-weighted targets need next_observations")
        _, G, W = target_components(segment, mixer)
        # dL/dc_k = sum_j 2 (T_j - V_j) * W[j, k] * (G[j, k] - T_j)
        d_conf = ((2.0 * adv)[:, None] * W * (G - targets[:, None])).sum(axis=0)
        z_next, _ = self.trunk(params, segment.next_observations)
        grad = np.zeros(self.layout.size)
        self.layout.view(grad, "confidence.weight")[...] = (d_conf @ z_next)[None, :]
        self.layout.view(grad, "confidence.bias")[...] = d_conf.sum()
        return grad


def finite_diff_grad(params: np.ndarray, scalar_loss: Callable[[np.ndarray], float],
                     eps: float = 1e-5) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    probe = params.copy()
    for i in range(len(params)):
        probe[i] = params[i] + eps
        up = scalar_loss(probe)
        probe[i] = params[i] - eps
        down = scalar_loss(probe)
        probe[i] = params[i]
        grad[i] = (up - down) / (2 * eps)
    return grad
