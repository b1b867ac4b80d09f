"""Asynchronous advantage actor-critic training with pluggable TD-target mixers.

Each worker repeatedly copies the shared parameters, rolls out up to
``window`` steps with that snapshot, mixes n-step returns into targets,
computes gradients against the same snapshot and applies them to the
shared store with RMSProp. ``workers == 1`` runs inline and is bitwise
reproducible; more workers run as forked processes sharing memory.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .envs import TabularEnv, make_env, true_values, uniform_policy
from .network import ActorCriticNet, NetworkSpec
from .optim import ParameterStore, clip_by_global_norm
from .returns import (MixerConfig, TrajectorySegment, lambda_weight_vector,
                      suffix_softmax_matrix, target_components)
from .runlog import RunLog, RunLogWriter

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_SKIPS = 100


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    env_name: str
    mixer: MixerConfig = field(default_factory=MixerConfig)
    workers: int = 1
    total_steps: int = 300_000
    lr_initial: float = 1e-3
    lr_anneal_to_zero: bool = True
    gamma: float = 0.99
    beta: float = 0.01
    window: int = 20
    eval_interval_steps: int = 10_000
    eval_episodes: int = 20
    eval_step_cap: int = 500
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64])
    frozen_uniform_policy: bool = False
    grad_clip_norm: float = 40.0
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-8
    log_interval_segments: int = 10

    def __post_init__(self):
        if isinstance(self.mixer, dict):
            self.mixer = _mixer_from_dict(self.mixer, self.window)
        elif self.mixer.window != self.window:
            self.mixer = dataclasses.replace(self.mixer, window=self.window)
        make_env(self.env_name)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("total_steps", "eval_interval_steps", "eval_episodes",
                     "eval_step_cap", "log_interval_segments"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr_initial < 0:
            raise ValueError("lr_initial must be non-negative")
        if not self.seeds:
            raise ValueError("seeds must not be empty")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        if "env_name" not in data:
            raise ValueError("config is missing required key 'env_name'")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        mixer = {"mode": self.mixer.mode}
        if self.mixer.lam is not None:
            mixer["lambda"] = self.mixer.lam
        d["mixer"] = mixer
        return d


def _mixer_from_dict(data: dict, window: int) -> MixerConfig:
    unknown = sorted(set(data) - {"mode", "lambda", "window"})
    if unknown:
        raise ValueError(f"unknown mixer key(s): {', '.join(unknown)}")
    if data.get("window", window) != window:
        raise ValueError("mixer.window must equal the run's window")
    return MixerConfig(mode=data.get("mode", "nstep"), lam=data.get("lambda"), window=window)


def anneal_lr(global_step: int, config: TrainConfig) -> float:
    if not config.lr_anneal_to_zero:
        return config.lr_initial
    return config.lr_initial * max(0.0, 1.0 - global_step / config.total_steps)


def build_network(config: TrainConfig) -> ActorCriticNet:
    env = make_env(config.env_name)
    return ActorCriticNet(NetworkSpec(env.observation_dim, env.action_count,
                                      tuple(config.hidden_dims)))


def _sample(policy: np.ndarray, rng: np.random.Generator) -> int:
    a = int(np.searchsorted(np.cumsum(policy), rng.random(), side="right"))
    return min(a, len(policy) - 1)


class Worker:
    """One actor-learner: a private environment, RNG and position in its episode."""

    def __init__(self, worker_id: int, config: TrainConfig, net: ActorCriticNet,
                 store: ParameterStore, seed: int):
        self.worker_id = worker_id
        self.config = config
        self.net = net
        self.store = store
        self.rng = np.random.default_rng([seed, worker_id])
        self.env = make_env(config.env_name)
        self.obs = self.env.reset(int(self.rng.integers(2**31)))
        self.uniform = np.full(self.env.action_count, 1.0 / self.env.action_count)

    def act(self, policy: np.ndarray) -> int:
        return _sample(self.uniform if self.config.frozen_uniform_policy else policy, self.rng)


def run_segment(worker: Worker, params: np.ndarray, window: int) -> tuple[TrajectorySegment, int]:
    """Roll out until a terminal state or ``window`` steps; returns the segment and the new global step."""
    net, env = worker.net, worker.env
    obs, actions, rewards, confs, boots, next_obs = [], [], [], [], [], []
    out = net.forward(params, worker.obs)
    terminal = False
    for _ in range(window):
        a = worker.act(out.policy)
        res = env.step(a)
        nxt = net.forward(params, res.observation)
        obs.append(worker.obs)
        actions.append(a)
        rewards.append(res.reward)
        next_obs.append(res.observation)
        confs.append(nxt.confidence)
        boots.append(0.0 if res.terminal else nxt.value)
        if res.done:
            terminal = res.terminal
            worker.obs = env.reset(int(worker.rng.integers(2**31)))
            break
        worker.obs = res.observation
        out = nxt
    segment = TrajectorySegment(rewards=rewards, boot_values=boots, confidences=confs,
                                terminal=terminal, gamma=worker.config.gamma,
                                observations=np.array(obs), actions=actions,
                                next_observations=np.array(next_obs))
    step = worker.store.advance(len(segment))
    return segment, step


def _weight_rows(confidences: np.ndarray, mixer: MixerConfig) -> list[list[float]]:
    """Per-step weight rows for an episode cut into consecutive windows."""
    rows = []
    K = mixer.window
    for start in range(0, len(confidences), K):
        chunk = confidences[start:start + K]
        m = len(chunk)
        if mixer.mode == "car":
            W = suffix_softmax_matrix(chunk)
            rows += [W[j, j:].tolist() for j in range(m)]
        elif mixer.mode == "lambda":
            rows += [lambda_weight_vector(m - j, mixer.lam).tolist() for j in range(m)]
        else:
            rows += [[0.0] * (m - j - 1) + [1.0] for j in range(m)]
    return rows


def _run_episode(net, params, env: TabularEnv, step_cap, rng, gamma, trace=False):
    obs = env.reset(int(rng.integers(2**31)))
    out = net.forward(params, obs)
    total = discounted = 0.0
    steps = []
    for t in range(step_cap):
        a = _sample(out.policy, rng)
        res = env.step(a)
        nxt = net.forward(params, res.observation)
        total += res.reward
        discounted += gamma**t * res.reward
        if trace:
            steps.append((out.confidence, out.value, res.reward, a, nxt.confidence))
        if res.done:
            break
        out = nxt
    return total, discounted, steps


def evaluate_detail(net: ActorCriticNet, params: np.ndarray, env_name: str, episodes: int,
                    step_cap: int, seed, gamma: float = 0.99,
                    mixer: MixerConfig | None = None) -> dict:
    env = make_env(env_name)
    rng = np.random.default_rng(seed)
    returns, discounted = [], []
    trace = None
    for ep in range(episodes):
        g, gd, steps = _run_episode(net, params, env, step_cap, rng, gamma, trace=ep == 0)
        returns.append(g)
        discounted.append(gd)
        if ep == 0 and steps:
            conf, value, reward, action, succ_conf = (list(x) for x in zip(*steps))
            trace = {"confidence": conf, "value": value, "reward": reward, "action": action,
                     "weights": _weight_rows(np.array(succ_conf), mixer or MixerConfig("car"))}
    return {"mean_return": float(np.mean(returns)),
            "mean_discounted_return": float(np.mean(discounted)),
            "returns": returns, "trace": trace}


def evaluate(net: ActorCriticNet, params: np.ndarray, env_name: str, episodes: int,
             step_cap: int, seed: int) -> float:
    """Mean undiscounted return over ``episodes`` fresh episodes sampled from the policy."""
    return evaluate_detail(net, params, env_name, episodes, step_cap, seed)["mean_return"]


def value_rmse(net: ActorCriticNet, params: np.ndarray, env: TabularEnv, gamma: float,
               policy: np.ndarray | None = None) -> float:
    """RMS error over all states between V and exact values of ``policy`` (default: the net's)."""
    states = env.all_observations()
    out = net.forward(params, states)
    if policy is None:
        policy = out.policy / out.policy.sum(axis=1, keepdims=True)
    truth = true_values(env, policy, gamma).values
    return float(np.sqrt(np.mean((out.value - truth) ** 2)))


class _QueueSink:
    def __init__(self, queue):
        self.queue = queue

    def append(self, record_type, global_step, worker_id, payload):
        self.queue.put((record_type, int(global_step), int(worker_id), payload))


def _worker_loop(worker_id: int, config: TrainConfig, net: ActorCriticNet, store: ParameterStore,
                 sink, seed: int, out_dir: Path | None, deadline: float | None) -> int:
    worker = Worker(worker_id, config, net, store, seed)
    mixer = config.mixer
    interval = config.eval_interval_steps
    segments = skips = 0
    while store.global_step < config.total_steps:
        if deadline is not None and time.monotonic() >= deadline:
            break
        snapshot = store.snapshot()
        segment, step = run_segment(worker, snapshot, config.window)
        M = len(segment)
        targets, _, W = target_components(segment, mixer)
        grads, diag = net.loss_gradients(snapshot, segment, targets, config.beta, mixer,
                                         train_actor=not config.frozen_uniform_policy)
        if not (np.isfinite(diag.total_loss) and np.all(np.isfinite(grads))):
            skips += 1
            sink.append("skip", step, worker_id, {"consecutive": skips})
            if skips > MAX_CONSECUTIVE_SKIPS:
                raise TrainingAborted(f"worker {worker_id}: {skips} consecutive non-finite losses")
            continue
        skips = 0
        grads, norm = clip_by_global_norm(grads, config.grad_clip_norm)
        lr = anneal_lr(step, config)
        store.apply(grads, lr)
        if not np.all(np.isfinite(store.params)):
            raise TrainingAborted("non-finite parameter entered the store")
        segments += 1

        if segments % config.log_interval_segments == 0:
            before = net.forward(snapshot, segment.observations)
            after = net.forward(store.snapshot(), segment.observations)
            per_n = [float(np.trace(W, offset=n)) / (M - n) for n in range(M)]
            sink.append("segment", step, worker_id, {
                "length": M, "terminal": segment.terminal,
                "target_mean": float(targets.mean()), "target_min": float(targets.min()),
                "target_max": float(targets.max()), "weight_by_n": per_n,
                "grad_norm": norm, "lr": lr, **diag.as_dict()})
            sink.append("value_change", step, worker_id, {
                "confidence": before.confidence, "value_before": before.value,
                "value_after": after.value})

        if step // interval > (step - M) // interval:
            _evaluate_and_checkpoint(worker_id, config, net, store, sink, seed, out_dir, step, lr)
    return segments


def _evaluate_and_checkpoint(worker_id, config, net, store, sink, seed, out_dir, step, lr):
    params = store.snapshot()
    index = step // config.eval_interval_steps
    result = evaluate_detail(net, params, config.env_name, config.eval_episodes,
                             config.eval_step_cap, seed=[seed, index],
                             gamma=config.gamma, mixer=config.mixer)
    env = make_env(config.env_name)
    acting = uniform_policy(env) if config.frozen_uniform_policy else None
    rmse = value_rmse(net, params, env, config.gamma, acting)
    trace = result.pop("trace")
    sink.append("eval", step, worker_id, {**result, "value_rmse": rmse, "lr": lr,
                                          "eval_index": index})
    if trace is not None:
        sink.append("eval_trace", step, worker_id, {"episode_index": index, **trace})
    if out_dir is not None:
        path = save_checkpoint(out_dir / f"ckpt_{step}.bin", net, params, step)
        sink.append("checkpoint", step, worker_id, {"path": path.name})


def _process_main(worker_id, config, net, store, queue, seed, out_dir, deadline):
    sink = _QueueSink(queue)
    try:
        segments = _worker_loop(worker_id, config, net, store, sink, seed, out_dir, deadline)
        sink.append("worker_end", store.global_step, worker_id, {"segments": segments})
    except TrainingAborted as exc:
        queue.put(("abort", store.global_step, worker_id, {"reason": str(exc)}))
    finally:
        queue.put(None)


def train(config: TrainConfig, out_dir=None, seed: int | None = None,
          max_seconds: float | None = None) -> RunLog:
    """Train one seed; writes ``runlog.jsonl`` and checkpoints into ``out_dir`` when given.

    ``max_seconds`` stops every worker after that much wall-clock time
    (used for throughput measurements).
    """
    seed = config.seeds[0] if seed is None else seed
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    net = build_network(config)
    params = net.init_params(seed)
    writer = RunLogWriter(out_dir / "runlog.jsonl" if out_dir else None)
    writer.append("config", 0, -1, {**config.to_dict(), "seed": seed})
    deadline = time.monotonic() + max_seconds if max_seconds is not None else None

    try:
        if config.workers == 1:
            store = ParameterStore.create(params, decay=config.rmsprop_decay,
                                          epsilon=config.rmsprop_epsilon)
            segments = _worker_loop(0, config, net, store, writer, seed, out_dir, deadline)
        else:
            store, segments = _train_processes(config, net, params, writer, seed, out_dir, deadline)
        writer.append("run_end", store.global_step, -1,
                      {"global_step": store.global_step, "segments": segments})
    finally:
        result = writer.close()
    return result


def _train_processes(config, net, params, writer, seed, out_dir, deadline):
    ctx = mp.get_context("fork")
    store = ParameterStore.create(params, shared=True, ctx=ctx, decay=config.rmsprop_decay,
                                  epsilon=config.rmsprop_epsilon)
    queue = ctx.Queue()
    procs = [ctx.Process(target=_process_main,
                         args=(i, config, net, store, queue, seed, out_dir, deadline), daemon=True)
             for i in range(config.workers)]
    for p in procs:
        p.start()
    finished = 0
    abort = None
    segments = 0
    while finished < len(procs):
        item = queue.get()
        if item is None:
            finished += 1
            continue
        record_type, step, worker_id, payload = item
        if record_type == "abort":
            abort = payload["reason"]
            continue
        if record_type == "worker_end":
            segments += payload["segments"]
        writer.append(record_type, step, worker_id, payload)
    for p in procs:
        p.join()
    if abort:
        raise TrainingAborted(abort)
    return store, segments
