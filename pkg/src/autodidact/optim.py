"""Shared parameter store with RMSProp statistics shared across workers.

A store is either process-local (plain arrays, a threading lock) or backed
by shared memory so forked worker processes update the same parameters and
accumulators. Every delta is applied under one lock, and snapshots copy
under the same lock, so readers never see a half-applied update.
"""
from __future__ import annotations

import multiprocessing as mp
import threading

import numpy as np


class _LocalCounter:
    def __init__(self):
        self.value = 0


class ParameterStore:
    def __init__(self, params: np.ndarray, accumulators: np.ndarray, counter, lock,
                 decay: float = 0.99, epsilon: float = 1e-8):
        self.params = params
        self.acc = accumulators
        self._counter = counter
        self._lock = lock
        self.decay = decay
        self.epsilon = epsilon
        self.rejected = 0

    @classmethod
    def create(cls, params: np.ndarray, shared: bool = False, ctx=None,
               decay: float = 0.99, epsilon: float = 1e-8) -> "ParameterStore":
        params = np.asarray(params, dtype=np.float64)
        if not shared:
            return cls(params.copy(), np.zeros_like(params), _LocalCounter(),
                       threading.Lock(), decay, epsilon)
        ctx = ctx or mp.get_context("fork")
        n = len(params)
        p = np.frombuffer(ctx.RawArray("d", n), dtype=np.float64)
        a = np.frombuffer(ctx.RawArray("d", n), dtype=np.float64)
        p[:] = params
        return cls(p, a, ctx.RawValue("q", 0), ctx.Lock(), decay, epsilon)

    @property
    def global_step(self) -> int:
        return int(self._counter.value)

    def advance(self, steps: int) -> int:
        with self._lock:
            self._counter.value += steps
            return int(self._counter.value)

    def snapshot(self) -> np.ndarray:
        with self._lock:
            return self.params.copy()

    def apply(self, grads: np.ndarray, lr: float) -> bool:
        """One RMSProp step ``theta -= lr * g / sqrt(acc + eps)``; False if rejected."""
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not np.all(np.isfinite(grads)):
            self.rejected += 1
            return False
        with self._lock:
            self.acc *= self.decay
            self.acc += (1.0 - self.decay) * grads * grads
            self.params -= lr * grads / np.sqrt(self.acc + self.epsilon)
        return True


def rmsprop_apply(store: ParameterStore, grads: np.ndarray, lr: float) -> bool:
    return store.apply(grads, lr)


def clip_by_global_norm(grads: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.sqrt(np.dot(grads, grads)))
    if max_norm > 0 and norm > max_norm:
        return grads * (max_norm / norm), norm
    return grads, norm
