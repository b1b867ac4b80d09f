"""Actor-critic training with n-step, lambda and confidence-weighted TD targets."""
from .envs import DelayedCorridor, PeriodicKeyGrid, RandomWalkChain, make_env, true_values
from .network import ActorCriticNet, NetworkSpec, finite_diff_grad
from .returns import (MixerConfig, TrajectorySegment, build_weight_matrix, compute_targets,
                      confidence_weights, lambda_weight_vector, n_step_return, oracle_targets)
from .trainer import TrainConfig, anneal_lr, evaluate, train

__all__ = [
    "ActorCriticNet", "DelayedCorridor", "MixerConfig", "NetworkSpec", "PeriodicKeyGrid",
    "RandomWalkChain", "TrainConfig", "TrajectorySegment", "anneal_lr", "build_weight_matrix",
    "compute_targets", "confidence_weights", "evaluate", "finite_diff_grad",
    "lambda_weight_vector", "make_env", "n_step_return", "oracle_targets", "train", "true_values",
]
