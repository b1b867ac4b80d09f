import numpy as np
import pytest

from autodidact.returns import TrajectorySegment


def random_segment(rng, M=None, gamma=0.99, terminal=None, obs_dim=None, action_count=None):
    """Random segment; with ``obs_dim`` it also carries observations and actions."""
    M = int(rng.integers(1, 21)) if M is None else M
    terminal = bool(rng.random() < 0.5) if terminal is None else terminal
    boots = rng.normal(size=M)
    if terminal:
        boots[-1] = 0.0
    extra = {}
    if obs_dim is not None:
        extra = dict(observations=rng.normal(size=(M, obs_dim)),
                     next_observations=rng.normal(size=(M, obs_dim)),
                     actions=rng.integers(action_count, size=M))
    return TrajectorySegment(rewards=rng.normal(size=M), boot_values=boots,
                             confidences=rng.normal(scale=2.0, size=M),
                             terminal=terminal, gamma=gamma, **extra)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
