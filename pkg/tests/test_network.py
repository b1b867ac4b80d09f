import dataclasses
import math

import numpy as np
import pytest

from autodidact.network import (ActorCriticNet, NetworkSpec, ParamLayout, entropy_logit_grad,
                                finite_diff_grad)
from autodidact.returns import MixerConfig, compute_targets, n_step_return, oracle_targets

from conftest import random_segment

SPEC = NetworkSpec(input_dim=5, action_count=3, hidden_dims=(6, 5))
MIXERS = [MixerConfig("nstep"), MixerConfig("lambda", 0.7), MixerConfig("car")]


def hand_value(net, params, x):
    """Value head by explicit loops, sharing nothing with ActorCriticNet.forward."""
    L = net.layout
    h = list(x)
    for i, width in enumerate(net.spec.hidden_dims):
        W = L.view(params, f"trunk.{i}.weight")
        b = L.view(params, f"trunk.{i}.bias")
        h = [max(0.0, sum(W[r, c] * h[c] for c in range(len(h))) + b[r]) for r in range(width)]
    w = L.view(params, "value.weight")[0]
    return sum(w[c] * h[c] for c in range(len(h))) + L.view(params, "value.bias")[0]


def make_fixture(seed, mode):
    """Random (params, segment) pair kept away from ReLU kinks so finite differences are valid."""
    rng = np.random.default_rng(seed)
    net = ActorCriticNet(SPEC)
    while True:
        params = net.init_params(int(rng.integers(2**31)))
        params += rng.normal(scale=0.3, size=params.shape)
        seg = random_segment(rng, obs_dim=SPEC.input_dim, action_count=SPEC.action_count)
        pre = [p for x in (seg.observations, seg.next_observations)
               for _, p in net.trunk(params, x)[1]]
        if min(np.abs(p).min() for p in pre) > 1e-3:
            break
    conf = net.forward(params, seg.next_observations).confidence
    seg = dataclasses.replace(seg, confidences=conf)
    return net, params, seg


def surrogate_loss(net, theta, theta0, seg, mixer, beta):
    """Scalar whose gradient at theta0 is the update: frozen targets/advantages, frozen
    confidence-input features, live heads."""
    out0 = net.forward(theta0, seg.observations)
    T0 = np.array(oracle_targets(seg, mixer))
    adv0 = T0 - out0.value
    out = net.forward(theta, seg.observations)
    logp = np.log(out.policy)
    actor = float(np.sum(adv0 * logp[np.arange(len(seg)), seg.actions]))
    entropy = float(-np.sum(out.policy * logp))
    T = T0
    if mixer.mode == "car":
        z0 = net.trunk(theta0, seg.next_observations)[0]
        wc = net.layout.view(theta, "confidence.weight")[0]
        bc = net.layout.view(theta, "confidence.bias")[0]
        live = dataclasses.replace(seg, confidences=z0 @ wc + bc)
        T = np.array(oracle_targets(live, mixer))
    critic = float(np.sum((T - out.value) ** 2))
    return critic - actor - beta * entropy


def assert_grad_close(analytic, numeric, rel=1e-4, floor=1e-7):
    err = np.abs(analytic - numeric)
    bound = np.maximum(rel * np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    worst = np.argmax(err - bound)
    assert np.all(err <= bound), (worst, analytic[worst], numeric[worst])


def test_layout_covers_every_parameter_once():
    layout = ParamLayout(SPEC)
    covered = np.zeros(layout.size, dtype=int)
    for e in layout.entries:
        covered[e.start:e.stop] += 1
    assert np.all(covered == 1)
    roles = [layout.role_slice(r) for r in ("trunk", "policy_head", "value_head", "confidence_head")]
    assert roles[0].start == 0 and roles[-1].stop == layout.size
    assert all(a.stop == b.start for a, b in zip(roles, roles[1:]))


def test_init_deterministic_with_zero_biases():
    net = ActorCriticNet(NetworkSpec(7, 4))
    a, b = net.init_params(3), net.init_params(3)
    np.testing.assert_array_equal(a, b)
    for e in net.layout.entries:
        block = a[e.start:e.stop]
        if e.name.endswith(".bias"):
            assert np.all(block == 0.0)
        else:
            assert np.all(np.abs(block) <= 1 / math.sqrt(e.shape[1]))
    out = net.forward(a, np.random.default_rng(0).normal(size=(10, 7)))
    np.testing.assert_allclose(out.policy.sum(axis=1), 1.0, atol=1e-12)


def test_zero_heads_give_uniform_policy():
    net = ActorCriticNet(SPEC)
    params = net.zero_heads(net.init_params(0))
    out = net.forward(params, np.arange(5.0))
    np.testing.assert_array_equal(out.policy, np.full(3, 1 / 3))
    assert out.value == 0.0 and out.confidence == 0.0


def test_forward_matches_hand_evaluation():
    rng = np.random.default_rng(7)
    net = ActorCriticNet(SPEC)
    params = net.init_params(1) + rng.normal(scale=0.2, size=net.n_params)
    for x in rng.normal(size=(5, 5)):
        assert net.forward(params, x).value == pytest.approx(hand_value(net, params, x), abs=1e-10)


def test_forward_rejects_wrong_dimension():
    net = ActorCriticNet(SPEC)
    with pytest.raises(ValueError):
        net.forward(net.init_params(0), np.zeros(4))


def test_entropy_bounds():
    rng = np.random.default_rng(2)
    net = ActorCriticNet(SPEC)
    params = net.init_params(2) * 5
    out = net.forward(params, rng.normal(size=(50, 5)))
    H = -(out.policy * np.log(out.policy)).sum(axis=1)
    assert np.all(H >= 0) and np.all(H <= math.log(3) + 1e-12)


@pytest.mark.parametrize("A", [2, 3, 5, 7])
def test_uniform_policy_entropy_gradient_exactly_zero(A):
    p = np.full((4, A), 1.0 / A)
    assert np.all(entropy_logit_grad(p, np.log(p)) == 0.0)
    net = ActorCriticNet(NetworkSpec(5, A, (6, 5)))
    params = net.init_params(0)
    params[net.layout.role_slice("policy_head")] = 0.0
    rng = np.random.default_rng(0)
    seg = random_segment(rng, M=6, obs_dim=5, action_count=A)
    targets = net.forward(params, seg.observations).value
    _, diag = net.loss_gradients(params, seg, targets, beta=0.5, components=True)
    assert np.all(diag.components["entropy"][net.layout.role_slice("policy_head")] == 0.0)


@pytest.mark.parametrize("mixer", MIXERS, ids=lambda m: m.mode)
def test_zero_advantage_gives_zero_gradient(mixer):
    net, params, seg = make_fixture(0, mixer.mode)
    targets = net.forward(params, seg.observations).value
    grad, _ = net.loss_gradients(params, seg, targets, beta=0.0)
    assert np.all(grad == 0.0)


@pytest.mark.parametrize("mixer", MIXERS, ids=lambda m: m.mode)
@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(mixer, seed):
    net, params, seg = make_fixture(seed, mixer.mode)
    targets = compute_targets(seg, mixer)
    grad, _ = net.loss_gradients(params, seg, targets, beta=0.05, mixer=mixer)
    numeric = finite_diff_grad(params, lambda th: surrogate_loss(net, th, params, seg, mixer, 0.05))
    assert_grad_close(grad, numeric)


def test_critic_component_matches_finite_differences():
    net, params, seg = make_fixture(11, "lambda")
    mixer = MixerConfig("lambda", 0.7)
    targets = compute_targets(seg, mixer)
    _, diag = net.loss_gradients(params, seg, targets, beta=0.0, mixer=mixer, components=True)
    numeric = finite_diff_grad(
        params, lambda th: float(np.sum((targets - net.forward(th, seg.observations).value) ** 2)))
    assert_grad_close(diag.components["critic_value"], numeric)


def test_semi_gradient_against_explicit_recomputation():
    net, params, seg = make_fixture(3, "nstep")
    targets = compute_targets(seg, MixerConfig("nstep"))
    _, diag = net.loss_gradients(params, seg, targets, beta=0.0, components=True)
    out = net.forward(params, seg.observations)
    explicit = np.zeros(net.n_params)
    for j in range(len(seg)):
        unit = np.zeros(len(seg))
        unit[j] = 1.0
        grad_v = net._backward(params, out.cache, np.zeros_like(out.policy), unit)
        explicit += 2.0 * (out.value[j] - targets[j]) * grad_v
    np.testing.assert_allclose(diag.components["critic_value"], explicit, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_confidence_path_never_reaches_trunk(seed):
    net, params, seg = make_fixture(seed, "car")
    mixer = MixerConfig("car")
    targets = compute_targets(seg, mixer)
    grad, diag = net.loss_gradients(params, seg, targets, 0.01, mixer, components=True)
    conf = diag.components["critic_confidence"]
    L = net.layout
    for role in ("trunk", "policy_head", "value_head"):
        assert np.all(conf[L.role_slice(role)] == 0.0)
    assert np.any(conf[L.role_slice("confidence_head")] != 0.0)
    plain, _ = net.loss_gradients(params, seg, targets, 0.01, None)
    np.testing.assert_array_equal(grad[L.role_slice("trunk")], plain[L.role_slice("trunk")])


def test_zero_confidence_head_gives_uniform_targets():
    net, params, seg = make_fixture(4, "car")
    params = params.copy()
    params[net.layout.role_slice("confidence_head")] = 0.0
    conf = net.forward(params, seg.next_observations).confidence
    assert np.all(conf == 0.0)
    seg = dataclasses.replace(seg, confidences=conf)
    M = len(seg)
    car = compute_targets(seg, MixerConfig("car"))
    uniform = [np.mean([n_step_return(seg, j, n) for n in range(1, M - j + 1)]) for j in range(M)]
    np.testing.assert_allclose(car, uniform, atol=1e-12)


def test_lambda_one_update_equals_nstep_bitwise():
    net, params, seg = make_fixture(5, "nstep")
    updates = []
    for mixer in (MixerConfig("lambda", 1.0), MixerConfig("nstep")):
        targets = compute_targets(seg, mixer)
        updates.append(net.loss_gradients(params, seg, targets, 0.01, mixer)[0])
    np.testing.assert_array_equal(*updates)


def test_frozen_actor_drops_policy_gradient():
    net, params, seg = make_fixture(6, "nstep")
    targets = compute_targets(seg, MixerConfig("nstep"))
    grad, diag = net.loss_gradients(params, seg, targets, 0.01, train_actor=False)
    assert np.all(grad[net.layout.role_slice("policy_head")] == 0.0)
    assert diag.actor_objective == 0.0


def test_target_length_mismatch():
    net, params, seg = make_fixture(1, "nstep")
    with pytest.raises(ValueError):
        net.loss_gradients(params, seg, np.zeros(len(seg) + 1), 0.01)


def test_finite_diff_oracle_itself():
    np.testing.assert_allclose(finite_diff_grad(np.array([1.0, 2.0]), lambda t: float(t @ t)),
                               [2.0, 4.0], atol=1e-6)
    assert np.all(np.abs(finite_diff_grad(np.zeros(4), lambda t: 3.0)) <= 1e-9)
