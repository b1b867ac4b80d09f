import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autodidact.returns import (MixerConfig, TrajectorySegment, build_weight_matrix,
                                compute_targets, confidence_weights, lambda_weight_vector,
                                n_step_return, oracle_targets, return_matrix, suffix_softmax_matrix)

from conftest import random_segment

finite = st.floats(-50, 50, allow_nan=False)


def seg(rewards, boots, confs=None, terminal=False, gamma=0.5):
    confs = [0.0] * len(rewards) if confs is None else confs
    return TrajectorySegment(rewards=rewards, boot_values=boots, confidences=confs,
                             terminal=terminal, gamma=gamma)


def global_softmax_mask_renormalize(c):
    """Algorithm-2 reading: softmax over all, zero below the diagonal, renormalize rows."""
    c = np.asarray(c)
    w = np.exp(c - c.max())
    w /= w.sum()
    W = np.tile(w, (len(c), 1))
    W[np.tril_indices(len(c), -1)] = 0.0
    return W / W.sum(axis=1, keepdims=True)


class TestNStepReturn:
    def test_hand_example(self):
        s = seg([1, 0, 2], [9, 9, 4])
        assert n_step_return(s, 0, 3) == pytest.approx(2.0, abs=1e-15)

    def test_zero_case(self):
        s = seg([0, 5], [0, 3])
        assert n_step_return(s, 0, 1) == 0.0

    def test_terminal_last_step_is_reward(self):
        s = seg([1, -3.25], [7, 0], terminal=True)
        assert n_step_return(s, 1, 1) == -3.25

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            n_step_return(seg([1, 2], [0, 0]), 1, 2)


class TestLambdaWeights:
    def test_hand_example(self):
        np.testing.assert_allclose(lambda_weight_vector(3, 0.5), [0.5, 0.25, 0.25], atol=0)

    def test_collapse(self):
        assert lambda_weight_vector(4, 0.0).tolist() == [1, 0, 0, 0]
        assert lambda_weight_vector(4, 1.0).tolist() == [0, 0, 0, 1]
        assert lambda_weight_vector(1, 0.3).tolist() == [1.0]

    def test_rejects_bad_lambda(self):
        with pytest.raises(ValueError):
            lambda_weight_vector(3, 1.5)

    @given(st.integers(1, 40), st.floats(0, 1))
    def test_sums_to_one(self, h, lam):
        w = lambda_weight_vector(h, lam)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(w >= 0)


class TestConfidenceWeights:
    def test_uniform(self):
        np.testing.assert_allclose(confidence_weights([0, 0, 0]), [1 / 3] * 3, atol=1e-15)

    def test_hand_example(self):
        np.testing.assert_allclose(confidence_weights([0, math.log(2)]), [1 / 3, 2 / 3], atol=1e-15)

    def test_no_overflow(self):
        w = confidence_weights([1000.0, 1000.0])
        np.testing.assert_allclose(w, [0.5, 0.5])

    @given(st.lists(finite, min_size=1, max_size=20), finite)
    def test_shift_invariance(self, c, shift):
        np.testing.assert_allclose(confidence_weights(np.array(c) + shift),
                                   confidence_weights(c), atol=1e-12)


class TestWeightMatrix:
    def test_uniform_confidences(self):
        W = build_weight_matrix(seg([0, 0, 0], [0, 0, 0]))
        expected = [[1 / 3, 1 / 3, 1 / 3], [0, 0.5, 0.5], [0, 0, 1]]
        np.testing.assert_allclose(W, expected, atol=1e-15)

    def test_single_return(self):
        assert build_weight_matrix(seg([1], [2], [7.5])).tolist() == [[1.0]]

    def test_hand_example(self):
        W = build_weight_matrix(seg([0, 0], [0, 0], [0, math.log(3)]))
        np.testing.assert_allclose(W, [[0.25, 0.75], [0, 1]], atol=1e-15)

    @given(st.lists(finite, min_size=1, max_size=20), finite)
    def test_invariants(self, c, shift):
        W = suffix_softmax_matrix(c)
        M = len(c)
        assert np.all(np.abs(W.sum(axis=1) - 1) <= 1e-12)
        assert np.all(W[np.tril_indices(M, -1)] == 0.0)
        assert np.all(W >= 0)
        np.testing.assert_allclose(suffix_softmax_matrix(np.array(c) + shift), W, atol=1e-12)
        np.testing.assert_allclose(global_softmax_mask_renormalize(np.clip(c, -30, 30)),
                                   suffix_softmax_matrix(np.clip(c, -30, 30)), atol=1e-12)


class TestTargets:
    def test_nstep_hand_example(self):
        s = seg([1, 0, 2], [9, 9, 4])
        t = compute_targets(s, MixerConfig("nstep", window=3))
        assert t[0] == pytest.approx(2.0, abs=1e-15)

    def test_lambda_zero_is_one_step(self, rng):
        s = random_segment(rng, M=12)
        t = compute_targets(s, MixerConfig("lambda", 0.0))
        np.testing.assert_array_equal(t, s.rewards + s.gamma * s.boot_values)

    def test_car_uniform_confidences_average_returns(self, rng):
        s = random_segment(rng, M=9)
        s = TrajectorySegment(s.rewards, s.boot_values, np.full(9, 0.3), s.terminal, s.gamma)
        t = compute_targets(s, MixerConfig("car"))
        brute = [np.mean([n_step_return(s, j, n) for n in range(1, 9 - j + 1)]) for j in range(9)]
        np.testing.assert_allclose(t, brute, atol=1e-12)

    def test_single_step_segment(self):
        s = seg([1.5], [2.0], gamma=0.9)
        for mixer in (MixerConfig("nstep"), MixerConfig("lambda", 0.4), MixerConfig("car")):
            assert oracle_targets(s, mixer)[0] == pytest.approx(1.5 + 0.9 * 2.0, abs=1e-15)
            assert compute_targets(s, mixer)[0] == pytest.approx(1.5 + 0.9 * 2.0, abs=1e-15)

    def test_window_enforced(self):
        s = seg([0] * 5, [0] * 5)
        with pytest.raises(ValueError):
            compute_targets(s, MixerConfig("nstep", window=4))

    def test_return_matrix_matches_direct_sum(self, rng):
        s = random_segment(rng, M=15)
        G = return_matrix(s)
        for j in range(15):
            for k in range(j, 15):
                assert G[j, k] == pytest.approx(n_step_return(s, j, k - j + 1), abs=1e-12)

    @pytest.mark.parametrize("mixer", [MixerConfig("nstep"), MixerConfig("lambda", 0.9),
                                       MixerConfig("car")], ids=lambda m: m.mode)
    def test_oracle_equivalence(self, rng, mixer):
        for _ in range(200):
            s = random_segment(rng)
            np.testing.assert_allclose(compute_targets(s, mixer), oracle_targets(s, mixer),
                                       atol=1e-12, rtol=0)

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["nstep", "lambda", "car"]),
           st.floats(0, 1))
    def test_convexity(self, seed, mode, lam):
        s = random_segment(np.random.default_rng(seed))
        mixer = MixerConfig(mode, lam if mode == "lambda" else None)
        t = compute_targets(s, mixer)
        G = return_matrix(s)
        for j in range(len(s)):
            row = G[j, j:]
            assert row.min() - 1e-12 <= t[j] <= row.max() + 1e-12

    def test_lambda_one_equals_nstep_bitwise(self, rng):
        for _ in range(50):
            s = random_segment(rng)
            np.testing.assert_array_equal(compute_targets(s, MixerConfig("lambda", 1.0)),
                                          compute_targets(s, MixerConfig("nstep")))


class TestValidation:
    def test_terminal_needs_zero_bootstrap(self):
        with pytest.raises(ValueError):
            seg([1], [0.5], terminal=True)

    def test_mixer_lambda_rules(self):
        with pytest.raises(ValueError):
            MixerConfig("lambda")
        with pytest.raises(ValueError):
            MixerConfig("car", lam=0.5)
        with pytest.raises(ValueError):
            MixerConfig("td")
