import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from excl.diffcore import backward, grad_check, parameter
from excl.objectives import (
    RegPrediction,
    SpanTarget,
    clf_nll_loss,
    cond_end_distribution,
    expected_times,
    reg_loss,
)


def py_softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    z = sum(e)
    return [v / z for v in e]


def expected_times_loop(s_start, s_end, times):
    """O(T^2) double loop written with plain Python floats."""
    T = len(s_start)
    p_start = py_softmax(list(s_start))
    t_s = sum(p_start[s] * times[s] for s in range(T))
    t_e = 0.0
    for s in range(T):
        tail = py_softmax(list(s_end[s:]))
        inner = 0.0
        for k, e in enumerate(range(s, T)):
            inner += tail[k] * times[e]
        t_e += p_start[s] * inner
    return t_s, t_e


class TestClfLoss:
    def test_uniform_scores(self):
        loss = clf_nll_loss(np.zeros(4), np.zeros(4), 1, 2)
        assert float(loss.value) == pytest.approx(2 * math.log(4), abs=1e-12)

    def test_boosted_truth_goes_to_zero(self):
        s, e = np.zeros(6), np.zeros(6)
        s[2] = e[4] = 1e4
        assert float(clf_nll_loss(s, e, 2, 4).value) < 0.01

    def test_batch_of_identical_items(self):
        rng = np.random.default_rng(0)
        s, e = rng.normal(size=5), rng.normal(size=5)
        one = float(clf_nll_loss(s, e, 1, 3).value)
        two = float(clf_nll_loss(np.stack([s, s]), np.stack([e, e]), [1, 1], [3, 3]).value)
        assert one == pytest.approx(two, abs=1e-14)

    def test_padded_target_rejected(self):
        mask = np.array([[True, True, False]])
        with pytest.raises(ValueError, match="padded"):
            clf_nll_loss(np.zeros((1, 3)), np.zeros((1, 3)), [0], [2], mask)

    def test_padding_ignored(self):
        rng = np.random.default_rng(1)
        s, e = rng.normal(size=4), rng.normal(size=4)
        padded_s = np.concatenate([s, [99.0, -5.0]])
        padded_e = np.concatenate([e, [7.0, 3.0]])
        mask = np.array([True] * 4 + [False] * 2)
        a = clf_nll_loss(s, e, 0, 2).value
        b = clf_nll_loss(padded_s, padded_e, 0, 2, mask).value
        assert a == pytest.approx(b, abs=1e-14)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        s, e = rng.normal(size=7), rng.normal(size=7)
        a = clf_nll_loss(s, e, 1, 5).value
        b = clf_nll_loss(s + 12.5, e, 1, 5).value
        assert abs(a - b) < 1e-9

    def test_gradient_wrt_scores(self):
        rng = np.random.default_rng(3)
        s, e = parameter(rng.normal(size=(2, 5))), parameter(rng.normal(size=(2, 5)))
        mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], bool)
        err = grad_check(lambda: clf_nll_loss(s, e, [0, 2], [3, 2], mask), {"s": s, "e": e}, eps=1e-5)
        assert err < 1e-6


class TestCondEnd:
    def test_last_row_is_delta(self):
        M = cond_end_distribution(np.random.default_rng(0).normal(size=5))
        np.testing.assert_array_equal(M[4], [0, 0, 0, 0, 1.0])

    def test_uniform_logits_give_uniform_tail(self):
        M = cond_end_distribution(np.zeros(6))
        for s in range(6):
            np.testing.assert_allclose(M[s, s:], 1.0 / (6 - s), rtol=1e-14)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=25))
    def test_rows(self, logits):
        M = cond_end_distribution(np.array(logits))
        T = len(logits)
        assert np.all(M[np.tril_indices(T, -1)] == 0.0)
        np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-9)
        assert M[T - 1, T - 1] == 1.0

    def test_mask_excludes_padding(self):
        M = cond_end_distribution(np.zeros((1, 5)), np.array([[1, 1, 1, 0, 0]], bool))[0]
        np.testing.assert_array_equal(M[:3, 3:], 0.0)
        np.testing.assert_allclose(M[0, :3], 1 / 3)


class TestExpectedTimes:
    def test_delta_start(self):
        s = np.zeros(5)
        s[3] = 1e4
        times = np.array([0.0, 0.2, 0.4, 0.6, 0.8])
        pred = expected_times(s, np.zeros(5), times)
        assert float(pred.t_s.value) == pytest.approx(0.6, abs=1e-12)

    def test_two_frame_hand_sum(self):
        pred = expected_times(np.zeros(2), np.zeros(2), [0.0, 1.0])
        assert float(pred.t_s.value) == pytest.approx(0.5, abs=1e-15)
        assert float(pred.t_e.value) == pytest.approx(0.75, abs=1e-15)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            T = int(rng.integers(1, 13))
            s, e = rng.normal(scale=3, size=T), rng.normal(scale=3, size=T)
            times = np.sort(rng.uniform(0, 10, size=T))
            pred = expected_times(s, e, times)
            ts, te = expected_times_loop(s, e, times)
            assert abs(float(pred.t_s.value) - ts) < 1e-9
            assert abs(float(pred.t_e.value) - te) < 1e-9

    def test_end_never_before_start(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            T = int(rng.integers(1, 30))
            pred = expected_times(rng.normal(scale=5, size=T), rng.normal(scale=5, size=T), np.arange(T) / T)
            assert float(pred.t_e.value) >= float(pred.t_s.value) - 1e-12

    def test_padded_batch_matches_single(self):
        rng = np.random.default_rng(6)
        s, e = rng.normal(size=4), rng.normal(size=4)
        times = np.array([0.0, 0.25, 0.5, 0.75])
        single = expected_times(s, e, times)
        S = np.stack([np.concatenate([s, [5.0, 5.0]]), rng.normal(size=6)])
        E = np.stack([np.concatenate([e, [9.0, 9.0]]), rng.normal(size=6)])
        mask = np.array([[1, 1, 1, 1, 0, 0], [1] * 6], bool)
        T = np.stack([np.concatenate([times, [0, 0]]), np.linspace(0, 1, 6)])
        batch = expected_times(S, E, T, mask)
        assert abs(batch.t_s.value[0] - single.t_s.value) < 1e-14
        assert abs(batch.t_e.value[0] - single.t_e.value) < 1e-14

    def test_shift_invariance(self):
        rng = np.random.default_rng(7)
        s, e = rng.normal(size=6), rng.normal(size=6)
        t = np.linspace(0, 1, 6)
        a, b = expected_times(s, e, t), expected_times(s - 40.0, e, t)
        assert abs(a.t_e.value - b.t_e.value) < 1e-9

    def test_decreasing_times_rejected(self):
        with pytest.raises(ValueError):
            expected_times(np.zeros(3), np.zeros(3), [0.0, 2.0, 1.0])

    def test_gradient_wrt_scores(self):
        rng = np.random.default_rng(8)
        s, e = parameter(rng.normal(size=(2, 6))), parameter(rng.normal(size=(2, 6)))
        mask = np.array([[1] * 6, [1, 1, 1, 1, 0, 0]], bool)
        times = np.stack([np.linspace(0, 5 / 6, 6), [0, 0.25, 0.5, 0.75, 0, 0]])
        ends = np.stack([np.linspace(1 / 6, 1, 6), [0.25, 0.5, 0.75, 1.0, 0, 0]])

        def f():
            pred = expected_times(s, e, times, mask, ends)
            return reg_loss(pred, [0.1, 0.3], [0.6, 0.9], "mse")

        assert grad_check(f, {"s": s, "e": e}, eps=1e-5) < 1e-6


class TestRegLoss:
    def pred(self, a, b):
        return RegPrediction(parameter([a]), parameter([b]))

    def test_exact(self):
        assert float(reg_loss(self.pred(0.3, 0.6), [0.3], [0.6]).value) == 0.0

    def test_abs(self):
        assert float(reg_loss(self.pred(0.2, 0.8), [0.1], [0.9], "abs").value) == pytest.approx(0.2, abs=1e-15)

    def test_mse(self):
        assert float(reg_loss(self.pred(0.2, 0.8), [0.1], [0.9], "mse").value) == pytest.approx(0.02, abs=1e-15)

    def test_target_outside_unit_interval(self):
        with pytest.raises(ValueError, match="exceeds clip duration"):
            reg_loss(self.pred(0.2, 0.8), [0.1], [1.3])

    def test_gradient_sign(self):
        p = self.pred(0.2, 0.8)
        backward(reg_loss(p, [0.1], [0.9]))
        assert p.t_s.grad[0] == 1.0 and p.t_e.grad[0] == -1.0


def test_span_target_invariants():
    SpanTarget(0.0, 1.0, 0, 4)
    with pytest.raises(ValueError):
        SpanTarget(2.0, 1.0, 0, 4)
    with pytest.raises(ValueError):
        SpanTarget(0.0, 1.0, 5, 4)
