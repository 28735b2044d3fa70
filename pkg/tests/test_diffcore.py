import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from excl.diffcore import (
    AdamState,
    NondeterministicLossError,
    NonFiniteError,
    Rng,
    ShapeError,
    adam_step,
    backward,
    constant,
    dropout,
    grad_check,
    masked_softmax,
    ops,
    parameter,
)


def central_diff(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + eps
        up = f()
        x[i] = orig - eps
        down = f()
        x[i] = orig
        g[i] = (up - down) / (2 * eps)
    return g


class TestTensorOps:
    def test_tanh_zero(self):
        assert ops.tanh(constant(0.0)).value == 0.0

    def test_matmul_identity(self):
        A = np.array([[1.5, -2.0], [0.25, 3.0]])
        np.testing.assert_array_equal(ops.matmul(constant(np.eye(2)), constant(A)).value, A)

    def test_concat(self):
        out = ops.concat([constant([1.0, 2.0]), constant([3.0])])
        np.testing.assert_array_equal(out.value, [1.0, 2.0, 3.0])

    def test_matmul_shape_error_names_op_and_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 2\)"):
            ops.matmul(constant(np.ones((2, 3))), constant(np.ones((2, 2))))

    def test_concat_shape_error(self):
        with pytest.raises(ShapeError, match="concat"):
            ops.concat([constant(np.ones((2, 3))), constant(np.ones((3, 1)))])

    def test_non_finite_output_raises(self):
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            ops.mul(constant([1e200]), constant([1e200]))

    def test_log_of_nonpositive(self):
        with pytest.raises(FloatingPointError):
            ops.log(constant([0.0]))


class TestMaskedSoftmax:
    def test_symmetric_support(self):
        np.testing.assert_array_equal(masked_softmax([0, 0, 0], [True, True, False]), [0.5, 0.5, 0.0])

    @pytest.mark.parametrize("x", [-1e6, -3.0, 0.0, 7.5, 1e6])
    def test_single_entry(self, x):
        assert masked_softmax([x], [True])[0] == 1.0

    def test_large_logits_do_not_overflow(self):
        p = masked_softmax([1000.0, 0.0], [True, True])
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)

    def test_empty_support(self):
        with pytest.raises(ValueError, match="empty support"):
            masked_softmax([1.0, 2.0], [False, False])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.data())
    def test_distribution_properties(self, logits, data):
        mask = data.draw(st.lists(st.booleans(), min_size=len(logits), max_size=len(logits)))
        if not any(mask):
            mask[0] = True
        p = masked_softmax(logits, mask)
        assert np.all(p >= 0)
        assert np.all(p[~np.array(mask)] == 0.0)
        assert abs(p.sum() - 1.0) < 1e-9


class TestBackward:
    def test_tanh_derivative_at_zero(self):
        x = parameter(0.0)
        backward(ops.tanh(x))
        assert x.grad == 1.0

    def test_mean_of_softmax_has_zero_gradient(self):
        x = parameter([0.3, -1.2, 2.0, 0.7])
        backward(ops.mean(ops.softmax(x)))
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)

    def test_non_scalar_loss(self):
        with pytest.raises(ShapeError):
            backward(ops.tanh(parameter([1.0, 2.0])))

    def test_grad_zero_before_backward(self):
        p = parameter(np.ones((2, 3)))
        np.testing.assert_array_equal(p.grad, np.zeros((2, 3)))

    def test_accumulates_until_caller_zeroes(self):
        x = parameter([2.0])
        backward(ops.total(ops.mul(x, x)))
        backward(ops.total(ops.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [8.0])
        x.zero_grad()
        backward(ops.total(ops.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [4.0])

    def test_random_composite_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        W = parameter(rng.normal(size=(4, 3)))
        b = parameter(rng.normal(size=3))
        x = constant(rng.normal(size=(5, 4)))

        def f():
            return ops.mean(ops.sigmoid(ops.tanh(ops.affine(x, W, b))))

        backward(f())
        for p in (W, b):
            num = central_diff(lambda: float(f().value), p.value)
            err = np.max(np.abs(p.grad - num) / np.maximum(np.maximum(np.abs(p.grad), np.abs(num)), 1e-8))
            assert err < 1e-6

    def test_concat_routes_gradient_slices(self):
        a = parameter([1.0, 2.0])
        b = parameter([3.0, 4.0, 5.0])
        weights = constant([1.0, 10.0, 100.0, 1000.0, 10000.0])
        backward(ops.total(ops.mul(ops.concat([a, b]), weights)))
        np.testing.assert_array_equal(a.grad, [1.0, 10.0])
        np.testing.assert_array_equal(b.grad, [100.0, 1000.0, 10000.0])

    def test_concat_perturb_one_input_only(self):
        rng = np.random.default_rng(0)
        a = parameter(rng.normal(size=(3, 2)))
        b = parameter(rng.normal(size=(3, 4)))
        W = constant(rng.normal(size=(6, 1)))

        def f():
            return ops.total(ops.tanh(ops.matmul(ops.concat([a, b]), W)))

        backward(f())
        num_b = central_diff(lambda: float(f().value), b.value)
        np.testing.assert_allclose(b.grad, num_b, rtol=1e-6, atol=1e-9)

    @pytest.mark.parametrize(
        "op",
        ["add", "sub", "mul", "abs_diff", "sq_diff", "log_softmax", "softmax", "log", "embed", "pick",
         "reverse_padded", "broadcast", "lstm"],
    )
    def test_op_gradients(self, op):
        rng = np.random.default_rng(11)
        a = parameter(rng.normal(size=(3, 4)))
        c = constant(rng.normal(size=(3, 4)))
        mask = np.array([[1, 1, 0, 0], [1, 1, 1, 1], [1, 0, 0, 0]], bool)
        if op == "lstm":
            a = parameter(rng.normal(size=(2, 3, 4)))
            W = parameter(rng.normal(size=(4, 8)) * 0.5)
            U = parameter(rng.normal(size=(2, 8)) * 0.5)
            bb = parameter(rng.normal(size=8) * 0.5)
            params = {"x": a, "W": W, "U": U, "b": bb}
            weights = constant(rng.normal(size=(2, 3, 2)))

            def f():
                return ops.total(ops.mul(ops.lstm(a, W, U, bb), weights))
        else:
            params = {"a": a}
            build = {
                "add": lambda: ops.add(a, c),
                "sub": lambda: ops.sub(c, a),
                "mul": lambda: ops.mul(a, c),
                "abs_diff": lambda: ops.abs_diff(a, c),
                "sq_diff": lambda: ops.sq_diff(a, c),
                "log_softmax": lambda: ops.log_softmax(a, mask),
                "softmax": lambda: ops.softmax(a, mask),
                "log": lambda: ops.log(ops.add(ops.mul(a, a), constant(1.0))),
                "embed": lambda: ops.embed(a, [[0, 2], [2, 2]]),
                "pick": lambda: ops.pick(a, [1, 3, 0]),
                "reverse_padded": lambda: ops.reverse_padded(a, [2, 4, 1]),
                "broadcast": lambda: ops.expand_time(a, 3),
            }[op]
            weights = constant(rng.normal(size=build().shape))

            def f():
                return ops.total(ops.mul(build(), weights))

        assert grad_check(f, params, eps=1e-5) < 1e-6


class TestGradCheck:
    def test_linear_is_exact(self):
        w = parameter([0.5, -1.5, 2.0])
        x = constant([3.0, 1.0, -2.0])
        assert grad_check(lambda: ops.total(ops.mul(w, x)), {"w": w}) < 1e-9

    def test_nondeterministic_loss_rejected(self):
        w = parameter([1.0, 2.0])
        rng = Rng(0)
        with pytest.raises(NondeterministicLossError):
            grad_check(lambda: ops.total(dropout(w, 0.5, True, rng)), {"w": w})

    def test_dropout_with_pinned_seed_is_accepted(self):
        w = parameter([1.0, 2.0, 3.0, 4.0])
        err = grad_check(lambda: ops.total(ops.tanh(dropout(w, 0.5, True, Rng(4)))), {"w": w})
        assert err < 1e-6


def adam_reference(theta, grad_fn, steps, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        theta = theta - lr * mh / (vh**0.5 + eps)
    return theta


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        for g in (3.7, -0.02):
            p = parameter([1.0])
            st_ = AdamState()
            adam_step({"p": p}, st_, {"p": np.array([g])})
            assert p.value[0] - 1.0 == pytest.approx(-0.001 * np.sign(g), rel=1e-6)
            assert st_.t == 1

    def test_zero_gradient_is_fixed_point(self):
        p = parameter([1.0, -2.0])
        st_ = AdamState()
        for _ in range(3):
            adam_step({"p": p}, st_, {"p": np.zeros(2)})
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        assert st_.t == 3

    def test_two_steps_on_quadratic_match_reference(self):
        p = parameter([1.0])
        st_ = AdamState()
        for _ in range(2):
            p.zero_grad()
            backward(ops.scale(ops.total(ops.mul(p, p)), 0.5))
            adam_step({"p": p}, st_)
        expected = adam_reference(1.0, lambda th: th, 2)
        assert abs(p.value[0] - expected) < 1e-12
        assert np.all(st_.v["p"] >= 0)

    def test_non_finite_gradient_names_parameter(self):
        p = parameter([1.0])
        with pytest.raises(NonFiniteError, match="weights"):
            adam_step({"weights": p}, AdamState(), {"weights": np.array([np.nan])})


class TestDropout:
    def test_p_zero_train_identity(self):
        x = np.arange(6.0)
        np.testing.assert_array_equal(dropout(x, 0.0, True, Rng(0)), x)

    @pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
    def test_eval_identity(self, p):
        x = np.arange(6.0)
        np.testing.assert_array_equal(dropout(x, p, False, Rng(0)), x)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            dropout(np.ones(3), 1.0, True, Rng(0))

    def test_inverted_scaling_mean(self):
        y = dropout(np.ones(10**6), 0.5, True, Rng(123))
        assert abs(y.mean() - 1.0) < 0.01
        assert set(np.unique(y)) == {0.0, 2.0}

    def test_seed_reproducible(self):
        a = dropout(np.ones(1000), 0.3, True, Rng(9))
        b = dropout(np.ones(1000), 0.3, True, Rng(9))
        np.testing.assert_array_equal(a, b)


def test_rng_streams_are_reproducible():
    np.testing.assert_array_equal(Rng(42).normal(size=5), Rng(42).normal(size=5))
    np.testing.assert_array_equal(Rng(42).spawn(3).uniform(size=4), Rng(42).spawn(3).uniform(size=4))
    assert not np.array_equal(Rng(42).spawn(3).uniform(size=4), Rng(42).spawn(4).uniform(size=4))
