"""Kernel-level tests: forward values, backward vs finite differences, tape behavior."""

import numpy as np
import pytest

from avfuse import autodiff as ad
from avfuse.autodiff import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    numeric_gradient,
    relative_error,
)

GRAD_TOL = 1e-4
EPS = 1e-5


def check_op_gradient(build, inputs, tol=GRAD_TOL):
    """Compare tape gradients of sum(build(*inputs)) against central differences."""
    with Tape() as tape:
        loss = ad.sum_all(build(*inputs))
    tape.backward(loss)
    worst = 0.0
    for i, t in enumerate(inputs):
        def f(probe, i=i):
            args = list(inputs)
            args[i] = probe
            return ad.sum_all(build(*args)).item()

        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numeric_gradient(f, t, EPS)))
    assert worst < tol, f"worst relative error {worst}"


class TestForwardValues:
    def test_matmul_identity(self):
        a = Tensor(np.arange(9.0).reshape(3, 3) / 4.0)
        eye = Tensor(np.eye(3))
        assert np.array_equal(ad.matmul(eye, a).data, a.data)

    def test_matmul_zero(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        z = Tensor(np.zeros((2, 2)))
        assert np.array_equal(ad.matmul(a, z).data, np.zeros((2, 2)))

    def test_matmul_hand_value(self):
        # Hand evaluation of the product definition: rows of A dotted with [5, 6].
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0], [6.0]])
        assert np.array_equal(ad.matmul(a, b).data, [[17.0], [39.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_tanh_zero(self):
        z = Tensor(np.zeros((3, 2)))
        assert np.array_equal(ad.tanh(z).data, np.zeros((3, 2)))

    def test_relu_sign(self):
        assert np.array_equal(ad.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_softmax_constant_column(self):
        x = Tensor(np.full((4, 1), 0.37))
        assert np.allclose(ad.softmax_columns(x).data, 0.25, atol=1e-15)

    def test_softmax_columns_sum_to_one(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.uniform(-5, 5, size=(6, 9)))
        y = ad.softmax_columns(x).data
        assert (y >= 0).all()
        assert np.abs(y.sum(axis=0) - 1.0).max() < 1e-9

    def test_activation_dispatch(self):
        x = Tensor([[0.3, -0.4]])
        assert np.array_equal(ad.activation(x, "tanh").data, np.tanh(x.data))
        assert np.array_equal(ad.activation(x, "relu").data, [[0.3, 0.0]])
        with pytest.raises(ShapeError):
            ad.activation(x, "gelu")

    def test_concat_empty(self):
        a = Tensor(np.ones((2, 4)))
        empty = Tensor(np.zeros((0, 4)))
        assert np.array_equal(ad.concat_rows(a, empty).data, a.data)

    def test_concat_shapes(self):
        out = ad.concat_rows(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 4))))
        assert out.shape == (5, 4)

    def test_concat_stacking_definition(self):
        out = ad.concat_rows(Tensor([[1.0]]), Tensor([[2.0]]))
        assert np.array_equal(out.data, [[1.0], [2.0]])

    def test_concat_column_mismatch(self):
        with pytest.raises(ShapeError):
            ad.concat_rows(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 5))))

    def test_nonfinite_rejected_at_construction(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.nan, 1.0])
        with pytest.raises(NonFiniteError):
            Tensor([[np.inf]])

    def test_rank_bounds(self):
        with pytest.raises(ShapeError):
            Tensor(3.0)
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2, 2, 2)))


class TestNumericGradientOracle:
    def test_linear_function(self):
        x = Tensor(np.random.default_rng(0).uniform(-1, 1, size=(3, 2)))
        g = numeric_gradient(lambda t: float(t.data.sum()), x)
        assert np.allclose(g, 1.0, atol=1e-9)

    def test_quadratic(self):
        x = Tensor(np.random.default_rng(1).uniform(-1, 1, size=(4,)))
        g = numeric_gradient(lambda t: 0.5 * float((t.data ** 2).sum()), x)
        assert np.allclose(g, x.data, atol=1e-9)

    def test_tanh_derivative_at_zero(self):
        x = Tensor([0.0])
        g = numeric_gradient(lambda t: float(np.tanh(t.data).sum()), x)
        assert abs(g[0] - 1.0) < 1e-9

    def test_requires_positive_eps(self):
        with pytest.raises(ValueError):
            numeric_gradient(lambda t: 0.0, Tensor([1.0]), eps=0.0)

    def test_nonfinite_evaluation_rejected(self):
        with pytest.raises(NonFiniteError):
            numeric_gradient(lambda t: float("nan"), Tensor([1.0]))


class TestBackwardVsFiniteDifferences:
    """Every differentiable op, random inputs in [-1, 1], double precision."""

    rng = np.random.default_rng(1234)

    def _u(self, *shape):
        return Tensor(self.rng.uniform(-1, 1, size=shape))

    def test_matmul(self):
        check_op_gradient(ad.matmul, [self._u(3, 4), self._u(4, 2)])

    def test_add_sub_mul(self):
        check_op_gradient(ad.add, [self._u(3, 3), self._u(3, 3)])
        check_op_gradient(ad.sub, [self._u(3, 3), self._u(3, 3)])
        check_op_gradient(ad.mul, [self._u(3, 3), self._u(3, 3)])

    def test_scale_shift(self):
        check_op_gradient(lambda x: ad.scale_shift(x, -1.7, 0.3), [self._u(2, 5)])

    def test_tanh(self):
        check_op_gradient(ad.tanh, [self._u(4, 3)])

    def test_relu_away_from_kink(self):
        # Keep inputs off the kink at zero where the derivative is undefined.
        x = self.rng.uniform(0.1, 1.0, size=(4, 3)) * self.rng.choice([-1.0, 1.0], size=(4, 3))
        check_op_gradient(ad.relu, [Tensor(x)])

    def test_sigmoid(self):
        check_op_gradient(ad.sigmoid, [self._u(3, 4)])

    def test_softmax_columns(self):
        # Probe with a random linear functional so the check is not trivially zero.
        probe = self.rng.uniform(-1, 1, size=(5, 3))
        check_op_gradient(
            lambda x: ad.mul(ad.softmax_columns(x), Tensor(probe)), [self._u(5, 3)]
        )

    def test_concat_rows(self):
        probe = self.rng.uniform(-1, 1, size=(5, 2))
        check_op_gradient(
            lambda a, b: ad.mul(ad.concat_rows(a, b), Tensor(probe)),
            [self._u(2, 2), self._u(3, 2)],
        )

    def test_hstack_columns(self):
        check_op_gradient(lambda a, b: ad.hstack_columns([a, b]), [self._u(3, 1), self._u(3, 2)])

    def test_transpose(self):
        probe = self.rng.uniform(-1, 1, size=(4, 2))
        check_op_gradient(lambda x: ad.mul(ad.transpose(x), Tensor(probe)), [self._u(2, 4)])

    def test_column_and_rows(self):
        check_op_gradient(lambda x: ad.column(x, 1), [self._u(3, 3)])
        check_op_gradient(lambda x: ad.rows(x, 1, 3), [self._u(4, 2)])

    def test_add_bias(self):
        check_op_gradient(ad.add_bias, [self._u(3, 5), self._u(3, 1)])

    def test_clamp_inside_interval(self):
        x = Tensor(self.rng.uniform(-0.4, 0.4, size=(3, 3)))
        check_op_gradient(lambda t: ad.clamp(t, -0.5, 0.5), [x])

    def test_sqrt(self):
        x = Tensor(self.rng.uniform(0.2, 1.0, size=(3, 3)))
        check_op_gradient(ad.sqrt, [x])

    def test_l2_normalize_columns(self):
        probe = self.rng.uniform(-1, 1, size=(4, 2))
        x = Tensor(self.rng.uniform(0.3, 1.0, size=(4, 2)))
        check_op_gradient(lambda t: ad.mul(ad.l2_normalize_columns(t), Tensor(probe)), [x])

    def test_cross_entropy_index(self):
        x = self._u(6, 1)
        with Tape() as tape:
            loss = ad.cross_entropy_index(x, 2)
        tape.backward(loss)
        numeric = numeric_gradient(lambda t: ad.cross_entropy_index(t, 2).item(), x, EPS)
        assert relative_error(x.grad, numeric) < GRAD_TOL


class TestTape:
    def test_reverse_order_and_accumulation(self):
        # y = (x + x) * x; grads must accumulate additively across the shared input.
        x = Tensor([[2.0]])
        with Tape() as tape:
            y = ad.mul(ad.add(x, x), x)
            loss = ad.sum_all(y)
        tape.backward(loss)
        assert x.grad[0, 0] == pytest.approx(8.0)  # d/dx 2x^2 = 4x

    def test_replay_is_bitwise_deterministic(self):
        rng = np.random.default_rng(5)
        a_data = rng.uniform(-1, 1, size=(4, 4))
        b_data = rng.uniform(-1, 1, size=(4, 4))

        def run():
            a, b = Tensor(a_data), Tensor(b_data)
            with Tape() as tape:
                out = ad.tanh(ad.matmul(a, ad.softmax_columns(b)))
                loss = ad.sum_all(ad.mul(out, out))
            tape.backward(loss)
            return a.grad.tobytes(), b.grad.tobytes()

        assert run() == run()

    def test_same_tape_rerun_matches(self):
        a = Tensor(np.random.default_rng(6).uniform(-1, 1, size=(3, 3)))
        with Tape() as tape:
            loss = ad.sum_all(ad.tanh(ad.matmul(a, a)))
        tape.backward(loss)
        first = a.grad.tobytes()
        tape.zero_grads()
        tape.backward(loss)
        assert a.grad.tobytes() == first

    def test_no_tape_means_no_grads(self):
        a = Tensor([[1.0, 2.0]])
        out = ad.tanh(a)
        assert a.grad is None and out.grad is None

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones((2, 2)))
        with Tape() as tape:
            y = ad.tanh(x)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_debug_mode_flags_nonfinite_results(self):
        big = Tensor([[1e308]])
        with np.errstate(over="ignore"):
            assert np.isinf(ad.scale(big, 10.0).data).all()  # silent overflow by default
            ad.set_debug_checks(True)
            try:
                with pytest.raises(NonFiniteError):
                    ad.scale(big, 10.0)
            finally:
                ad.set_debug_checks(False)
