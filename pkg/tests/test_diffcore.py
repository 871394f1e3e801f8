import numpy as np
import pytest

from semisup.contrast.diffcore import (
    Tape,
    backward,
    check_primitives,
    finite_diff_grad,
    grad_check,
)
from semisup.contrast.exc import ContractError, DomainError, TapeStateError
from semisup.contrast.numerics import Rng


@pytest.fixture
def rng():
    return Rng(0)


class TestTape:
    def test_record_after_finalize(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 2)))
        tape.finalize()
        with pytest.raises(TapeStateError):
            tape.exp(a)

    def test_backward_needs_finalize(self):
        tape = Tape()
        out = tape.sum(tape.leaf(np.ones(3)))
        with pytest.raises(TapeStateError):
            backward(tape, out)

    def test_backward_needs_scalar(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 2)))
        out = tape.exp(a)
        tape.finalize()
        with pytest.raises(ContractError):
            backward(tape, out)

    def test_sum_of_squares(self):
        tape = Tape()
        x = tape.leaf(np.array([1.0, -2.0, 3.0]))
        out = tape.sum(tape.mul(x, x))
        grads = backward(tape.finalize(), out)
        assert np.array_equal(grads[x], [2.0, -4.0, 6.0])

    def test_unused_leaf_gets_zero_gradient(self):
        tape = Tape()
        x = tape.leaf(np.ones(2))
        unused = tape.leaf(np.ones((3, 3)))
        out = tape.sum(x)
        grads = backward(tape.finalize(), out)
        assert np.array_equal(grads[unused], np.zeros((3, 3)))

    def test_fan_out_accumulates(self):
        tape = Tape()
        x = tape.leaf(np.array([2.0]))
        y = tape.add(tape.scale(x, 3.0), tape.mul(x, x))
        out = tape.sum(y)
        grads = backward(tape.finalize(), out)
        assert np.allclose(grads[x], [7.0])

    def test_broadcast_bias_gradient(self):
        tape = Tape()
        m = tape.constant(np.ones((4, 3)))
        b = tape.leaf(np.zeros(3))
        out = tape.sum(tape.add(m, b))
        grads = backward(tape.finalize(), out)
        assert np.array_equal(grads[b], [4.0, 4.0, 4.0])

    def test_backward_is_repeatable(self, rng):
        tape = Tape()
        x = tape.leaf(rng.generator.normal(size=(3, 4)))
        out = tape.sum(tape.log_row_softmax(x, 0.5))
        tape.finalize()
        first = backward(tape, out)[x]
        second = backward(tape, out)[x]
        assert np.array_equal(first, second)

    def test_relu_subgradient_at_zero(self):
        tape = Tape()
        x = tape.leaf(np.array([[-1.0, 0.0, 2.0]]))
        out = tape.sum(tape.relu(x))
        grads = backward(tape.finalize(), out)
        assert np.array_equal(grads[x], [[0.0, 0.0, 1.0]])

    def test_identity(self):
        tape = Tape()
        x = tape.leaf(np.array([5.0]))
        grads = backward(tape.finalize(), tape.sum(x))
        assert np.array_equal(grads[x], [1.0])

    def test_product_rule(self):
        tape = Tape()
        x = tape.leaf(np.array([2.0]))
        y = tape.leaf(np.array([3.0]))
        grads = backward(tape.finalize(), tape.sum(tape.mul(x, y)))
        assert np.array_equal(grads[x], [3.0])
        assert np.array_equal(grads[y], [2.0])

    def test_linearity(self, rng):
        x0 = rng.generator.normal(size=(3, 2))

        def grad_of(build):
            tape = Tape()
            x = tape.leaf(x0)
            return backward(tape.finalize(), build(tape, x))[x]

        def f(tape, x):
            return tape.sum(tape.exp(x))

        def g(tape, x):
            return tape.sum(tape.mul(x, x))

        combined = grad_of(lambda t, x: t.add(t.scale(f(t, x), 2.0), t.scale(g(t, x), -3.0)))
        expected = 2.0 * grad_of(f) - 3.0 * grad_of(g)
        assert np.allclose(combined, expected, rtol=0, atol=1e-12)

    def test_normalized_zero_row_has_zero_gradient(self):
        tape = Tape()
        x = tape.leaf(np.array([[0.0, 0.0], [3.0, 4.0]]))
        w = tape.constant(np.array([[1.0, 2.0], [1.0, 2.0]]))
        out = tape.sum(tape.mul(tape.l2_normalize_rows(x), w))
        grads = backward(tape.finalize(), out)
        assert np.array_equal(grads[x][0], [0.0, 0.0])
        # d/dx of w.x/|x| at (3,4) is (w - (w.u)u)/5 with u = (0.6, 0.8).
        assert np.allclose(grads[x][1], [(1.0 - 2.2 * 0.6) / 5, (2.0 - 2.2 * 0.8) / 5])


class TestFiniteDifferences:
    def test_finite_diff_of_quadratic(self):
        x = np.array([1.0, -3.0])
        g = finite_diff_grad(lambda v: float(np.sum(v**2)), x)
        assert np.allclose(g, 2 * x, atol=1e-8)

    def test_bad_step(self):
        with pytest.raises(DomainError):
            finite_diff_grad(lambda v: 0.0, np.zeros(2), h=0.0)

    def test_grad_check_passes_on_softmax_chain(self, rng):
        w = rng.generator.normal(size=(3, 3))

        def fn(tape, x):
            p = tape.row_softmax(tape.matmul(x, tape.constant(w)), 0.8)
            return tape.sum(tape.log(p))

        report = grad_check(fn, rng.generator.normal(size=(4, 3)), tol=1e-4)
        assert report.passed, str(report)
        assert report.checked == 12

    def test_grad_check_excludes_relu_kinks(self):
        def fn(tape, x):
            return tape.sum(tape.relu(x))

        report = grad_check(fn, np.array([[0.0, 1.0, -1.0]]))
        assert report.passed
        assert report.excluded == 1
        assert report.checked == 2

    def test_grad_check_excludes_rows_leaving_zero(self):
        # A dead relu layer feeds only the bias into the normalization.
        def fn(tape, b):
            dead = tape.relu(tape.constant(-np.ones((3, 2))))
            z = tape.l2_normalize_rows(tape.add(dead, b))
            return tape.sum(tape.mul(z, tape.constant(np.array([[1.0, -2.0]]))))

        report = grad_check(fn, np.zeros((1, 2)), tol=1e-4)
        assert report.passed, str(report)
        assert report.excluded == 2
        assert report.checked == 0

    def test_grad_check_reports_nan_location(self):
        def fn(tape, x):
            return tape.sum(tape.log(x, eps=0.0))

        report = grad_check(fn, np.array([[1.0, 0.0]]))
        assert not report.passed
        assert report.nan_location == (0, 1)
        assert "non-finite" in str(report)

    def test_grad_check_detects_wrong_gradient(self):
        # A leaf used through a constant copy has zero analytic gradient.
        def fn(tape, x):
            return tape.sum(tape.mul(tape.constant(tape.value(x)), tape.constant(np.ones(2))))

        report = grad_check(fn, np.array([1.0, 2.0]))
        assert not report.passed


class TestPrimitives:
    def test_every_primitive_passes(self, rng):
        results = check_primitives(rng, trials=3)
        assert len({name for name, _ in results}) == 15
        failures = [(name, str(r)) for name, r in results if not r.passed]
        assert not failures
