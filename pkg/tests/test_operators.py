import numpy as np
import pytest

from genmala.exceptions import ConfigurationError, NumericalError
from genmala.operators import (
    DifferentiableOp,
    adjoint_check,
    compose,
    identity_op,
    matrix_op,
    real_inner,
    scale_op,
)


def test_compose_identity():
    c = compose(identity_op(4), identity_op(4))
    x = np.array([1.0, -2.0, 3.0, 0.5])
    assert np.array_equal(c(x), x)
    assert np.array_equal(c.vjp(x, x), x)


def test_compose_linear_scales():
    c = compose(scale_op(3, 2.0), scale_op(3, 3.0))
    x = np.array([1.0, 2.0, -1.0])
    r = np.array([0.5, 1.0, 2.0])
    assert np.allclose(c(x), 6.0 * x)
    assert np.allclose(c.vjp(x, r), 6.0 * r)


def test_compose_dimension_mismatch_names_operators():
    with pytest.raises(ConfigurationError, match="compose"):
        compose(scale_op(3, 1.0), matrix_op(np.ones((4, 2))))


def test_compose_rejects_complex_inner():
    outer = scale_op(2, 1.0)
    inner = matrix_op(np.eye(2) * (1 + 0j))
    with pytest.raises(ConfigurationError, match="real output"):
        compose(outer, inner)


def test_compose_associative():
    rng = np.random.default_rng(0)
    a = matrix_op(rng.standard_normal((4, 6)))
    b = matrix_op(rng.standard_normal((6, 3)))
    c = matrix_op(rng.standard_normal((3, 5)))
    left = compose(a, compose(b, c))
    right = compose(compose(a, b), c)
    for _ in range(5):
        x = rng.standard_normal(5)
        assert np.allclose(left(x), right(x), rtol=1e-14, atol=1e-14)


def test_vjp_linear_in_cotangent():
    rng = np.random.default_rng(1)
    op = matrix_op(rng.standard_normal((7, 4)) + 1j * rng.standard_normal((7, 4)))
    x = rng.standard_normal(4)
    r1 = op.draw_cotangent(rng)
    r2 = op.draw_cotangent(rng)
    combo = op.vjp(x, 2.5 * r1 - 0.75 * r2)
    parts = 2.5 * op.vjp(x, r1) - 0.75 * op.vjp(x, r2)
    assert np.allclose(combo, parts, rtol=1e-12)


def test_adjoint_check_exact_linear():
    # linear operators carry an exact jvp, so the defect is pure rounding
    rng = np.random.default_rng(2)
    op = matrix_op(rng.standard_normal((9, 5)))
    assert adjoint_check(op, trials=20, seed=3) <= 1e-10
    complex_op = matrix_op(rng.standard_normal((4, 6))
                           + 1j * rng.standard_normal((4, 6)))
    assert adjoint_check(complex_op, trials=20, seed=4) <= 1e-10


def test_adjoint_check_finite_difference_path():
    # a nonlinear op without a jvp goes through the central-difference probe
    op = DifferentiableOp(
        in_dim=3, out_dim=3, out_kind="real",
        forward=lambda x: x ** 3,
        vjp=lambda x, r: 3.0 * x ** 2 * r,
    )
    assert op.jvp is None
    assert adjoint_check(op, trials=20, seed=5) <= 1e-8


def test_adjoint_check_elementwise_square_by_hand():
    # x -> x^2 at x = (1, 2): J = diag(2, 4), v = (1, 0), r = (1, 1)
    op = DifferentiableOp(
        in_dim=2, out_dim=2, out_kind="real",
        forward=lambda x: x ** 2,
        vjp=lambda x, r: 2.0 * x * r,
    )
    x = np.array([1.0, 2.0])
    v = np.array([1.0, 0.0])
    r = np.array([1.0, 1.0])
    jv = np.array([2.0 * 1.0 * v[0], 2.0 * 2.0 * v[1]])
    assert real_inner(jv, r) == pytest.approx(2.0)
    vjp = op.vjp(x, r)
    assert np.allclose(vjp, [2.0, 4.0])
    assert real_inner(v, vjp) == pytest.approx(2.0)
    assert adjoint_check(op, trials=20, seed=4) <= 1e-8


def test_adjoint_check_raises_on_nonfinite():
    def blow_up(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return x / 0.0

    op = DifferentiableOp(
        in_dim=2, out_dim=2, out_kind="real",
        forward=blow_up,
        vjp=lambda x, r: r,
    )
    with pytest.raises(NumericalError, match="trial"):
        adjoint_check(op, trials=3, seed=0)


def test_adjoint_check_needs_trials():
    with pytest.raises(ConfigurationError):
        adjoint_check(identity_op(2), trials=0)


def test_dims_must_be_positive():
    with pytest.raises(ConfigurationError):
        DifferentiableOp(in_dim=0, out_dim=1, out_kind="real",
                         forward=lambda x: x, vjp=lambda x, r: r)
