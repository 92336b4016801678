import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genmala.architectures import (
    identity_generator,
    random_augmented_fc,
    random_conv_generator,
    random_fc_generator,
)
from genmala.exceptions import ConfigurationError
from genmala.generator import (
    AugmentedGenerator,
    BatchNorm,
    Conv2d,
    FullyConnected,
    GeneratorModel,
    LeakyReLU,
    Sigmoid,
    UpsampleNearest,
    augmented_forward,
    augmented_op,
    augmented_vjp,
    generator_forward,
    generator_op,
    generator_vjp,
    scaling_h,
    scaling_h_prime,
)
from genmala.operators import adjoint_check


def test_identity_network_forward_and_vjp():
    g = identity_generator(5)
    z = np.array([1.0, -2.0, 0.5, 3.0, 0.0])
    assert np.array_equal(generator_forward(g, z), z)
    r = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    assert np.array_equal(generator_vjp(g, z, r), r)


def test_sigmoid_head_range():
    g = random_fc_generator(8, [16], 32, seed=0)
    rng = np.random.default_rng(1)
    for _ in range(5):
        out = generator_forward(g, rng.standard_normal(8))
        assert np.all(out > 0) and np.all(out < 1)


def test_leaky_relu_negative_slope():
    layer = LeakyReLU(0.2)
    assert layer.forward(np.array([-1.0]))[0] == pytest.approx(-0.2)
    assert layer.forward(np.array([3.0]))[0] == pytest.approx(3.0)
    # subgradient at exactly 0 pinned to the slope
    assert layer.vjp(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(0.2)


def test_sigmoid_derivative_at_zero():
    g = GeneratorModel(layers=(Sigmoid(),), latent_dim=4, output_dim=4)
    r = np.array([1.0, 2.0, -1.0, 0.5])
    assert np.allclose(generator_vjp(g, np.zeros(4), r), 0.25 * r)


def test_two_layer_adjoint():
    g = random_fc_generator(8, [16], 32, seed=2, batch_norm=False)
    assert adjoint_check(generator_op(g), trials=10, seed=3) <= 1e-6


def test_every_layer_kind_adjoint():
    # one model exercising conv, upsample, leaky relu and sigmoid ...
    conv = random_conv_generator(6, [8, 4], seed=4)
    assert adjoint_check(generator_op(conv), trials=8, seed=5) <= 1e-6
    # ... and one exercising fully connected plus frozen batch norm
    fc = random_fc_generator(6, [12, 10], 20, seed=6, batch_norm=True)
    assert adjoint_check(generator_op(fc), trials=8, seed=7) <= 1e-6


def test_batch_norm_uses_frozen_statistics():
    bn = BatchNorm(gamma=np.array([2.0]), beta=np.array([1.0]),
                   running_mean=np.array([3.0]), running_var=np.array([4.0]),
                   eps=0.0)
    # y = gamma * (x - mean)/sqrt(var) + beta = 2*(5-3)/2 + 1 = 3
    assert bn.forward(np.array([5.0]))[0] == pytest.approx(3.0)
    # same inputs, same outputs: nothing depends on the batch
    assert bn.forward(np.array([5.0]))[0] == bn.forward(np.array([5.0]))[0]


def test_upsample_vjp_is_block_sum():
    layer = UpsampleNearest(2)
    x = np.arange(4.0).reshape(1, 2, 2)
    up = layer.forward(x)
    assert up.shape == (1, 4, 4)
    r = np.ones((1, 4, 4))
    assert np.array_equal(layer.vjp(x, r), 4.0 * np.ones((1, 2, 2)))


def test_conv_shape_chain_table_style():
    # 4x4 kernel with pad 3 expands a 1x1 map to 4x4; 3x3 with pad 1 preserves
    g = random_conv_generator(16, [8, 8], seed=8)
    assert g.output_shape == (1, 8, 8)
    out = generator_forward(g, np.zeros(16))
    assert out.shape == (64,)


def test_scaling_h_midpoints_and_limits():
    assert scaling_h(0.0, 0.2) == pytest.approx(0.1)
    assert scaling_h(0.0, 0.5) == pytest.approx(0.25)
    assert scaling_h(40.0, 0.2) == pytest.approx(0.2)
    assert scaling_h(-40.0, 0.2) == pytest.approx(0.0, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-4, 4), gap=st.floats(1e-6, 4))
def test_scaling_h_strictly_monotone(x, gap):
    # strict within the range where float resolution can see the slope
    assert scaling_h(x, 0.2) < scaling_h(x + gap, 0.2)
    assert scaling_h_prime(x, 0.2) > 0


def test_scaling_h_prime_matches_finite_differences():
    for x in [-2.0, -0.3, 0.0, 0.7, 2.5]:
        fd = (scaling_h(x + 1e-6, 0.5) - scaling_h(x - 1e-6, 0.5)) / 2e-6
        assert scaling_h_prime(x, 0.5) == pytest.approx(fd, rel=1e-8)


def test_augmented_identity_base():
    ag = AugmentedGenerator(base=identity_generator(2), scale_cap=0.2)
    out = augmented_forward(ag, np.array([3.0, -1.0, 0.0]))
    assert np.allclose(out, 0.1 * np.array([3.0, -1.0]))


def test_augmented_vanishes_at_negative_scale_coordinate():
    ag = AugmentedGenerator(base=identity_generator(2), scale_cap=0.2)
    out = augmented_forward(ag, np.array([3.0, -1.0, -38.0]))
    assert np.all(np.abs(out) < 1e-300)


def test_augmented_output_range():
    ag = random_augmented_fc(8, [16], 32, scale_cap=0.2, seed=9)
    rng = np.random.default_rng(10)
    for _ in range(5):
        out = augmented_forward(ag, rng.standard_normal(9))
        assert np.all(out > 0) and np.all(out < 0.2)


def test_augmented_adjoint():
    ag = random_augmented_fc(8, [16], 32, scale_cap=0.5, seed=11)
    assert adjoint_check(augmented_op(ag), trials=10, seed=12) <= 1e-6


def test_augmented_vjp_scale_coordinate():
    # d<G_h, r>/dz2 = h'(z2) <G(z1), r>
    ag = AugmentedGenerator(base=identity_generator(3), scale_cap=0.2)
    z = np.array([1.0, 2.0, 3.0, 0.4])
    r = np.array([1.0, 1.0, 1.0])
    grad = augmented_vjp(ag, z, r)
    assert grad[-1] == pytest.approx(scaling_h_prime(0.4, 0.2) * 6.0)
    assert np.allclose(grad[:-1], scaling_h(0.4, 0.2) * r)


def test_forward_deterministic():
    g = random_fc_generator(8, [16], 32, seed=13)
    z = np.random.default_rng(14).standard_normal(8)
    assert np.array_equal(generator_forward(g, z), generator_forward(g, z))


def test_wrong_latent_shape_rejected():
    g = identity_generator(3)
    with pytest.raises(ConfigurationError):
        generator_forward(g, np.zeros(4))
    with pytest.raises(ConfigurationError):
        generator_vjp(g, np.zeros(3), np.zeros(4))


def test_latent_spec_closed_forms():
    from genmala.generator import LatentSpec

    spec = LatentSpec(dim=3)
    z = np.array([1.0, -2.0, 0.5])
    expected = -0.5 * float(z @ z) - 1.5 * np.log(2 * np.pi)
    assert spec.log_density(z) == pytest.approx(expected)
    assert np.array_equal(spec.grad_log_density(z), -z)
    assert spec.sample(np.random.default_rng(0)).shape == (3,)


def test_shape_chain_mismatch_caught_at_build():
    bad = (FullyConnected(weight=np.zeros((128, 100)), bias=np.zeros(128)),
           FullyConnected(weight=np.zeros((64, 256)), bias=np.zeros(64)))
    with pytest.raises(ConfigurationError, match="layer 1"):
        GeneratorModel(layers=bad, latent_dim=100, output_dim=64)
