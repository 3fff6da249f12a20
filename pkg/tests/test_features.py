import numpy as np
import pytest

from simcal.errors import ConfigurationError, ContractError
from simcal.features import (
    KernelConfig,
    NeuralFeatureMap,
    apply_nn,
    apply_rff,
    build_rff,
    exact_kernel,
    init_neural_map,
    nn_backprop,
    nn_feature_jacobian,
)
from simcal.quasirandom import halton_points, inverse_normal_cdf


def test_kernel_config_validation():
    with pytest.raises(ConfigurationError):
        KernelConfig("rbf", 1.0, 7)  # odd
    with pytest.raises(ConfigurationError):
        KernelConfig("rbf", -1.0, 8)
    with pytest.raises(ConfigurationError):
        KernelConfig("cauchy", 1.0, 8)


def test_single_pair_rbf_frequency():
    sigma = 0.7
    m = build_rff(KernelConfig("rbf", sigma, 2), 1)
    first = halton_points(2, 1)[0]
    expected = inverse_normal_cdf(first[:1]) / sigma
    np.testing.assert_allclose(m.frequencies, [expected])
    assert -np.pi <= m.biases[0] <= np.pi


def test_build_rff_deterministic():
    cfg = KernelConfig("matern52", 1.3, 64)
    a, b = build_rff(cfg, 3), build_rff(cfg, 3)
    np.testing.assert_array_equal(a.frequencies, b.frequencies)
    np.testing.assert_array_equal(a.biases, b.biases)


def test_biases_in_range():
    m = build_rff(KernelConfig("rbf", 1.0, 500), 4)
    assert np.all(m.biases >= -np.pi) and np.all(m.biases <= np.pi)


def test_apply_rff_zero_projection():
    m = build_rff(KernelConfig("rbf", 1.0, 8), 2)
    # choose x so that wx + b = 0 is impossible in general; instead force it
    zeroed = type(m)(frequencies=m.frequencies, biases=np.zeros(4), kernel=m.kernel)
    phi = apply_rff(zeroed, np.zeros(2))
    norm = 1.0 / np.sqrt(4)
    np.testing.assert_allclose(phi[:4], norm)
    np.testing.assert_allclose(phi[4:], 0.0, atol=1e-15)


def test_apply_rff_unit_norm():
    m = build_rff(KernelConfig("matern52", 0.8, 100), 3)
    rng = np.random.default_rng(0)
    for _ in range(10):
        phi = apply_rff(m, rng.normal(size=3))
        assert np.linalg.norm(phi) == pytest.approx(1.0, abs=1e-12)


def test_apply_rff_dimension_mismatch():
    m = build_rff(KernelConfig("rbf", 1.0, 8), 2)
    with pytest.raises(ContractError):
        apply_rff(m, np.zeros(3))


@pytest.mark.parametrize("family", ["rbf", "matern52"])
def test_kernel_approximation_error(family):
    cfg = KernelConfig(family, 1.0, 1000)
    m = build_rff(cfg, 5)
    rng = np.random.default_rng(42)
    errs = []
    for _ in range(100):
        x, y = rng.uniform(0, 1, 5), rng.uniform(0, 1, 5)
        est = float(apply_rff(m, x) @ apply_rff(m, y))
        errs.append(abs(est - exact_kernel(cfg, x, y)))
    assert np.mean(errs) <= 0.05


@pytest.mark.parametrize("family", ["rbf", "matern52"])
def test_error_shrinks_with_more_features(family):
    rng = np.random.default_rng(7)
    pairs = [(rng.uniform(0, 1, 5), rng.uniform(0, 1, 5)) for _ in range(100)]

    def mae(s):
        cfg = KernelConfig(family, 1.0, s)
        m = build_rff(cfg, 5)
        return np.mean([
            abs(float(apply_rff(m, x) @ apply_rff(m, y)) - exact_kernel(cfg, x, y))
            for x, y in pairs
        ])

    assert mae(1000) < mae(250)


def test_nn_zero_weights_zero_output():
    nn = NeuralFeatureMap(np.zeros((4, 2)), np.zeros(4), np.zeros((6, 4)), np.zeros(6))
    np.testing.assert_allclose(apply_nn(nn, np.array([1.0, -2.0])), 0.0)


def test_nn_constant_output_layer():
    c = 0.3
    nn = NeuralFeatureMap(
        np.ones((4, 2)), np.zeros(4), np.zeros((6, 4)), np.full(6, c)
    )
    np.testing.assert_allclose(apply_nn(nn, np.array([0.5, 0.5])), np.tanh(c))


def test_nn_outputs_bounded():
    rng = np.random.default_rng(1)
    nn = init_neural_map(3, 8, 12, rng)
    out = apply_nn(nn, rng.normal(0, 5, (50, 3)))
    assert np.all(np.abs(out) < 1.0)


def test_nn_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    nn = init_neural_map(3, 5, 7, rng)
    x = rng.normal(size=3)
    jac = nn_feature_jacobian(nn, x)
    step = 1e-6
    max_rel = 0.0
    for key in ("w1", "b1", "w2", "b2"):
        arr = getattr(nn, key)
        flat = arr.ravel()
        jflat = jac[key].reshape(7, -1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = apply_nn(nn, x)
            flat[i] = orig - step
            down = apply_nn(nn, x)
            flat[i] = orig
            num = (up - down) / (2 * step)
            denom = np.maximum(np.abs(num), 1e-6)
            max_rel = max(max_rel, np.max(np.abs(num - jflat[:, i]) / denom))
    assert max_rel < 1e-4


def test_nn_backprop_is_jacobian_contraction():
    rng = np.random.default_rng(9)
    nn = init_neural_map(2, 4, 5, rng)
    x = rng.normal(size=2)
    d_phi = rng.normal(size=5)
    jac = nn_feature_jacobian(nn, x)
    grads = nn_backprop(nn, x[None, :], d_phi[None, :])
    for key in ("w1", "b1", "w2", "b2"):
        expected = np.tensordot(d_phi, jac[key], axes=1)
        np.testing.assert_allclose(grads[key], expected, atol=1e-12)
