import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simcal import mdn
from simcal.errors import ConfigurationError, ContractError
from simcal.features import KernelConfig, build_rff, init_neural_map
from simcal.mdn import (
    GaussianMixture,
    MixtureHeadWeights,
    TrainerConfig,
    head_forward,
    log_density,
    loss_and_gradient,
    melu,
    select_lengthscale,
    train,
)


def zero_head(k, d, s, floor=1e-6, slope=1.0):
    return MixtureHeadWeights(
        w_alpha=np.zeros((k, s)), b_alpha=np.zeros(k),
        w_mu=np.zeros((k, d, s)), b_mu=np.zeros((k, d)),
        w_sigma=np.zeros((k, d, s)), b_sigma=np.zeros((k, d)),
        elu_slope=slope, variance_floor=floor,
    )


def random_head(k, d, s, rng, scale=0.3):
    h = zero_head(k, d, s)
    for key in ("w_alpha", "b_alpha", "w_mu", "b_mu", "w_sigma", "b_sigma"):
        getattr(h, key)[...] = rng.normal(0, scale, getattr(h, key).shape)
    return h


# -- melu -------------------------------------------------------------------

def test_melu_values():
    assert melu(0.0, 1.0) == pytest.approx(1.0)
    assert melu(2.0, 1.0) == pytest.approx(3.0)
    assert melu(-20.0, 0.5) == pytest.approx(0.5 + 0.5 * np.exp(-20), abs=1e-9)


@given(st.floats(-30, 30), st.floats(0.01, 1.0))
def test_melu_positive_and_continuous(z, slope):
    v = melu(z, slope)
    assert v > 0
    assert abs(melu(1e-12, slope) - melu(-1e-12, slope)) < 1e-10


def test_melu_rejects_bad_slope():
    with pytest.raises(ContractError):
        melu(0.0, 0.0)
    with pytest.raises(ContractError):
        melu(0.0, 1.5)


# -- head forward -----------------------------------------------------------

def test_head_forward_zero_weights():
    k, d, s = 3, 2, 8
    head = zero_head(k, d, s)
    m = head_forward(head, np.random.default_rng(0).normal(size=s))
    np.testing.assert_allclose(m.weights, 1.0 / k)
    np.testing.assert_allclose(m.means, 0.0)
    np.testing.assert_allclose(np.diagonal(m.covariances, axis1=1, axis2=2),
                               1.0 + head.variance_floor)


def test_head_forward_singleton_softmax():
    rng = np.random.default_rng(1)
    head = random_head(1, 2, 8, rng)
    m = head_forward(head, rng.normal(size=8))
    np.testing.assert_allclose(m.weights, [1.0])


def test_head_forward_simplex_and_floor():
    rng = np.random.default_rng(2)
    head = random_head(4, 3, 10, rng, scale=2.0)
    for _ in range(20):
        m = head_forward(head, rng.normal(size=10))
        assert abs(m.weights.sum() - 1.0) < 1e-12
        assert np.all(m.weights >= 0)
        variances = np.diagonal(m.covariances, axis1=1, axis2=2)
        assert np.all(variances >= head.variance_floor)


# -- log density ------------------------------------------------------------

def test_log_density_standard_normal_at_mode():
    m = GaussianMixture([1.0], [[0.0]], [[1.0]])
    assert log_density(m, [0.0]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)


def test_log_density_identical_components():
    one = GaussianMixture([1.0], [[0.0]], [[1.0]])
    two = GaussianMixture([0.5, 0.5], [[0.0], [0.0]], [[1.0], [1.0]])
    assert log_density(two, [0.3]) == pytest.approx(log_density(one, [0.3]), abs=1e-14)


def test_log_density_matches_direct_sum_oracle():
    rng = np.random.default_rng(3)
    w = rng.dirichlet(np.ones(3))
    means = rng.normal(0, 2, (3, 2))
    covs = np.stack([np.diag(rng.uniform(0.1, 2.0, 2)) for _ in range(3)])
    m = GaussianMixture(w, means, covs)
    for _ in range(50):
        theta = rng.normal(0, 2, 2)
        direct = 0.0
        for j in range(3):
            diff = theta - means[j]
            det = np.linalg.det(covs[j])
            quad = diff @ np.linalg.inv(covs[j]) @ diff
            direct += w[j] * np.exp(-0.5 * quad) / (2 * np.pi * np.sqrt(det))
        assert log_density(m, theta) == pytest.approx(np.log(direct), abs=1e-10)


def test_log_density_component_permutation_invariant():
    rng = np.random.default_rng(4)
    w = rng.dirichlet(np.ones(4))
    means = rng.normal(0, 1, (4, 2))
    covs = np.stack([np.diag(rng.uniform(0.2, 1.0, 2)) for _ in range(4)])
    perm = rng.permutation(4)
    a = GaussianMixture(w, means, covs)
    b = GaussianMixture(w[perm], means[perm], covs[perm])
    theta = rng.normal(size=2)
    assert log_density(a, theta) == pytest.approx(log_density(b, theta), abs=1e-13)


# -- loss and gradient ------------------------------------------------------

def test_stationary_point_single_pair():
    # K=1, mean bias at theta, zero weights: mean gradient vanishes
    d, s = 2, 6
    head = zero_head(1, d, s)
    theta = np.array([[0.7, -0.2]])
    head.b_mu[0] = theta[0]
    fmap = build_rff(KernelConfig("rbf", 1.0, s), 3)
    _, grads, _ = loss_and_gradient(head, fmap, np.array([[0.1, 0.2, 0.3]]), theta)
    np.testing.assert_allclose(grads["b_mu"], 0.0, atol=1e-14)
    np.testing.assert_allclose(grads["w_mu"], 0.0, atol=1e-14)


def test_duplicated_batch_unchanged():
    rng = np.random.default_rng(5)
    s = 10
    fmap = build_rff(KernelConfig("rbf", 1.0, s), 2)
    head = random_head(3, 2, s, rng)
    x = rng.normal(size=(8, 2))
    th = rng.normal(size=(8, 2))
    loss1, g1, _ = loss_and_gradient(head, fmap, x, th)
    loss2, g2, _ = loss_and_gradient(
        head, fmap, np.vstack([x, x]), np.vstack([th, th])
    )
    assert loss1 == pytest.approx(loss2, abs=1e-12)
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-12)


def _finite_difference_check(fmap, rng, n_probe=25):
    d_in = fmap.input_dim
    x = rng.normal(size=(16, d_in))
    th = rng.normal(size=(16, 2))
    head = random_head(3, 2, fmap.num_features, rng)
    _, hg, fg = loss_and_gradient(head, fmap, x, th)
    step = 1e-5
    max_rel = 0.0

    def probe(arr, grad):
        nonlocal max_rel
        flat, g = arr.ravel(), grad.ravel()
        for i in rng.choice(flat.size, size=min(n_probe, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + step
            up, _, _ = loss_and_gradient(head, fmap, x, th)
            flat[i] = orig - step
            down, _, _ = loss_and_gradient(head, fmap, x, th)
            flat[i] = orig
            num = (up - down) / (2 * step)
            rel = abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-8)
            max_rel = max(max_rel, rel)

    for k in hg:
        probe(getattr(head, k), hg[k])
    if fg is not None:
        for k in fg:
            probe(getattr(fmap, k), fg[k])
    return max_rel


def test_gradient_matches_finite_differences_rff():
    rng = np.random.default_rng(6)
    fmap = build_rff(KernelConfig("rbf", 1.0, 30), 3)
    assert _finite_difference_check(fmap, rng) < 1e-4


def test_gradient_matches_finite_differences_nn():
    rng = np.random.default_rng(7)
    fmap = init_neural_map(3, 6, 14, rng)
    assert _finite_difference_check(fmap, rng) < 1e-4


def test_empty_batch_rejected():
    fmap = build_rff(KernelConfig("rbf", 1.0, 8), 2)
    head = zero_head(2, 1, 8)
    with pytest.raises(ContractError):
        loss_and_gradient(head, fmap, np.empty((0, 2)), np.empty((0, 1)))


# -- training ---------------------------------------------------------------

def _synthetic_data(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (n, 1))
    th = 2 * x + 0.1 * rng.normal(size=(n, 1))
    return x, th


def test_train_beats_unconditional_baseline():
    x, th = _synthetic_data()
    fmap = build_rff(KernelConfig("rbf", 0.3, 100), 1)
    cfg = TrainerConfig(num_components=2, epochs=200, seed=1)
    head, fmap, _ = train(cfg, x, th, fmap)
    hx, hth = _synthetic_data(500, seed=9)
    model_ld = mdn.held_out_log_density(head, fmap, hx, hth)
    mu, sd = th.mean(), th.std()
    baseline = np.mean(
        -0.5 * np.log(2 * np.pi * sd ** 2) - (hth - mu) ** 2 / (2 * sd ** 2)
    )
    assert model_ld >= baseline


def test_train_deterministic():
    x, th = _synthetic_data(300)
    cfg = TrainerConfig(num_components=2, epochs=30, seed=11)
    r1 = train(cfg, x, th, build_rff(KernelConfig("rbf", 0.3, 40), 1))
    r2 = train(cfg, x, th, build_rff(KernelConfig("rbf", 0.3, 40), 1))
    for k in ("w_alpha", "b_alpha", "w_mu", "b_mu", "w_sigma", "b_sigma"):
        np.testing.assert_array_equal(getattr(r1[0], k), getattr(r2[0], k))


def test_train_shuffled_pairs_worse():
    x, th = _synthetic_data()
    cfg = TrainerConfig(num_components=2, epochs=150, seed=2)
    head, fmap, _ = train(cfg, x, th, build_rff(KernelConfig("rbf", 0.3, 100), 1))
    perm = np.random.default_rng(0).permutation(x.shape[0])
    head_s, fmap_s, _ = train(cfg, x[perm], th, build_rff(KernelConfig("rbf", 0.3, 100), 1))
    hx, hth = _synthetic_data(500, seed=10)
    assert (mdn.held_out_log_density(head_s, fmap_s, hx, hth)
            <= mdn.held_out_log_density(head, fmap, hx, hth))


def test_train_rejects_too_few_samples():
    cfg = TrainerConfig(num_components=5)
    with pytest.raises(ConfigurationError):
        train(cfg, np.zeros((20, 1)), np.zeros((20, 1)),
              build_rff(KernelConfig("rbf", 1.0, 8), 1))


def test_validation_loss_trend():
    x, th = _synthetic_data(1000, seed=3)
    cfg = TrainerConfig(num_components=2, epochs=200, seed=3, patience=200)
    _, _, report = train(cfg, x, th, build_rff(KernelConfig("rbf", 0.3, 60), 1))
    n = len(report.val_loss)
    tenth = max(1, n // 10)
    assert np.median(report.val_loss[-tenth:]) <= np.median(report.val_loss[:tenth])


# -- lengthscale selection --------------------------------------------------

def test_select_lengthscale_singleton():
    x, th = _synthetic_data(200)
    cfg = TrainerConfig(num_components=2, epochs=10, seed=0)
    got = select_lengthscale([0.7], x, th,
                             lambda s: build_rff(KernelConfig("rbf", s, 20), 1), cfg)
    assert got == 0.7


def test_select_lengthscale_prefers_data_scale():
    x, th = _synthetic_data(900, seed=4)
    cfg = TrainerConfig(num_components=2, epochs=60, seed=4)
    sigma0 = 0.3
    got = select_lengthscale(
        [sigma0 * 1e-3, sigma0, sigma0 * 1e3], x, th,
        lambda s: build_rff(KernelConfig("rbf", s, 60), 1), cfg,
    )
    assert got == sigma0


def test_select_lengthscale_tie_breaks_large():
    # identical scores forced by a single fold candidate list duplicate
    x, th = _synthetic_data(200)
    cfg = TrainerConfig(num_components=2, epochs=5, seed=0)
    got = select_lengthscale(
        [0.5, 0.5], x, th,
        lambda s: build_rff(KernelConfig("rbf", s, 20), 1), cfg,
    )
    assert got == 0.5
