"""Conditional Gaussian-mixture density model on top of a feature map.

The head maps a feature vector to mixture weights (softmax), component
means (linear) and diagonal variances (mELU + floor). Training maximizes
mean log-likelihood of (parameter, statistic) pairs with fully analytic
gradients; RFF frequencies stay frozen while a neural feature map is
trained jointly through its Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, ContractError, TrainingDivergenceError
from .features import (
    NeuralFeatureMap,
    RFFMap,
    apply_nn,
    apply_rff,
    nn_backprop,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianMixture:
    """Finite Gaussian mixture with full (or diagonal-as-full) covariances.

    weights: (K,) on the simplex; means: (K, d); covariances: (K, d, d)
    symmetric positive definite.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float)
        if self.covariances.ndim == 2:  # stack of diagonals
            self.covariances = np.stack([np.diag(v) for v in self.covariances])
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.covariances.shape != (k, d, d):
            raise ContractError("inconsistent mixture shapes")

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def log_density(mixture: GaussianMixture, theta: np.ndarray) -> float:
    """log sum_k alpha_k N(theta | mu_k, Sigma_k), via log-sum-exp."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != mixture.dim:
        raise ContractError("theta dimension does not match mixture")
    return float(log_density_batch(mixture, theta[None, :])[0])


def log_density_batch(mixture: GaussianMixture, thetas: np.ndarray) -> np.ndarray:
    """Vectorized mixture log-density over rows of ``thetas`` (n, d)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    k, d = mixture.means.shape
    comp = np.empty((thetas.shape[0], k))
    for j in range(k):
        chol = np.linalg.cholesky(mixture.covariances[j])
        diff = thetas - mixture.means[j]
        y = np.linalg.solve(chol, diff.T).T
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        comp[:, j] = -0.5 * (d * LOG_2PI + logdet + np.sum(y * y, axis=1))
    logw = np.log(mixture.weights + 1e-300)
    m = comp + logw
    mx = m.max(axis=1, keepdims=True)
    return (mx[:, 0] + np.log(np.sum(np.exp(m - mx), axis=1)))


def melu(z, elu_slope: float = 1.0):
    """Modified ELU used for positive variance outputs:
    slope*(e^z - 1) + 1 for z <= 0, z + 1 for z > 0."""
    if not 0.0 < elu_slope <= 1.0:
        raise ContractError("elu_slope must lie in (0, 1]")
    z = np.asarray(z, dtype=float)
    out = np.where(z > 0, z + 1.0, elu_slope * np.expm1(np.minimum(z, 0.0)) + 1.0)
    return out if out.ndim else float(out)


def melu_grad(z, elu_slope: float = 1.0):
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, 1.0, elu_slope * np.exp(np.minimum(z, 0.0)))


@dataclass
class MixtureHeadWeights:
    """Trainable head parameters for K components over d_theta outputs."""

    w_alpha: np.ndarray  # (K, s)
    b_alpha: np.ndarray  # (K,)
    w_mu: np.ndarray     # (K, d, s)
    b_mu: np.ndarray     # (K, d)
    w_sigma: np.ndarray  # (K, d, s)
    b_sigma: np.ndarray  # (K, d)
    elu_slope: float = 1.0
    variance_floor: float = 1e-6

    @property
    def num_components(self) -> int:
        return self.w_alpha.shape[0]

    @property
    def theta_dim(self) -> int:
        return self.w_mu.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.w_alpha.shape[1]

    def copy(self) -> "MixtureHeadWeights":
        return MixtureHeadWeights(
            self.w_alpha.copy(), self.b_alpha.copy(),
            self.w_mu.copy(), self.b_mu.copy(),
            self.w_sigma.copy(), self.b_sigma.copy(),
            self.elu_slope, self.variance_floor,
        )


def _forward_batch(head: MixtureHeadWeights, feats: np.ndarray):
    """Batched head evaluation. Returns (alpha (n,K), mu (n,K,d),
    var (n,K,d), z_sigma (n,K,d), logits (n,K))."""
    logits = feats @ head.w_alpha.T + head.b_alpha
    mx = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - mx)
    alpha = e / e.sum(axis=1, keepdims=True)
    mu = np.einsum("kds,ns->nkd", head.w_mu, feats) + head.b_mu
    z = np.einsum("kds,ns->nkd", head.w_sigma, feats) + head.b_sigma
    var = melu(z, head.elu_slope) + head.variance_floor
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(mu))
            and np.all(np.isfinite(var))):
        raise TrainingDivergenceError("non-finite activations in mixture head")
    return alpha, mu, var, z, logits


def head_forward(head: MixtureHeadWeights, feats: np.ndarray) -> GaussianMixture:
    """Evaluate the head at a single feature vector."""
    feats = np.asarray(feats, dtype=float).reshape(-1)
    if feats.shape[0] != head.feature_dim:
        raise ContractError("feature length does not match head")
    alpha, mu, var, _, _ = _forward_batch(head, feats[None, :])
    return GaussianMixture(alpha[0], mu[0], var[0])


def _log_components(theta, mu, var):
    """Per-component diagonal-Gaussian log densities, (n, K)."""
    diff = theta[:, None, :] - mu
    return -0.5 * np.sum(np.log(2.0 * np.pi * var) + diff * diff / var, axis=2)


def loss_and_gradient(
    head: MixtureHeadWeights,
    feature_map,
    x_batch: np.ndarray,
    theta_batch: np.ndarray,
    feats: np.ndarray | None = None,
):
    """Mean negative log-likelihood and its analytic gradients.

    Returns (loss, head_grads: dict, feature_grads: dict | None). Feature
    gradients are produced only for a :class:`NeuralFeatureMap`; RFF maps
    are frozen. ``feats`` may be passed to reuse precomputed features.
    """
    theta = np.atleast_2d(np.asarray(theta_batch, dtype=float))
    n = theta.shape[0]
    if n == 0:
        raise ContractError("batch must be non-empty")
    if feats is None:
        feats = _apply_map(feature_map, x_batch)
    alpha, mu, var, z, _ = _forward_batch(head, feats)

    logn = _log_components(theta, mu, var)
    m = logn + np.log(alpha + 1e-300)
    mx = m.max(axis=1, keepdims=True)
    logq = mx[:, 0] + np.log(np.sum(np.exp(m - mx), axis=1))
    loss = -float(np.mean(logq))
    if not np.isfinite(loss):
        bad = int(np.argmin(np.isfinite(logq)))
        raise TrainingDivergenceError(f"non-finite loss at batch index {bad}")

    gamma = np.exp(m - (mx + np.log(np.sum(np.exp(m - mx), axis=1, keepdims=True))))

    d_logits = -(gamma - alpha) / n                       # (n, K)
    diff = theta[:, None, :] - mu                         # (n, K, d)
    d_mu = -(gamma[:, :, None] * diff / var) / n          # (n, K, d)
    d_var = -(gamma[:, :, None] * 0.5 * (diff * diff / (var * var) - 1.0 / var)) / n
    d_z = d_var * melu_grad(z, head.elu_slope)

    head_grads = {
        "w_alpha": d_logits.T @ feats,
        "b_alpha": d_logits.sum(axis=0),
        "w_mu": np.einsum("nkd,ns->kds", d_mu, feats),
        "b_mu": d_mu.sum(axis=0),
        "w_sigma": np.einsum("nkd,ns->kds", d_z, feats),
        "b_sigma": d_z.sum(axis=0),
    }

    feature_grads = None
    if isinstance(feature_map, NeuralFeatureMap):
        d_feats = (
            d_logits @ head.w_alpha
            + np.einsum("nkd,kds->ns", d_mu, head.w_mu)
            + np.einsum("nkd,kds->ns", d_z, head.w_sigma)
        )
        feature_grads = nn_backprop(feature_map, x_batch, d_feats)
    return loss, head_grads, feature_grads


def _apply_map(feature_map, x):
    if isinstance(feature_map, NeuralFeatureMap):
        return np.atleast_2d(apply_nn(feature_map, x))
    if isinstance(feature_map, RFFMap):
        return np.atleast_2d(apply_rff(feature_map, x))
    raise ConfigurationError(f"unsupported feature map {type(feature_map).__name__}")


@dataclass(frozen=True)
class TrainerConfig:
    """MDN training hyperparameters (conventional defaults, recorded in
    every training report)."""

    num_components: int = 5
    variance_floor: float = 1e-6
    elu_slope: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 100
    epochs: int = 500
    validation_fraction: float = 0.1
    patience: int = 50
    seed: int = 0


@dataclass
class TrainingReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    config: TrainerConfig | None = None


class _Adam:
    """Adaptive-moment minibatch optimizer over a flat parameter vector."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grads
        self.v = self.b2 * self.v + (1 - self.b2) * grads * grads
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _ParamPack:
    """Flatten/unflatten a list of named arrays into one vector."""

    def __init__(self, arrays: dict):
        self.keys = list(arrays)
        self.shapes = {k: arrays[k].shape for k in self.keys}
        self.sizes = {k: arrays[k].size for k in self.keys}
        self.total = sum(self.sizes.values())

    def flatten(self, arrays: dict) -> np.ndarray:
        return np.concatenate([np.ravel(arrays[k]) for k in self.keys])

    def unflatten(self, vec: np.ndarray) -> dict:
        out, i = {}, 0
        for k in self.keys:
            out[k] = vec[i:i + self.sizes[k]].reshape(self.shapes[k])
            i += self.sizes[k]
        return out


def init_head(
    num_components: int,
    theta_dim: int,
    feature_dim: int,
    rng: np.random.Generator,
    theta_samples: np.ndarray | None = None,
    config: TrainerConfig | None = None,
) -> MixtureHeadWeights:
    """Head init: small random weights, mean biases spread over the
    training parameters' quantiles so components do not collapse."""
    cfg = config or TrainerConfig()
    scale = 1.0 / np.sqrt(feature_dim)
    k, d, s = num_components, theta_dim, feature_dim
    b_mu = np.zeros((k, d))
    b_sigma = np.zeros((k, d))
    if theta_samples is not None:
        ts = np.atleast_2d(theta_samples)
        qs = (np.arange(k) + 1.0) / (k + 1.0)
        for j in range(d):
            vals = np.quantile(ts[:, j], qs)
            b_mu[:, j] = rng.permutation(vals)
            spread = max(np.std(ts[:, j]) / max(k, 2), 1e-3)
            b_sigma[:, j] = _melu_inverse(spread * spread, cfg.elu_slope)
    return MixtureHeadWeights(
        w_alpha=rng.normal(0, scale, (k, s)),
        b_alpha=np.zeros(k),
        w_mu=rng.normal(0, scale, (k, d, s)),
        b_mu=b_mu,
        w_sigma=rng.normal(0, scale, (k, d, s)),
        b_sigma=b_sigma,
        elu_slope=cfg.elu_slope,
        variance_floor=cfg.variance_floor,
    )


def _melu_inverse(target: float, elu_slope: float) -> float:
    """z with melu(z) = target; target must exceed 1 - elu_slope."""
    if target > 1.0:
        return target - 1.0
    t = max(target, 1.0 - elu_slope + 1e-9)
    return float(np.log((t - 1.0) / elu_slope + 1.0))


def train(
    config: TrainerConfig,
    x_train: np.ndarray,
    theta_train: np.ndarray,
    feature_map,
):
    """Fit the mixture head (and a neural feature map, if given) by
    minibatch Adam with early stopping on a held-out split.

    Returns (head, feature_map, report); the feature map is returned
    unchanged for RFF and updated in place for the neural family.
    """
    x = np.atleast_2d(np.asarray(x_train, dtype=float))
    theta = np.atleast_2d(np.asarray(theta_train, dtype=float))
    n = x.shape[0]
    if n < 10 * config.num_components:
        raise ConfigurationError(
            f"need at least {10 * config.num_components} pairs for "
            f"{config.num_components} components, got {n}"
        )
    rng = np.random.default_rng(config.seed)

    n_val = max(1, int(round(config.validation_fraction * n)))
    perm = rng.permutation(n)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    x_tr, th_tr = x[tr_idx], theta[tr_idx]
    x_val, th_val = x[val_idx], theta[val_idx]

    train_nn = isinstance(feature_map, NeuralFeatureMap)
    head = init_head(
        config.num_components, theta.shape[1],
        feature_map.num_features, rng, theta_samples=th_tr, config=config,
    )

    head_arrays = {k: getattr(head, k) for k in
                   ("w_alpha", "b_alpha", "w_mu", "b_mu", "w_sigma", "b_sigma")}
    nn_arrays = ({f"nn_{k}": getattr(feature_map, k)
                  for k in ("w1", "b1", "w2", "b2")} if train_nn else {})
    pack = _ParamPack({**head_arrays, **nn_arrays})
    params = pack.flatten({**head_arrays, **nn_arrays})
    adam = _Adam(pack.total, config.learning_rate)

    # RFF features are frozen, so precompute them once.
    feats_tr = None if train_nn else _apply_map(feature_map, x_tr)
    feats_val = None if train_nn else _apply_map(feature_map, x_val)

    def set_params(vec):
        parts = pack.unflatten(vec)
        for k in head_arrays:
            getattr(head, k)[...] = parts[k]
        if train_nn:
            for k in ("w1", "b1", "w2", "b2"):
                getattr(feature_map, k)[...] = parts[f"nn_{k}"]

    def eval_loss(xs, ths, feats):
        if feats is None:
            feats = _apply_map(feature_map, xs)
        loss, _, _ = loss_and_gradient(head, feature_map, xs, ths, feats=feats)
        return loss

    report = TrainingReport(config=config)
    best = (np.inf, params.copy(), 0)
    n_tr = x_tr.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n_tr)
        ep_loss = 0.0
        for start in range(0, n_tr, config.batch_size):
            idx = order[start:start + config.batch_size]
            set_params(params)
            feats_b = None if feats_tr is None else feats_tr[idx]
            loss, hg, fg = loss_and_gradient(
                head, feature_map, x_tr[idx], th_tr[idx], feats=feats_b
            )
            grads = dict(hg)
            if train_nn:
                grads.update({f"nn_{k}": v for k, v in fg.items()})
            params = adam.step(params, pack.flatten(grads))
            ep_loss += loss * len(idx)
        set_params(params)
        report.train_loss.append(ep_loss / n_tr)
        vl = eval_loss(x_val, th_val, feats_val)
        report.val_loss.append(vl)
        if vl < best[0] - 1e-12:
            best = (vl, params.copy(), epoch)
        elif epoch - best[2] >= config.patience:
            break
    set_params(best[1])
    report.best_epoch = best[2]
    return head, feature_map, report


def select_lengthscale(
    candidates,
    x_train: np.ndarray,
    theta_train: np.ndarray,
    build_map,
    config: TrainerConfig,
    folds: int = 3,
):
    """k-fold cross-validated lengthscale choice.

    ``build_map(sigma)`` constructs the feature map for a candidate.
    Returns the candidate maximizing mean held-out log-density; exact
    ties break toward the larger lengthscale.
    """
    cands = list(candidates)
    if not cands:
        raise ConfigurationError("need at least one lengthscale candidate")
    if len(cands) == 1:
        return cands[0]
    x = np.atleast_2d(np.asarray(x_train, dtype=float))
    theta = np.atleast_2d(np.asarray(theta_train, dtype=float))
    n = x.shape[0]
    idx = np.random.default_rng(config.seed).permutation(n)
    fold_ids = np.array_split(idx, folds)

    scores = []
    for sigma in cands:
        total, count = 0.0, 0
        for f in range(folds):
            te = fold_ids[f]
            tr = np.concatenate([fold_ids[g] for g in range(folds) if g != f])
            fmap = build_map(sigma)
            head, fmap, _ = train(config, x[tr], theta[tr], fmap)
            feats = _apply_map(fmap, x[te])
            alpha, mu, var, _, _ = _forward_batch(head, feats)
            logn = _log_components(theta[te], mu, var)
            m = logn + np.log(alpha + 1e-300)
            mx = m.max(axis=1, keepdims=True)
            total += float(np.sum(mx[:, 0] + np.log(np.sum(np.exp(m - mx), axis=1))))
            count += len(te)
        scores.append(total / count)
    best_score = max(scores)
    best = max(c for c, sc in zip(cands, scores) if sc == best_score)
    return best


def held_out_log_density(head, feature_map, x, theta) -> float:
    """Mean conditional log-density of (theta, x) pairs under the model."""
    feats = _apply_map(feature_map, np.atleast_2d(x))
    alpha, mu, var, _, _ = _forward_batch(head, feats)
    logn = _log_components(np.atleast_2d(theta), mu, var)
    m = logn + np.log(alpha + 1e-300)
    mx = m.max(axis=1, keepdims=True)
    return float(np.mean(mx[:, 0] + np.log(np.sum(np.exp(m - mx), axis=1))))
