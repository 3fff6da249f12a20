"""Frozen feature maps from summary statistics to feature space.

Two families: quasi-Monte-Carlo random Fourier features approximating a
shift-invariant kernel (RBF or Matern 5/2), and a small two-layer tanh
network whose weights are trained jointly with the mixture head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quasirandom as qr
from .errors import ConfigurationError, ContractError

KERNEL_FAMILIES = ("rbf", "matern52")


@dataclass(frozen=True)
class KernelConfig:
    """Shift-invariant kernel choice for the RFF map.

    ``lengthscale`` is a shared positive scalar or a per-input-dimension
    array; ``num_features`` is the total (even) feature count, split into
    cos/sin halves.
    """

    family: str = "rbf"
    lengthscale: float | np.ndarray = 1.0
    num_features: int = 200

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigurationError(f"unknown kernel family {self.family!r}")
        if self.num_features < 2 or self.num_features % 2 != 0:
            raise ConfigurationError("num_features must be a positive even integer")
        if np.any(np.asarray(self.lengthscale) <= 0):
            raise ConfigurationError("lengthscale must be strictly positive")


@dataclass(frozen=True)
class RFFMap:
    """Frozen random-Fourier projection.

    frequencies: (s/2, d); biases: (s/2,) in [-pi, pi]. The 1/sqrt(s/2)
    normalizer makes ||phi(x)|| = 1 exactly.
    """

    frequencies: np.ndarray
    biases: np.ndarray
    kernel: KernelConfig

    @property
    def input_dim(self) -> int:
        return self.frequencies.shape[1]

    @property
    def num_features(self) -> int:
        return 2 * self.frequencies.shape[0]


def build_rff(kernel: KernelConfig, input_dim: int) -> RFFMap:
    """Draw RFF frequencies/biases deterministically from the Halton
    sequence.

    RBF with lengthscale sigma uses omega ~ N(0, sigma^-2 I), matching
    the exact kernel exp(-r^2 / (2 sigma^2)); Matern 5/2 uses the
    Student-t(5) spectral law at scale 1/sigma, with one reserved Halton
    column feeding the chi-square coordinate. The final Halton column
    maps affinely to the bias in [-pi, pi].
    """
    if input_dim < 1:
        raise ContractError("input_dim must be >= 1")
    n_freq = kernel.num_features // 2
    inv_ls = 1.0 / np.broadcast_to(
        np.asarray(kernel.lengthscale, dtype=float), (input_dim,)
    )
    if kernel.family == "rbf":
        pts = qr.halton_points(input_dim + 1, n_freq)
        freqs = qr.inverse_normal_cdf(pts[:, :input_dim]) * inv_ls
    else:  # matern52: Student-t(5) spectral law, chi-square from 5 columns
        pts = qr.halton_points(input_dim + 6, n_freq)
        freqs = qr.to_student_t(
            pts[:, : input_dim + 5], dof=5.0, chi_columns=5
        ) * inv_ls
    biases = 2.0 * np.pi * pts[:, -1] - np.pi
    return RFFMap(frequencies=freqs, biases=biases, kernel=kernel)


def apply_rff(rff: RFFMap, x: np.ndarray) -> np.ndarray:
    """Feature vector [cos(wx+b), sin(wx+b)] / sqrt(s/2).

    Accepts a single vector (d,) or a batch (n, d); returns (s,) or (n, s).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != rff.input_dim:
        raise ContractError(
            f"input dimension {xb.shape[1]} != map dimension {rff.input_dim}"
        )
    proj = xb @ rff.frequencies.T + rff.biases
    norm = 1.0 / np.sqrt(rff.frequencies.shape[0])
    feats = norm * np.concatenate([np.cos(proj), np.sin(proj)], axis=1)
    return feats[0] if single else feats


def exact_kernel(kernel: KernelConfig, x: np.ndarray, y: np.ndarray) -> float:
    """Closed-form kernel value, the oracle the RFF estimate is tested
    against."""
    inv_ls = 1.0 / np.asarray(kernel.lengthscale, dtype=float)
    r = np.linalg.norm((np.asarray(x) - np.asarray(y)) * inv_ls)
    if kernel.family == "rbf":
        return float(np.exp(-0.5 * r * r))
    a = np.sqrt(5.0) * r
    return float((1.0 + a + a * a / 3.0) * np.exp(-a))


@dataclass
class NeuralFeatureMap:
    """Two-layer tanh network phi(x) = tanh(W2 tanh(W1 x + b1) + b2).

    Outputs are bounded in (-1, 1) componentwise. Weights are plain
    arrays so the trainer can update them in place.
    """

    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (s, h)
    b2: np.ndarray  # (s,)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def num_features(self) -> int:
        return self.w2.shape[0]

    def copy(self) -> "NeuralFeatureMap":
        return NeuralFeatureMap(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy()
        )


def init_neural_map(
    input_dim: int, hidden_dim: int, num_features: int, rng: np.random.Generator
) -> NeuralFeatureMap:
    """Random tanh-network init with 1/sqrt(fan_in) weight scale."""
    w1 = rng.normal(0.0, 1.0 / np.sqrt(input_dim), (hidden_dim, input_dim))
    b1 = np.zeros(hidden_dim)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (num_features, hidden_dim))
    b2 = np.zeros(num_features)
    return NeuralFeatureMap(w1, b1, w2, b2)


def apply_nn(nn: NeuralFeatureMap, x: np.ndarray) -> np.ndarray:
    """Forward pass; single vector (d,) or batch (n, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != nn.input_dim:
        raise ContractError(
            f"input dimension {xb.shape[1]} != map dimension {nn.input_dim}"
        )
    h = np.tanh(xb @ nn.w1.T + nn.b1)
    out = np.tanh(h @ nn.w2.T + nn.b2)
    return out[0] if single else out


def nn_feature_jacobian(nn: NeuralFeatureMap, x: np.ndarray) -> dict:
    """Gradients of every feature output w.r.t. every network weight.

    Returns {"w1": (s, h, d), "b1": (s, h), "w2": (s, s, h), "b2": (s, s)}.
    Used by the gradient-oracle tests; training uses the cheaper
    vector-Jacobian product in :func:`nn_backprop`.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != nn.input_dim:
        raise ContractError("nn_feature_jacobian expects a single input vector")
    h = np.tanh(nn.w1 @ x + nn.b1)          # (h,)
    phi = np.tanh(nn.w2 @ h + nn.b2)        # (s,)
    dphi = 1.0 - phi * phi                  # (s,)
    dh = 1.0 - h * h                        # (h,)
    s, hd = nn.num_features, nn.hidden_dim

    j_b2 = np.diag(dphi)                                   # (s, s)
    j_w2 = np.zeros((s, s, hd))
    j_w2[np.arange(s), np.arange(s), :] = dphi[:, None] * h
    # dphi_i/dh_k = dphi_i * w2[i,k]; chain into layer 1
    back = dphi[:, None] * nn.w2                           # (s, h)
    j_b1 = back * dh                                       # (s, h)
    j_w1 = j_b1[:, :, None] * x[None, None, :]             # (s, h, d)
    return {"w1": j_w1, "b1": j_b1, "w2": j_w2, "b2": j_b2}


def nn_backprop(nn: NeuralFeatureMap, x_batch: np.ndarray, d_phi: np.ndarray) -> dict:
    """Vector-Jacobian product: given dL/dphi per batch row, return
    summed gradients w.r.t. the network weights."""
    xb = np.atleast_2d(np.asarray(x_batch, dtype=float))
    h = np.tanh(xb @ nn.w1.T + nn.b1)
    phi = np.tanh(h @ nn.w2.T + nn.b2)
    g2 = d_phi * (1.0 - phi * phi)          # (n, s)
    g1 = (g2 @ nn.w2) * (1.0 - h * h)       # (n, h)
    return {
        "w2": g2.T @ h,
        "b2": g2.sum(axis=0),
        "w1": g1.T @ xb,
        "b1": g1.sum(axis=0),
    }
