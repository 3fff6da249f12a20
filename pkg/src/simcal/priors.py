"""Prior / proposal-prior specifications over simulator parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

UNIFORM_BOX = "uniform_box"
GAUSSIAN = "gaussian"
IMPROPER = "improper"


@dataclass(frozen=True)
class PriorSpec:
    """Uniform box, Gaussian, or improper (flat everywhere) prior.

    Uniform boxes carry per-dimension [low, high]; Gaussians carry mean
    and a symmetric positive-definite covariance.
    """

    kind: str
    low: np.ndarray | None = None
    high: np.ndarray | None = None
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == UNIFORM_BOX:
            low = np.asarray(self.low, dtype=float)
            high = np.asarray(self.high, dtype=float)
            if low.shape != high.shape or np.any(low >= high):
                raise ConfigurationError("uniform box requires low < high per dimension")
            object.__setattr__(self, "low", low)
            object.__setattr__(self, "high", high)
        elif self.kind == GAUSSIAN:
            mean = np.asarray(self.mean, dtype=float).reshape(-1)
            cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise ConfigurationError("Gaussian prior covariance must be SPD") from exc
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "cov", cov)
        elif self.kind != IMPROPER:
            raise ConfigurationError(f"unknown prior kind {self.kind!r}")

    @property
    def dim(self) -> int:
        if self.kind == UNIFORM_BOX:
            return self.low.shape[0]
        if self.kind == GAUSSIAN:
            return self.mean.shape[0]
        raise ConfigurationError("improper prior has no fixed dimension")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.kind == UNIFORM_BOX:
            return rng.uniform(self.low, self.high, size=(count, self.dim))
        if self.kind == GAUSSIAN:
            chol = np.linalg.cholesky(self.cov)
            z = rng.standard_normal((count, self.dim))
            return self.mean + z @ chol.T
        raise ConfigurationError("cannot sample from an improper prior")

    def log_volume(self) -> float:
        """log of the box volume (uniform case only)."""
        if self.kind != UNIFORM_BOX:
            raise ConfigurationError("log_volume applies to uniform boxes only")
        return float(np.sum(np.log(self.high - self.low)))


def uniform_box(low, high) -> PriorSpec:
    return PriorSpec(kind=UNIFORM_BOX, low=np.asarray(low, float), high=np.asarray(high, float))


def gaussian_prior(mean, cov) -> PriorSpec:
    return PriorSpec(kind=GAUSSIAN, mean=np.asarray(mean, float), cov=np.asarray(cov, float))


def improper_prior() -> PriorSpec:
    return PriorSpec(kind=IMPROPER)
