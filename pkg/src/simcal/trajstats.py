"""Sufficient statistics of state-action trajectories.

The statistic vector is [state-difference/action cross terms, mean of
state differences, variance of state differences]; downstream consumers
(model input, ABC distances, real observations) always see it
standardized by the training set's per-dimension mean/std.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .simulators import Trajectory

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class StatsSchema:
    """Statistic layout plus the fitted standardization.

    Output length is D_s * D_a + 2 * D_s: cross block (state-major),
    then per-dimension mean and population variance of the state
    differences.
    """

    state_dim: int
    action_dim: int
    mean: np.ndarray
    std: np.ndarray

    @property
    def stat_dim(self) -> int:
        return self.state_dim * self.action_dim + 2 * self.state_dim

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1] != self.stat_dim:
            raise ContractError(
                f"statistic length {raw.shape[-1]} != schema {self.stat_dim}"
            )
        return (raw - self.mean) / self.std


def stat_dim(state_dim: int, action_dim: int) -> int:
    return state_dim * action_dim + 2 * state_dim


def compute_stats(traj: Trajectory) -> np.ndarray:
    """Raw (unstandardized) statistic vector of one trajectory.

    Cross terms are divided by T so early-terminated episodes encode
    dynamics, not length; the variance is the population (1/T) variance.
    """
    states = np.asarray(traj.states, dtype=float)
    actions = np.atleast_2d(np.asarray(traj.actions, dtype=float))
    t = actions.shape[0]
    if t < 2:
        raise ContractError(f"trajectory too short for statistics (T={t})")
    tau = np.diff(states, axis=0)          # (T, D_s)
    cross = tau.T @ actions / t            # (D_s, D_a)
    mean = tau.mean(axis=0)
    var = tau.var(axis=0)                  # population variance
    return np.concatenate([cross.ravel(), mean, var])


def fit_standardizer(raw_stats, state_dim: int, action_dim: int) -> StatsSchema:
    """Per-dimension mean/std over the training statistics; std floored
    so constant dimensions standardize to zero."""
    raw = np.atleast_2d(np.asarray(raw_stats, dtype=float))
    if raw.shape[0] < 2:
        raise ContractError("need at least 2 vectors to fit the standardizer")
    if raw.shape[1] != stat_dim(state_dim, action_dim):
        raise ContractError("statistic length does not match dimensions")
    mean = raw.mean(axis=0)
    std = np.maximum(raw.std(axis=0), STD_FLOOR)
    return StatsSchema(state_dim=state_dim, action_dim=action_dim,
                       mean=mean, std=std)


def real_observation(trajectories, schema: StatsSchema) -> np.ndarray:
    """Average the raw statistics of several real rollouts, then
    standardize with the training schema."""
    trajs = list(trajectories)
    if not trajs:
        raise ContractError("need at least one trajectory")
    raw = np.mean([compute_stats(tr) for tr in trajs], axis=0)
    return schema.standardize(raw)
