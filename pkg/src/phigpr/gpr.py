"""
Exact Gaussian conditioning of target values on noisy observations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import ContractError, IllConditionedError
from .prior_stats import JointGp

__all__ = ["ObservationSet", "GpPosterior", "cholesky", "condition", "band", "write_posterior_csv"]

RETRY_JITTER = 1e-8
NEGATIVE_VARIANCE_TOL = 1e-8


@dataclass
class ObservationSet:
    """Observed values in the same (channel, time) order as the prior's observed layout."""

    values: np.ndarray
    noise_std: object = 0.0
    truth_member: int | None = None
    noise_seed: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ContractError("observations must be finite")


@dataclass
class GpPosterior:
    mean: np.ndarray
    cov: np.ndarray
    layout: list = field(default_factory=list)

    @property
    def var(self) -> np.ndarray:
        return np.maximum(np.diag(self.cov), 0.0)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def select(self, channel):
        """(times, mean, std) of the rows belonging to ``channel``."""
        rows = [i for i, (ch, _) in enumerate(self.layout) if ch == channel]
        if not rows:
            raise ContractError(f"channel {channel} not in posterior layout")
        times = np.array([self.layout[i][1] for i in rows])
        return times, self.mean[rows], self.std[rows]


def cholesky(k):
    """Lower Cholesky factor, retrying once with 1e-8 * max-diagonal jitter."""
    try:
        return linalg.cholesky(k, lower=True, check_finite=True)
    except linalg.LinAlgError:
        pass
    jittered = k.copy()
    jittered[np.diag_indices_from(jittered)] += RETRY_JITTER * np.max(np.abs(np.diag(k)))
    try:
        return linalg.cholesky(jittered, lower=True)
    except linalg.LinAlgError:
        # D from LDL^T has the same inertia as the matrix; its smallest eigenvalue
        # (D may hold 2x2 blocks) is the most useful diagnostic
        _, d, _ = linalg.ldl(jittered, lower=True)
        pivot = float(np.min(np.linalg.eigvalsh(d)))
        raise IllConditionedError(f"prior covariance is not positive definite (pivot {pivot:.3e})",
                                  pivot=pivot) from None


def condition(prior: JointGp, obs: ObservationSet) -> GpPosterior:
    """Posterior of the targets given observations.

    mean = m_t + K_ot^T K_oo^{-1} (x - m_o)
    cov  = K_tt - K_ot^T K_oo^{-1} K_ot
    """
    if obs.values.shape != prior.mean_obs.shape:
        raise ContractError(
            f"observation vector has shape {obs.values.shape}, prior expects {prior.mean_obs.shape}")
    chol = cholesky(prior.k_oo)
    resid = obs.values - prior.mean_obs
    alpha = linalg.cho_solve((chol, True), resid)
    mean = prior.mean_target + prior.k_ot.T @ alpha

    v = linalg.solve_triangular(chol, prior.k_ot, lower=True)
    cov = prior.k_tt - v.T @ v
    cov = 0.5 * (cov + cov.T)
    d = np.diag(cov)
    if d.size and d.min() < -NEGATIVE_VARIANCE_TOL:
        raise IllConditionedError(f"posterior variance {d.min():.3e} is negative beyond roundoff",
                                  pivot=float(d.min()))
    cov[np.diag_indices_from(cov)] = np.maximum(d, 0.0)
    return GpPosterior(mean, cov, list(prior.target_layout))


def band(posterior: GpPosterior, multiplier: float = 2.0):
    """(mean, lower, upper) with lower/upper = mean -/+ multiplier * std."""
    half = multiplier * posterior.std
    return posterior.mean, posterior.mean - half, posterior.mean + half


def write_posterior_csv(path, rows):
    """Write ``channel, t, mean, std, lower2, upper2, truth`` rows.

    ``rows`` yields tuples ``(channel_label, t, mean, std, truth_or_None)``.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "t", "mean", "std", "lower2", "upper2", "truth"])
        for label, t, mu, sd, truth in rows:
            writer.writerow([label, repr(float(t)), repr(float(mu)), repr(float(sd)),
                             repr(float(mu - 2 * sd)), repr(float(mu + 2 * sd)),
                             "" if truth is None else repr(float(truth))])
    return path
