"""Posterior means from Langevin iterates, prediction error, and distances between grid priors."""

from dataclasses import dataclass

import numpy as np

from .model import shrinkage
from .seqnpmle import SeqObjective, kl_divergence, seq_nll


@dataclass(frozen=True)
class PosteriorMeanEstimate:
    theta_hat: np.ndarray
    n_samples_used: int


class PosteriorMeanAccumulator:
    """Streaming average of the shrinkage map ``phi -> E[theta | phi]`` under a frozen prior.

    Also keeps running sums for the per-coordinate lag-1 autocorrelation of
    the raw iterates, a mixing diagnostic.
    """

    def __init__(self, prior, tau):
        self.prior = prior
        self.tau = float(tau)
        self.n = 0
        self._sum = None
        self._s1 = self._s2 = self._lag = None
        self._prev = None

    def update(self, phi, postmean=None):
        phi = np.asarray(phi, dtype=float)
        if postmean is None:
            postmean = shrinkage(phi, self.prior, self.tau)
        if self._sum is None:
            self._sum = np.zeros_like(phi)
            self._s1 = np.zeros_like(phi)
            self._s2 = np.zeros_like(phi)
            self._lag = np.zeros_like(phi)
        self._sum += postmean
        self._s1 += phi
        self._s2 += phi * phi
        if self._prev is not None:
            self._lag += phi * self._prev
        self._prev = phi.copy()
        self.n += 1

    def result(self):
        if self.n == 0:
            raise ValueError("no iterates were accumulated")
        return PosteriorMeanEstimate(self._sum / self.n, self.n)

    def lag1_autocorrelation(self):
        """Per-coordinate lag-1 autocorrelation of the accumulated iterates (NaN if < 3 iterates)."""
        if self.n < 3:
            return np.full_like(self._s1, np.nan) if self._s1 is not None else None
        mean = self._s1 / self.n
        var = self._s2 / self.n - mean ** 2
        # lagged sum pairs (t, t-1) for t = 2..n; the mean correction is approximate at O(1/n)
        cov = self._lag / (self.n - 1) - mean ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(var > 0, cov / var, np.nan)


def posterior_mean(prior, phi_iterates, tau):
    """Average of ``E[theta | phi_t]`` over an iterable of ``phi_t``.

    Raises:
        ValueError: the iterable is empty.
    """
    acc = PosteriorMeanAccumulator(prior, tau)
    for phi in phi_iterates:
        acc.update(phi)
    return acc.result()


def prediction_mse(theta_hat, theta_star, X_new):
    """``||X_new (theta_star - theta_hat)||^2 / ||X_new theta_star||^2``."""
    X_new = np.asarray(X_new, dtype=float)
    denom = np.sum((X_new @ theta_star) ** 2)
    if not denom > 0:
        raise ValueError("||X_new theta_star|| is zero")
    return float(np.sum((X_new @ (np.asarray(theta_star) - np.asarray(theta_hat))) ** 2) / denom)


def _check_same_grid(a, b):
    if a.K != b.K or not np.allclose(a.support, b.support, rtol=0, atol=1e-12):
        raise ValueError("priors are defined on different grids")


def tv_distance(a, b):
    """Half the l1 distance between the weight vectors."""
    _check_same_grid(a, b)
    return 0.5 * float(np.abs(a.weights - b.weights).sum())


def grid_w1(a, b):
    """Wasserstein-1 distance on the shared grid: ``spacing * sum_k |F_a(b_k) - F_b(b_k)|``."""
    _check_same_grid(a, b)
    diff = np.cumsum(a.weights - b.weights)[:-1]
    return float(a.spacing * np.abs(diff).sum())


def kl(a, b):
    """``KL(a || b)``; ``inf`` without absolute continuity."""
    _check_same_grid(a, b)
    return kl_divergence(a.weights, b.weights)


def identity_marginal_nll(model, prior):
    """Marginal NLL of ``y`` in the sequence model ``y_i = theta_i + N(0, sigma^2)``."""
    obj = SeqObjective(model.y, np.sqrt(model.sigma_sq), prior.support)
    return seq_nll(obj, prior.weights)
