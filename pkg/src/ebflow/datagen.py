"""Simulation instances: truncated grid priors, random designs, calibrated noise."""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import rng as rngmod
from .model import GridPrior, LinearModel

PRIOR_KINDS = ("gaussian", "cauchy", "skew", "bimodal", "custom")
DESIGN_KINDS = ("identity", "iid", "block02corr0.9", "block10corr0.5", "custom")


@dataclass(frozen=True)
class PriorSpec:
    kind: str = "gaussian"
    M: float = 3.0
    K: int = 61
    weights: tuple = None  # only for kind="custom"


@dataclass(frozen=True)
class DesignSpec:
    kind: str = "iid"
    n: int = 500
    p: int = 1000
    covariance: tuple = None  # p x p nested tuple, only for kind="custom"

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise ValueError(f"unknown design kind {self.kind!r}")
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if self.kind == "identity" and self.n != self.p:
            raise ValueError("identity design requires n == p")
        if self.kind == "block02corr0.9" and self.p % 2:
            raise ValueError("block02corr0.9 requires even p")
        if self.kind == "block10corr0.5" and self.p % 10:
            raise ValueError("block10corr0.5 requires p divisible by 10")
        if self.kind == "custom" and self.covariance is None:
            raise ValueError("custom design requires a covariance")


def _mixture_pdf(x, comps):
    return sum(c * stats.norm.pdf(x, m, s) for c, m, s in comps)


def prior_density(kind, x):
    """Untruncated density of the named prior."""
    if kind == "gaussian":
        return stats.norm.pdf(x)
    if kind == "cauchy":
        return stats.cauchy.pdf(x, loc=0.0, scale=0.6)
    if kind == "skew":
        return _mixture_pdf(x, [(1 / 3, -2.0, 0.5), (1 / 3, -1.5, 1.0), (1 / 3, 0.0, 2.0)])
    if kind == "bimodal":
        return _mixture_pdf(x, [(0.5, -1.5, 0.5), (0.5, 1.5, 0.5)])
    raise ValueError(f"unknown prior kind {kind!r}")


def make_prior(spec):
    """Discretize the named density onto ``K`` equally spaced points of ``[-M, M]``."""
    b = np.linspace(-spec.M, spec.M, spec.K)
    if spec.kind == "custom":
        if spec.weights is None or len(spec.weights) != spec.K:
            raise ValueError("custom prior needs K weights")
        w = np.asarray(spec.weights, dtype=float)
    else:
        w = prior_density(spec.kind, b)
    return GridPrior(b, w / w.sum())


def _block_cov(size, rho):
    return np.full((size, size), rho) + (1.0 - rho) * np.eye(size)


def make_design(spec, rng):
    """Design matrix for ``spec``.

    Random designs have i.i.d. rows ``N(0, C / n)`` so that ``||X||_op = O(1)``;
    ``C`` is the identity, 2x2 blocks with correlation 0.9, 10x10 blocks with
    correlation 0.5, or a user covariance.
    """
    n, p = spec.n, spec.p
    if spec.kind == "identity":
        return np.eye(p)
    Z = rng.standard_normal((n, p))
    if spec.kind == "iid":
        return Z / np.sqrt(n)
    if spec.kind == "custom":
        L = np.linalg.cholesky(np.asarray(spec.covariance, dtype=float))
        return Z @ L.T / np.sqrt(n)
    size, rho = (2, 0.9) if spec.kind == "block02corr0.9" else (10, 0.5)
    L = np.linalg.cholesky(_block_cov(size, rho))
    X = (Z.reshape(n, p // size, size) @ L.T).reshape(n, p)
    return X / np.sqrt(n)


def simulate(prior, X, noise_fraction, rng):
    """Draw ``theta ~ prior`` (i.i.d. over atoms) and ``y = X theta + eps``.

    The noise variance is ``s^2 f / (1 - f)`` where ``s^2`` is the sample
    variance of the entries of ``X theta``, so the noise explains a fraction
    ``f`` of the variance of ``y``.
    """
    if not 0.0 < noise_fraction < 1.0:
        raise ValueError("noise_fraction must lie in (0, 1)")
    X = np.asarray(X, dtype=float)
    idx = rng.choice(prior.K, size=X.shape[1], p=prior.weights)
    theta = prior.support[idx]
    signal = X @ theta
    s2 = float(np.var(signal, ddof=1)) if signal.size > 1 else 0.0
    if not s2 > 0.0:
        raise ValueError("X theta has zero sample variance; cannot calibrate the noise")
    sigma_sq = s2 * noise_fraction / (1.0 - noise_fraction)
    y = signal + np.sqrt(sigma_sq) * rng.standard_normal(X.shape[0])
    return LinearModel(X, y, sigma_sq, theta_star=theta)


def generate(prior_spec, design_spec, noise_fraction, seed, n_new=1000):
    """Full simulation instance from independent seeded streams.

    Returns:
        tuple(model, prior, X_new): the instance, the true grid prior, and a
        held-out design with ``n_new`` rows drawn from the same design spec
        (``None`` for the identity design).
    """
    prior = make_prior(prior_spec)
    X = make_design(design_spec, rngmod.make_rng(seed, rngmod.DESIGN))
    model = simulate(prior, X, noise_fraction, rngmod.make_rng(seed, rngmod.THETA))
    X_new = None
    if design_spec.kind != "identity":
        new_spec = DesignSpec(design_spec.kind, n_new, design_spec.p, design_spec.covariance)
        X_new = make_design(new_spec, rngmod.make_rng(seed, rngmod.DESIGN_NEW))
    return model, prior, X_new


# -- serialization ---------------------------------------------------------

def write_matrix(path, a):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    np.savetxt(path, a if a.ndim == 2 else a[:, None], fmt="%.17g", delimiter=",", newline="\n")


def read_matrix(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def save_dataset(directory, model, meta, X_new=None):
    """Write ``X.csv``, ``y.csv``, ``theta_star.csv`` (and ``X_new.csv``) plus ``meta.json``."""
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, "X.csv"), model.X)
    write_matrix(os.path.join(directory, "y.csv"), model.y)
    if model.theta_star is not None:
        write_matrix(os.path.join(directory, "theta_star.csv"), model.theta_star)
    if X_new is not None:
        write_matrix(os.path.join(directory, "X_new.csv"), X_new)
    meta = dict(meta, sigma_sq=model.sigma_sq)
    with open(os.path.join(directory, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(directory):
    """Inverse of :func:`save_dataset`; returns ``(model, meta, X_new)``."""
    with open(os.path.join(directory, "meta.json")) as f:
        meta = json.load(f)
    X = read_matrix(os.path.join(directory, "X.csv"))
    y = read_matrix(os.path.join(directory, "y.csv"))[:, 0]
    theta_path = os.path.join(directory, "theta_star.csv")
    theta = read_matrix(theta_path)[:, 0] if os.path.exists(theta_path) else None
    new_path = os.path.join(directory, "X_new.csv")
    X_new = read_matrix(new_path) if os.path.exists(new_path) else None
    return LinearModel(X, y, meta["sigma_sq"], theta_star=theta), meta, X_new


def spec_to_dict(spec):
    return {k: v for k, v in asdict(spec).items() if v is not None}
