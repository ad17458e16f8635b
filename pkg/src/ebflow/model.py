"""Core types: grid priors, linear-model instances and the smoothed
reparametrization ``phi = theta + z`` with ``z ~ N(0, tau^2 I)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import NonPositiveSigma, NumericalFailure

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

_SUM_TOL = 1e-12
_SPACING_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridPrior:
    """Discrete prior ``sum_k w_k delta_{b_k}`` on an equally spaced grid.

    Attributes:
        support (np.ndarray): Strictly increasing, equally spaced atoms ``b_1 < ... < b_K``.
        weights (np.ndarray): Nonnegative weights summing to one.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        b = _frozen(self.support)
        w = _frozen(self.weights)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("support must be a 1-d grid with K >= 2 atoms")
        if w.shape != b.shape:
            raise ValueError(f"weights shape {w.shape} does not match support {b.shape}")
        gaps = np.diff(b)
        if np.any(gaps <= 0):
            raise ValueError("support must be strictly increasing")
        if np.max(np.abs(gaps - gaps[0])) > _SPACING_TOL * abs(gaps[0]):
            raise ValueError("support must be equally spaced")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "support", b)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, M=3.0, K=61):
        b = np.linspace(-M, M, K)
        return cls(b, np.full(K, 1.0 / K))

    @classmethod
    def point_mass(cls, support, k):
        w = np.zeros(len(support))
        w[k] = 1.0
        return cls(support, w)

    @property
    def K(self):
        return self.support.size

    @property
    def spacing(self):
        return (self.support[-1] - self.support[0]) / (self.K - 1)

    @property
    def M(self):
        return max(abs(self.support[0]), abs(self.support[-1]))

    def with_weights(self, weights):
        """Same grid, new weights (renormalized)."""
        w = np.asarray(weights, dtype=float)
        return GridPrior(self.support, w / w.sum())

    def mean(self):
        return float(self.weights @ self.support)


@dataclass(frozen=True)
class LinearModel:
    """``y = X theta + eps`` with ``eps ~ N(0, sigma_sq I)``."""

    X: np.ndarray
    y: np.ndarray
    sigma_sq: float
    theta_star: np.ndarray = None

    def __post_init__(self):
        X = _frozen(self.X)
        y = _frozen(self.y)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if y.shape != (X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if not self.sigma_sq > 0:
            raise ValueError("sigma_sq must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma_sq", float(self.sigma_sq))
        if self.theta_star is not None:
            t = _frozen(self.theta_star)
            if t.shape != (X.shape[1],):
                raise ValueError("theta_star length must equal the number of columns of X")
            object.__setattr__(self, "theta_star", t)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class ReparamContext:
    """Quantities precomputed once per fit for the phi-parametrization.

    ``A = X^T Sigma^{-1} X`` and ``b_vec = X^T Sigma^{-1} y`` are cached so the
    Langevin drift only needs one p x p matvec.  ``yty`` holds
    ``y^T Sigma^{-1} y`` so the potential can be evaluated without X.
    """

    tau_sq: float
    sigma_factor: tuple
    A: np.ndarray
    b_vec: np.ndarray
    yty: float
    lambda_max_xxt: float
    lambda_max_drift: float
    precond_vecs: np.ndarray = field(default=None, repr=False)
    precond_vals: np.ndarray = field(default=None, repr=False)

    @property
    def tau(self):
        return float(np.sqrt(self.tau_sq))

    @property
    def p(self):
        return self.b_vec.size

    @property
    def has_precond(self):
        return self.precond_vecs is not None

    def apply_sigma_inv(self, v):
        return linalg.cho_solve(self.sigma_factor, v)

    def precond_inv(self, v):
        """Apply ``Q^{-1}`` where ``Q = A + tau^{-2} I``."""
        V, d = self.precond_vecs, self.precond_vals
        return V @ ((V.T @ v) / d)

    def precond_inv_sqrt(self, v):
        """Apply the symmetric root ``Q^{-1/2}``."""
        V, d = self.precond_vecs, self.precond_vals
        return V @ ((V.T @ v) / np.sqrt(d))


@dataclass
class ChainState:
    """Current Langevin iterate, its iteration count, and the chain's generator."""

    phi: np.ndarray
    iter: int
    rng: np.random.Generator

    @classmethod
    def zeros(cls, p, rng):
        return cls(np.zeros(p), 0, rng)


def lambda_max_gram(X, rtol=1e-10, max_iter=5000, dense_cutoff=64):
    """Largest eigenvalue of ``X X^T`` (equivalently of ``X^T X``).

    Uses power iteration on the smaller Gram matrix from the normalized
    all-ones start vector, or a dense symmetric eigensolve when
    ``min(n, p) <= dense_cutoff``.
    """
    X = np.asarray(X, dtype=float)
    G = X.T @ X if X.shape[1] <= X.shape[0] else X @ X.T
    if G.shape[0] <= dense_cutoff:
        return float(linalg.eigvalsh(G)[-1])
    v = np.ones(G.shape[0]) / np.sqrt(G.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        u = G @ v
        lam_new = float(v @ u)
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        v = u / nrm
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    # not converged; the Rayleigh quotient is still a lower bound, refine densely
    return float(linalg.eigvalsh(G)[-1])


def auto_tau_sq(sigma_sq, lambda_max_xxt):
    """Half the feasibility bound ``sigma^2 / lambda_max(X X^T)``.

    This choice minimizes ``lambda_max(X^T Sigma^{-1} X + tau^{-2} I)``.
    """
    return 0.5 * sigma_sq / lambda_max_xxt


def build_reparam(model, tau_sq="auto", precond=False):
    """Factorize ``Sigma = sigma^2 I - tau^2 X X^T`` and cache the drift pieces.

    Args:
        model (LinearModel): The regression instance.
        tau_sq (float or "auto"): Smoothing variance. ``"auto"`` uses
            ``0.5 sigma^2 / lambda_max(X X^T)``.
        precond (bool): Also eigendecompose ``Q = A + tau^{-2} I`` for the
            preconditioned sampler.

    Raises:
        NonPositiveSigma: ``tau_sq`` is outside ``(0, sigma^2/lambda_max)`` or
            the Cholesky factorization of ``Sigma`` fails.
    """
    X, y, s2 = model.X, model.y, model.sigma_sq
    lam = lambda_max_gram(X)
    if isinstance(tau_sq, str):
        if tau_sq != "auto":
            raise ValueError(f"unknown tau rule {tau_sq!r}")
        tau_sq = auto_tau_sq(s2, lam)
    tau_sq = float(tau_sq)
    if not tau_sq > 0:
        raise NonPositiveSigma(f"tau_sq must be positive, got {tau_sq}")
    if tau_sq * lam >= s2:
        raise NonPositiveSigma(
            f"tau_sq={tau_sq:.6g} violates tau_sq < sigma^2/lambda_max = {s2 / lam:.6g}")

    Sigma = s2 * np.eye(model.n) - tau_sq * (X @ X.T)
    try:
        factor = linalg.cho_factor(Sigma, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NonPositiveSigma(f"Cholesky of Sigma failed: {exc}") from exc
    Z = linalg.cho_solve(factor, X)
    A = X.T @ Z
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > 1e-8 * max(1.0, np.max(np.abs(A))):
        raise NumericalFailure(f"X^T Sigma^-1 X is not symmetric (max asymmetry {asym:.3g})")
    A = 0.5 * (A + A.T)
    b_vec = Z.T @ y
    yty = float(y @ linalg.cho_solve(factor, y))
    # Sigma shares eigenvectors with X X^T, so lambda_max(A) = L / (sigma^2 - tau^2 L).
    lam_drift = lam / (s2 - tau_sq * lam) + 1.0 / tau_sq

    vecs = vals = None
    if precond:
        Q = A + np.eye(A.shape[0]) / tau_sq
        vals, vecs = linalg.eigh(Q)
        if vals[0] <= 0:
            raise NumericalFailure("preconditioner Q is not positive definite")
    for a in (A, b_vec):
        a.flags.writeable = False
    return ReparamContext(tau_sq=tau_sq, sigma_factor=factor, A=A, b_vec=b_vec, yty=yty,
                          lambda_max_xxt=lam, lambda_max_drift=lam_drift,
                          precond_vecs=vecs, precond_vals=vals)


def log_normal_kernel(x, support, tau):
    """``log N(x_j - b_k; 0, tau^2)`` as a ``len(x) x K`` matrix."""
    d = np.subtract.outer(np.asarray(x, dtype=float), support)
    return -0.5 * (d / tau) ** 2 - np.log(tau) - LOG_SQRT_2PI


def mixture_responsibilities(x, support, weights, tau):
    """Posterior atom probabilities of ``theta`` given ``x = theta + N(0, tau^2)``.

    Returns:
        tuple(resp, logmix): ``resp[j, k] = w_k N_tau(x_j - b_k) / sum_i w_i N_tau(x_j - b_i)``
        and ``logmix[j] = log sum_k w_k N_tau(x_j - b_k)``.  Computed with
        max-subtraction; atoms with zero weight get exactly zero responsibility.
    """
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    logits = log_normal_kernel(x, support, tau) + logw
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1)
    return e / s[:, None], m[:, 0] + np.log(s)


def shrinkage(x, prior, tau):
    """Posterior mean ``E[theta_j | x_j]`` under ``prior`` with ``N(0, tau^2)`` noise."""
    resp, _ = mixture_responsibilities(x, prior.support, prior.weights, tau)
    return resp @ prior.support


def neg_log_posterior(ctx, prior, phi):
    """Potential ``U_g(phi)`` up to an additive constant (Sigma's log-determinant)."""
    phi = np.asarray(phi, dtype=float)
    _, logmix = mixture_responsibilities(phi, prior.support, prior.weights, ctx.tau)
    quad = 0.5 * (phi @ (ctx.A @ phi)) - phi @ ctx.b_vec + 0.5 * ctx.yty
    return float(quad - logmix.sum())


def neg_log_posterior_grad(ctx, prior, phi, postmean=None):
    """Gradient of ``U_g``: ``A phi - b + tau^{-2} (phi - E[theta | phi])``.

    ``postmean`` may be passed when the shrinkage map has already been
    evaluated at ``phi`` under ``prior``.
    """
    phi = np.asarray(phi, dtype=float)
    if postmean is None:
        postmean = shrinkage(phi, prior, ctx.tau)
    grad = ctx.A @ phi - ctx.b_vec + (phi - postmean) / ctx.tau_sq
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise NumericalFailure(
            f"non-finite drift at {bad.size} coordinates (first {bad[:5].tolist()}); "
            f"max|phi|={np.max(np.abs(phi)):.3g}")
    return grad
