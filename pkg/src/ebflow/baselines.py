"""Comparison estimators for the grid prior: mean-field CAVI, Gibbs-MCEM and Langevin-MCEM.

CAVI and Gibbs-MCEM work in the original coefficients ``theta``; both keep
the residual ``y - X E[theta]`` (resp. ``y - X theta``) up to date one
coordinate at a time.  Langevin-MCEM samples the smoothed ``phi`` with the
same Langevin step as EBflow but refits the prior by a full sequence-model
NPMLE every ``T_iter`` iterations.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .flow import FitResult, Trace, ula_step
from .inference import PosteriorMeanAccumulator, tv_distance
from .model import ChainState, GridPrior, mixture_responsibilities
from .penalty import ConvergenceWarning, solve_frequency_prior
from .seqnpmle import SeqObjective, solve_seq_npmle


def _softmax(logits):
    m = logits.max()
    e = np.exp(logits - m)
    return e / e.sum()


def _coordinate_logits(xtx, z, support, weights, sigma_sq):
    """``-||x_j||^2 b_k^2 / (2 sigma^2) + z b_k / sigma^2 + log w_k`` with ``z = x_j^T (partial residual)``."""
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return -0.5 * xtx * support ** 2 / sigma_sq + z * support / sigma_sq + logw


# -- CAVI --------------------------------------------------------------------

@dataclass
class MeanFieldState:
    """Product posterior ``q_j`` (rows of ``q``), its means, and the residual ``y - X E_q[theta]``."""

    q: np.ndarray
    means: np.ndarray
    residual: np.ndarray

    @classmethod
    def uniform(cls, model, support):
        K = len(support)
        q = np.full((model.p, K), 1.0 / K)
        means = q @ support
        return cls(q, means, model.y - model.X @ means)


def cavi_coordinate_update(state, j, prior, model, col_sq=None):
    """Replace ``q_j`` by its exact minimizer given the other factors (in place).

    ``q_j(b_k) propto w_k exp(-||x_j||^2 b_k^2 / (2 sigma^2) + x_j^T r_{-j} b_k / sigma^2)``
    where ``r_{-j} = y - X_{-j} E[theta_{-j}]``.
    """
    x = model.X[:, j]
    xtx = float(x @ x) if col_sq is None else col_sq[j]
    partial = state.residual + x * state.means[j]
    row = _softmax(_coordinate_logits(xtx, float(x @ partial), prior.support, prior.weights,
                                      model.sigma_sq))
    state.q[j] = row
    state.means[j] = row @ prior.support
    state.residual = partial - x * state.means[j]
    return state


def cavi_prior_update(state, prior, penalty=None):
    """Minimize ``-sum_k qbar_k log w_k + penalty(w)``; closed form ``qbar`` without penalty."""
    qbar = state.q.mean(axis=0)
    w = solve_frequency_prior(qbar, penalty, w0=prior.weights)
    return GridPrior(prior.support, w)


def cavi_objective(state, prior, model):
    """Mean-field free energy per coordinate, up to the constant ``n log(2 pi sigma^2) / (2p)``."""
    b = prior.support
    var = state.q @ b ** 2 - state.means ** 2
    col_sq = np.einsum("ij,ij->j", model.X, model.X)
    fit = (state.residual @ state.residual + col_sq @ var) / (2.0 * model.sigma_sq)
    q = state.q
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.where(q > 0, q * np.log(prior.weights), 0.0).sum()
        ent = np.where(q > 0, q * np.log(q), 0.0).sum()
    return float((fit - cross + ent) / model.p)


def fit_cavi(model, prior0, n_iter=1000, penalty=None, truth=None, trace_every=1):
    """Coordinate ascent over ``(q_1, ..., q_p, g)`` in that order, ``n_iter`` times.

    The ``seq_nll`` column of the trace holds the mean-field objective after
    each full sweep; ``theta_hat`` is the vector of variational means.
    """
    state = MeanFieldState.uniform(model, prior0.support)
    col_sq = np.einsum("ij,ij->j", model.X, model.X)
    prior = prior0
    trace = Trace.empty(n_iter)
    for t in range(n_iter):
        for j in range(model.p):
            cavi_coordinate_update(state, j, prior, model, col_sq)
        prior = cavi_prior_update(state, prior, penalty)
        trace.seq_nll[t] = cavi_objective(state, prior, model)
        if truth is not None and ((t + 1) % trace_every == 0 or t == n_iter - 1):
            trace.tv[t] = tv_distance(prior, truth)
    return FitResult(prior=prior, trace=trace, state=state, theta_hat=state.means.copy(),
                     info={"q": state.q})


# -- Gibbs-MCEM --------------------------------------------------------------

@dataclass
class GibbsState:
    """Current atom indices of ``theta``, the residual ``y - X theta``, and per-coordinate tallies."""

    idx: np.ndarray
    residual: np.ndarray
    counts: np.ndarray

    @classmethod
    def nearest_zero(cls, model, support):
        k0 = int(np.argmin(np.abs(support)))
        idx = np.full(model.p, k0)
        theta = support[idx]
        return cls(idx, model.y - model.X @ theta, np.zeros((model.p, len(support)), dtype=np.int64))

    def theta(self, support):
        return np.asarray(support)[self.idx]


def gibbs_conditional(state, j, prior, model, col_sq=None):
    """Conditional law of ``theta_j`` given the other coordinates, over the grid."""
    x = model.X[:, j]
    xtx = float(x @ x) if col_sq is None else col_sq[j]
    partial = state.residual + x * prior.support[state.idx[j]]
    return _softmax(_coordinate_logits(xtx, float(x @ partial), prior.support, prior.weights,
                                       model.sigma_sq))


def gibbs_sweep(state, prior, model, rng, col_sq=None, tally=True):
    """Resample ``theta_1, ..., theta_p`` in order from their conditionals (in place)."""
    b = prior.support
    X = model.X
    if col_sq is None:
        col_sq = np.einsum("ij,ij->j", X, X)
    u = rng.random(model.p)
    for j in range(model.p):
        probs = gibbs_conditional(state, j, prior, model, col_sq)
        cdf = np.cumsum(probs)
        k = min(int(np.searchsorted(cdf, u[j] * cdf[-1], side="right")), len(b) - 1)
        old = state.idx[j]
        if k != old:
            state.residual = state.residual - X[:, j] * (b[k] - b[old])
            state.idx[j] = k
        if tally:
            state.counts[j, k] += 1
    return state


def _check_burn_in(burn_in, total):
    if burn_in > total:
        raise ValueError("burn_in exceeds total_iters")


def fit_gibbs_mcem(model, prior0, T_iter=100, total_iters=10200, penalty=None, rng=None,
                   truth=None, burn_in=200, trace_every=10, n_post=0):
    """Gibbs-sampling Monte-Carlo EM.

    The first ``burn_in`` sweeps keep the prior frozen; afterwards the prior is
    refit every ``T_iter`` sweeps from the tallies of those sweeps (which are
    then cleared).  With ``n_post > 0`` the posterior mean is the average of
    ``theta`` over that many further sweeps under the final prior.
    """
    if rng is None:
        raise ValueError("an explicit random generator is required")
    _check_burn_in(burn_in, total_iters)
    b = prior0.support
    state = GibbsState.nearest_zero(model, b)
    col_sq = np.einsum("ij,ij->j", model.X, model.X)
    prior = prior0
    trace = Trace.empty(total_iters)
    since = 0
    for t in range(total_iters):
        joint = t >= burn_in
        gibbs_sweep(state, prior, model, rng, col_sq, tally=joint)
        if joint:
            since += 1
            if since == T_iter:
                freq = state.counts.sum(axis=0).astype(float)
                prior = GridPrior(b, solve_frequency_prior(freq, penalty, w0=prior.weights))
                state.counts[:] = 0
                since = 0
        if truth is not None and ((t + 1) % trace_every == 0 or t == total_iters - 1):
            trace.tv[t] = tv_distance(prior, truth)
    result = FitResult(prior=prior, trace=trace, state=state)
    if n_post > 0:
        acc = np.zeros(model.p)
        for _ in range(n_post):
            gibbs_sweep(state, prior, model, rng, col_sq, tally=False)
            acc += b[state.idx]
        result.theta_hat = acc / n_post
        result.n_post = n_post
    return result


# -- Langevin-MCEM -----------------------------------------------------------

def fit_langevin_mcem(ctx, prior0, T_iter=100, eta_phi=1.0, total_iters=10200, penalty=None,
                      S=10000, rng=None, truth=None, burn_in=200, burn_in_eta=1.0,
                      trace_every=10, n_post=0, mstep_tol=1e-12, mstep_max_iter=5000):
    """Langevin Monte-Carlo EM in the smoothed parametrization.

    Runs plain Langevin steps with the prior frozen; after burn-in, every
    ``T_iter`` iterations it pools the ``p * T_iter`` sampled coordinates,
    subsamples ``S`` of them without replacement (all of them if the pool is
    smaller), and refits the prior by the penalized sequence-model NPMLE,
    warm-started at the current weights.
    """
    if rng is None:
        raise ValueError("an explicit random generator is required")
    _check_burn_in(burn_in, total_iters)
    b = prior0.support
    tau = ctx.tau
    prior = prior0
    state = ChainState(np.zeros(ctx.p), 0, rng)
    trace = Trace.empty(total_iters)
    pool = []
    not_converged = 0
    resp, logmix = mixture_responsibilities(state.phi, b, prior.weights, tau)
    postmean = resp @ b
    for t in range(total_iters):
        joint = t >= burn_in
        eta = eta_phi if joint else burn_in_eta
        trace.eta_phi[t] = eta
        state = ula_step(ctx, prior, state, eta, postmean=postmean)
        if joint:
            pool.append(state.phi.copy())
            if len(pool) == T_iter:
                coords = np.concatenate(pool)
                if S < coords.size:
                    coords = coords[rng.choice(coords.size, size=S, replace=False)]
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", ConvergenceWarning)
                    prior = solve_seq_npmle(SeqObjective(coords, tau, b), penalty,
                                            tol=mstep_tol, max_iter=mstep_max_iter,
                                            w0=prior.weights)
                not_converged += any(issubclass(c.category, ConvergenceWarning) for c in caught)
                pool = []
        resp, logmix = mixture_responsibilities(state.phi, b, prior.weights, tau)
        postmean = resp @ b
        trace.seq_nll[t] = -logmix.mean()
        if truth is not None and ((t + 1) % trace_every == 0 or t == total_iters - 1):
            trace.tv[t] = tv_distance(prior, truth)
    result = FitResult(prior=prior, trace=trace, state=state,
                       info={"mstep_not_converged": int(not_converged)})
    if n_post > 0:
        acc = PosteriorMeanAccumulator(prior, tau)
        for _ in range(n_post):
            state = ula_step(ctx, prior, state, eta_phi, postmean=postmean)
            resp, _ = mixture_responsibilities(state.phi, b, prior.weights, tau)
            postmean = resp @ b
            acc.update(state.phi, postmean)
        est = acc.result()
        result.state = state
        result.theta_hat = est.theta_hat
        result.n_post = est.n_samples_used
        result.autocorr = acc.lag1_autocorrelation()
    return result
