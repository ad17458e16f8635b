"""Joint Langevin / Fisher-Rao iteration for the prior weights (EBflow).

Each iteration advances the smoothed coefficient vector ``phi`` by one
unadjusted Langevin step under the current prior, then moves the prior
weights by one Fisher-Rao step towards the EM image computed from the
coordinates of the new ``phi``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure
from .inference import PosteriorMeanAccumulator, tv_distance
from .model import ChainState, GridPrior, log_normal_kernel, neg_log_posterior_grad, shrinkage
from .penalty import SplinePenalty, fisher_rao_update

__all__ = ["StepSchedule", "SplinePenalty", "Trace", "FitResult", "ula_step", "weight_step",
           "weight_bracket", "fit_ebflow"]


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes for ``burn_in`` frozen-prior iterations followed by ``T`` joint iterations.

    ``kind="constant"`` uses ``eta_phi`` and ``eta_w`` throughout.
    ``kind="loglinear"`` decays ``eta_phi`` geometrically from ``eta_start``
    (first joint iteration) to ``eta_end`` (last) and sets
    ``eta_w = ratio * eta_phi``.  Burn-in iterations use ``burn_in_eta``
    with the weights frozen.
    """

    kind: str = "loglinear"
    T: int = 10000
    eta_start: float = 1.0
    eta_end: float = 0.1
    ratio: float = 0.01
    eta_phi: float = 1.0
    eta_w: float = 0.01
    burn_in: int = 200
    burn_in_eta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "loglinear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.T < 0 or self.burn_in < 0:
            raise ValueError("T and burn_in must be nonnegative")
        if self.kind == "constant":
            steps = (self.eta_phi, self.eta_w)
            w_max = self.eta_w
        else:
            steps = (self.eta_start, self.eta_end, self.ratio)
            w_max = self.ratio * max(self.eta_start, self.eta_end)
        if min(steps + (self.burn_in_eta,)) <= 0:
            raise ValueError("step sizes must be positive")
        if w_max > 1:
            raise ValueError("weight step size must not exceed 1")

    @classmethod
    def loglinear(cls, start=1.0, end=0.1, T=10000, ratio=0.01, burn_in=200):
        return cls("loglinear", T=T, eta_start=start, eta_end=end, ratio=ratio, burn_in=burn_in)

    @classmethod
    def constant(cls, eta_phi=1.0, eta_w=0.01, T=10000, burn_in=200):
        return cls("constant", T=T, eta_phi=eta_phi, eta_w=eta_w, burn_in=burn_in)

    @property
    def total(self):
        return self.burn_in + self.T

    def joint_steps(self):
        """``(eta_phi, eta_w)`` arrays over the ``T`` joint iterations."""
        if self.kind == "constant":
            return np.full(self.T, float(self.eta_phi)), np.full(self.T, float(self.eta_w))
        if self.T == 1:
            eta = np.array([float(self.eta_start)])
        else:
            rate = (self.eta_end / self.eta_start) ** (1.0 / (self.T - 1))
            eta = self.eta_start * rate ** np.arange(self.T)
        return eta, self.ratio * eta

    def arrays(self):
        """Per-iteration ``(eta_phi, eta_w)`` including burn-in (where ``eta_w = 0``)."""
        ep, ew = self.joint_steps()
        return (np.concatenate([np.full(self.burn_in, float(self.burn_in_eta)), ep]),
                np.concatenate([np.zeros(self.burn_in), ew]))


@dataclass
class Trace:
    """Per-iteration records; ``tv`` is NaN off the evaluation cadence."""

    iter: np.ndarray
    eta_phi: np.ndarray
    eta_w: np.ndarray
    tv: np.ndarray
    seq_nll: np.ndarray
    clamp_count: np.ndarray

    @classmethod
    def empty(cls, n):
        return cls(np.arange(1, n + 1), np.zeros(n), np.zeros(n), np.full(n, np.nan),
                   np.full(n, np.nan), np.zeros(n, dtype=int))

    def __len__(self):
        return self.iter.size

    def truncate(self, n):
        return Trace(*(getattr(self, f)[:n] for f in
                       ("iter", "eta_phi", "eta_w", "tv", "seq_nll", "clamp_count")))


@dataclass
class FitResult:
    prior: GridPrior
    trace: Trace
    state: object = None
    theta_hat: np.ndarray = None
    n_post: int = 0
    autocorr: np.ndarray = field(default=None, repr=False)
    phi_samples: np.ndarray = field(default=None, repr=False)
    info: dict = field(default_factory=dict)


def ula_step(ctx, prior, state, eta_phi, precond=False, postmean=None):
    """One unadjusted Langevin step for ``phi``.

    Plain steps are rescaled by ``1 / lambda_max(A + tau^{-2} I)``::

        phi' = phi - (eta/L) grad U(phi) + sqrt(2 eta / L) xi

    Preconditioned steps use ``Q = A + tau^{-2} I``::

        phi' = phi - eta Q^{-1} grad U(phi) + sqrt(2 eta) Q^{-1/2} xi

    One standard normal vector is drawn from ``state.rng`` per call, even
    when ``eta_phi = 0``.

    Raises:
        NumericalFailure: the new iterate is not finite.
    """
    phi = state.phi
    grad = neg_log_posterior_grad(ctx, prior, phi, postmean=postmean)
    xi = state.rng.standard_normal(phi.size)
    if precond:
        if not ctx.has_precond:
            raise ValueError("context was built without a preconditioner")
        new = phi - eta_phi * ctx.precond_inv(grad) + np.sqrt(2.0 * eta_phi) * ctx.precond_inv_sqrt(xi)
    else:
        h = eta_phi / ctx.lambda_max_drift
        new = phi - h * grad + np.sqrt(2.0 * h) * xi
    if not np.all(np.isfinite(new)):
        raise NumericalFailure(
            f"non-finite Langevin iterate at iteration {state.iter + 1}; "
            f"max|phi| before step = {np.max(np.abs(phi)):.3g}")
    return ChainState(new, state.iter + 1, state.rng)


def _responsibilities(logk, weights):
    with np.errstate(divide="ignore"):
        logits = logk + np.log(weights)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1)
    return e / s[:, None], m[:, 0] + np.log(s)


def weight_bracket(prior, phi, tau):
    """``(1/p) sum_j N_tau(b_k - phi_j) / sum_i w_i N_tau(b_i - phi_j) - 1`` per atom.

    NaN at atoms with zero weight (the bracket is multiplied by ``w_k`` in the update).
    """
    resp, _ = _responsibilities(log_normal_kernel(phi, prior.support, tau), prior.weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(prior.weights > 0, resp.mean(axis=0) / prior.weights, np.nan) - 1.0


def weight_step(prior, phi, eta_w, tau, penalty=None, return_clamps=False):
    """Fisher-Rao step on the prior weights using the coordinates of ``phi``.

    Without a penalty this is ``(1 - eta_w) w + eta_w * EM(w)``, exactly
    nonnegative for ``eta_w <= 1``.  With a penalty the centred spline
    gradient is subtracted inside the bracket; negative weights are clamped
    to zero and the vector renormalized.
    """
    if not 0 < eta_w <= 1:
        raise ValueError("eta_w must lie in (0, 1]")
    resp, _ = _responsibilities(log_normal_kernel(phi, prior.support, tau), prior.weights)
    w, clamps = fisher_rao_update(prior.weights, resp.mean(axis=0), eta_w, penalty)
    out = GridPrior(prior.support, w)
    return (out, clamps) if return_clamps else out


def fit_ebflow(ctx, init_prior, schedule, penalty=None, total_iters=None, precond=False,
               rng=None, truth=None, phi0=None, trace_every=10, n_post=0, post_eta=None,
               thin=1, keep_samples=False):
    """Run EBflow.

    Args:
        ctx (ReparamContext): From :func:`ebflow.model.build_reparam` (with
            ``precond=True`` for the preconditioned sampler).
        init_prior (GridPrior): Starting weights; must be strictly positive.
        schedule (StepSchedule): Burn-in and joint step sizes.
        penalty (SplinePenalty, optional): Smoothing penalty on the weights.
        total_iters (int, optional): Stop early after this many iterations
            (default ``schedule.total``).
        precond (bool): Use the preconditioned Langevin step.
        rng (np.random.Generator): Chain randomness.
        truth (GridPrior, optional): If given, TV to truth is traced every
            ``trace_every`` iterations and at the last one.
        phi0 (array, optional): Starting iterate (default zeros).
        n_post (int): Extra iterations with frozen weights used to estimate
            the posterior mean of ``theta``.
        post_eta (float, optional): Step size for those iterations (default:
            the last step size of the schedule).
        thin (int): Use every ``thin``-th post-fit iterate.
        keep_samples (bool): Store the thinned post-fit iterates.

    Returns:
        FitResult
    """
    if np.any(init_prior.weights <= 0):
        raise ValueError("initial prior must be strictly positive on every atom")
    if rng is None:
        raise ValueError("an explicit random generator is required")
    total = schedule.total if total_iters is None else int(total_iters)
    if total > schedule.total:
        raise ValueError(f"total_iters={total} exceeds the schedule length {schedule.total}")
    eta_phi, eta_w = schedule.arrays()
    b = init_prior.support
    tau = ctx.tau
    w = init_prior.weights.copy()
    state = ChainState(np.zeros(ctx.p) if phi0 is None else np.array(phi0, dtype=float), 0, rng)
    trace = Trace.empty(total)
    trace.eta_phi[:] = eta_phi[:total]
    trace.eta_w[:] = eta_w[:total]

    resp, _ = _responsibilities(log_normal_kernel(state.phi, b, tau), w)
    postmean = resp @ b
    prior = init_prior
    for t in range(total):
        state = ula_step(ctx, prior, state, eta_phi[t], precond=precond, postmean=postmean)
        logk = log_normal_kernel(state.phi, b, tau)
        with np.errstate(divide="ignore"):
            logits = logk + np.log(w)
        shift = logits.max(axis=1)
        e = np.exp(logits - shift[:, None])
        mix = e.sum(axis=1)
        if eta_w[t] > 0:
            rbar = (e.T @ (1.0 / mix)) / e.shape[0]
            w_new, trace.clamp_count[t] = fisher_rao_update(w, rbar, eta_w[t], penalty)
            # the new weights only rescale kernel columns; reuse e instead of a second exp
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(w > 0, w_new / w, 0.0)
            w = w_new
            prior = GridPrior(b, w)
            e = e * scale
            mix = e.sum(axis=1)
            if not np.all(mix > 0):
                # every nearby atom was clamped away; recompute in log-space
                with np.errstate(divide="ignore"):
                    logits = logk + np.log(w)
                shift = logits.max(axis=1)
                e = np.exp(logits - shift[:, None])
                mix = e.sum(axis=1)
        postmean = (e @ b) / mix
        trace.seq_nll[t] = -np.mean(shift + np.log(mix))
        if truth is not None and ((t + 1) % trace_every == 0 or t == total - 1):
            trace.tv[t] = tv_distance(prior, truth)

    result = FitResult(prior=prior, trace=trace, state=state,
                       info={"clamps": int(trace.clamp_count.sum()), "tau_sq": ctx.tau_sq})
    if n_post > 0:
        eta = float(post_eta if post_eta is not None else eta_phi[total - 1] if total else 1.0)
        acc = PosteriorMeanAccumulator(prior, tau)
        samples = []
        for s in range(n_post):
            state = ula_step(ctx, prior, state, eta, precond=precond, postmean=postmean)
            postmean = shrinkage(state.phi, prior, tau)
            if (s + 1) % thin == 0:
                acc.update(state.phi, postmean)
                if keep_samples:
                    samples.append(state.phi.copy())
        est = acc.result()
        result.state = state
        result.theta_hat = est.theta_hat
        result.n_post = est.n_samples_used
        result.autocorr = acc.lag1_autocorrelation()
        if keep_samples:
            result.phi_samples = np.array(samples)
    return result
