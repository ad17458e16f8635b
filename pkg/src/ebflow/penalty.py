"""Second-difference smoothing penalty and the shared Fisher-Rao simplex update."""

import warnings
from dataclasses import dataclass, field

import numpy as np


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at ``max_iter`` and returned its best iterate."""


def second_difference(K, spacing):
    """``(K-2) x K`` matrix with rows ``(1, -2, 1) / spacing^2``."""
    if K < 3:
        return np.zeros((0, K))
    D = np.zeros((K - 2, K))
    i = np.arange(K - 2)
    D[i, i] = 1.0
    D[i, i + 1] = -2.0
    D[i, i + 2] = 1.0
    return D / spacing ** 2


@dataclass(frozen=True)
class SplinePenalty:
    """Discretized ``(lam/2) int g''(theta)^2 d theta`` for weights on a grid.

    With ``g(b_k) ~ w_k / spacing`` the penalty is
    ``(lam * spacing / 2) * ||D w / spacing||^2`` and its gradient in ``w`` is
    ``lam * D^T D w / spacing``.
    """

    lam: float
    K: int
    spacing: float
    D: np.ndarray = field(init=False, repr=False)
    DtD: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("penalty weight must be nonnegative")
        D = second_difference(self.K, self.spacing)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "DtD", D.T @ D)

    @classmethod
    def for_prior(cls, prior, lam):
        return cls(float(lam), prior.K, float(prior.spacing))

    def value(self, w):
        r = self.D @ (np.asarray(w) / self.spacing)
        return 0.5 * self.lam * self.spacing * float(r @ r)

    def grad(self, w):
        return self.lam * (self.DtD @ w) / self.spacing


def _active(penalty):
    return penalty is not None and penalty.lam > 0


def fisher_rao_update(w, target, eta, penalty=None):
    """One simplex-preserving step ``w + eta * w * [target / w - 1 - (grad - <w, grad>)]``.

    ``target`` is the EM image of ``w`` (a probability vector); without a
    penalty the step is the convex combination ``(1 - eta) w + eta target``
    and nonnegativity is exact.  With a penalty the centred spline gradient is
    subtracted inside the bracket; negative entries are clamped to zero.

    Returns:
        tuple(w_new, n_clamped)
    """
    w = np.asarray(w, dtype=float)
    new = (1.0 - eta) * w + eta * target
    n_clamped = 0
    if _active(penalty):
        G = penalty.grad(w)
        new = new - eta * w * (G - w @ G)
        neg = new < 0
        n_clamped = int(neg.sum())
        if n_clamped:
            new[neg] = 0.0
    return new / new.sum(), n_clamped


def penalized_loglik_objective(counts, w, penalty=None):
    """``-sum_k c_k log w_k + penalty(w)`` for frequencies ``c`` summing to one."""
    c = np.asarray(counts, dtype=float)
    w = np.asarray(w, dtype=float)
    pos = c > 0
    if np.any(w[pos] <= 0):
        return np.inf
    val = -float(c[pos] @ np.log(w[pos]))
    if _active(penalty):
        val += penalty.value(w)
    return val


def newton_simplex(value, derivs, w, tol, max_iter=100):
    """Damped Newton for a smooth convex function restricted to ``sum(w) = 1``, ``w > 0``.

    ``value(w)`` gives the objective and ``derivs(w)`` its gradient and
    Hessian.  Steps are cut to stay strictly inside the simplex and halved
    until an Armijo decrease holds.  Stops when the Newton decrement is at
    most ``tol * max(|f|, 1)``.

    Returns:
        tuple(w, converged)
    """
    K = w.size
    fw = value(w)
    kkt = np.zeros((K + 1, K + 1))
    kkt[:K, K] = 1.0
    kkt[K, :K] = 1.0
    for _ in range(max_iter):
        g, H = derivs(w)
        kkt[:K, :K] = H
        try:
            d = np.linalg.solve(kkt, np.r_[-g, 0.0])[:K]
        except np.linalg.LinAlgError:
            return w, False
        dec = -(g @ d)
        if not np.isfinite(dec):
            return w, False
        if dec <= tol * max(abs(fw), 1.0):
            return w, True
        neg = d < 0
        s = min(1.0, 0.99 * np.min(-w[neg] / d[neg])) if neg.any() else 1.0
        while True:
            cand = w + s * d
            fc = value(cand)
            if fc <= fw - 0.25 * s * dec or s < 1e-14:
                break
            s *= 0.5
        if not fc <= fw:
            return w, False
        w, fw = cand, fc
    return w, False


BARRIER_PATH = tuple(10.0 ** -k for k in range(2, 15))


def solve_frequency_prior(counts, penalty=None, w0=None, tol=1e-12, max_iter=100000):
    """Minimize ``-sum_k c_k log w_k + penalty(w)`` over the simplex.

    Without a penalty the minimizer is ``c`` itself.  Otherwise the problem is
    convex and is solved by equality-constrained Newton.  Zero counts put the
    optimum on the boundary, so those cases follow a log-barrier path, which
    amounts to adding ``mu`` to every count while ``mu`` shrinks to 1e-14
    (tiny counts below 1e-8 take the same path).
    If Newton stalls, monotone Fisher-Rao descent (``max_iter`` steps) takes
    over.  The result is never worse than ``w0``.
    """
    c = np.asarray(counts, dtype=float)
    c = c / c.sum()
    if not _active(penalty):
        return c.copy()
    K = c.size
    w = np.full(K, 1.0 / K) if w0 is None else np.asarray(w0, dtype=float)
    # zeros are absorbing under multiplicative steps and fatal for the barrier
    w = 0.9 * w + 0.1 / K
    P = penalty.lam * penalty.DtD / penalty.spacing
    ok = True
    for mu in ((0.0,) if c.min() > 1e-8 else BARRIER_PATH):
        cm = c + mu
        w, ok = newton_simplex(lambda v: -cm @ np.log(v) + 0.5 * v @ P @ v,
                               lambda v: (-cm / v + P @ v, P + np.diag(cm / v ** 2)),
                               w, tol)
    w = np.maximum(w, 0.0)
    w /= w.sum()
    objective = lambda v: penalized_loglik_objective(c, v, penalty)  # noqa: E731
    f = objective(w)
    if not ok:
        w = simplex_descent(objective, lambda v: c, w, f, penalty, 1e-10, max_iter)
        f = objective(w)
    if w0 is not None:
        w0 = np.asarray(w0, dtype=float)
        if objective(w0) < f:
            return w0.copy()
    return w


def simplex_descent(objective, em_image, w, f, penalty, tol, max_iter, window=50):
    """Monotone Fisher-Rao descent from ``w`` (objective value ``f``).

    Each iteration tries a unit step towards ``em_image(w)`` and halves it
    until the objective does not increase.
    """
    history = [f]
    for _ in range(max_iter):
        target = em_image(w)
        eta = 1.0
        while True:
            cand, _ = fisher_rao_update(w, target, eta, penalty)
            fc = objective(cand)
            if fc <= f or eta < 1e-12:
                break
            eta *= 0.5
        if fc > f:
            break
        w, f = cand, fc
        history.append(f)
        if len(history) > window:
            old = history[-window - 1]
            if old - f <= tol * max(abs(f), 1.0):
                return w
    else:
        warnings.warn(f"solver stopped after {max_iter} iterations", ConvergenceWarning,
                      stacklevel=3)
    return w
