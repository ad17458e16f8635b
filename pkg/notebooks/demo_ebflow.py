"""
Learning the prior while sampling
=================================

A Langevin chain on the smoothed coefficients and a Fisher-Rao step on the
prior weights run side by side.  This is a scaled-down version of the
reference experiment (the full one uses n=500, p=1000 and 10200 iterations).
"""

import numpy as np

from ebflow import rng as rngmod
from ebflow.datagen import DesignSpec, PriorSpec, generate
from ebflow.flow import StepSchedule, fit_ebflow
from ebflow.inference import prediction_mse, tv_distance
from ebflow.model import GridPrior, build_reparam
from ebflow.penalty import SplinePenalty

model, truth, X_new = generate(PriorSpec("gaussian"), DesignSpec("iid", 250, 500), 0.5, seed=0,
                               n_new=500)
ctx = build_reparam(model)
print(f"sigma^2 = {model.sigma_sq:.3f}, tau^2 = {ctx.tau_sq:.4f}")

# %%
# Decaying vs constant Langevin step.  On a short run the constant step can
# look better; the full-length comparison is acceptance criterion 2 in the tests.
pen = SplinePenalty.for_prior(truth, 0.003)
schedules = {
    "log-linear 1 -> 0.1": StepSchedule.loglinear(1.0, 0.1, T=4000, ratio=0.01),
    "constant 1": StepSchedule.constant(1.0, 0.01, T=4000),
}
for name, sched in schedules.items():
    res = fit_ebflow(ctx, GridPrior.uniform(), sched, pen, rng=rngmod.make_rng(1, rngmod.CHAIN),
                     truth=truth, trace_every=500, n_post=2000)
    tv = res.trace.tv[~np.isnan(res.trace.tv)]
    print(f"{name:22s} TV every 500 its: {np.round(tv, 3)}")
    print(f"{'':22s} prediction MSE {prediction_mse(res.theta_hat, model.theta_star, X_new):.3f}")

# %%
# Compare the estimated and true weights on a coarse view
w = res.prior.weights[:60].reshape(12, 5).sum(axis=1)
t = truth.weights[:60].reshape(12, 5).sum(axis=1)
for b, a, c in zip(truth.support[:60:5], w, t):
    print(f"[{b:+.1f}, {b + 0.4:+.1f}]  est {a:.3f}  true {c:.3f}")
print("TV", round(tv_distance(res.prior, truth), 3))
