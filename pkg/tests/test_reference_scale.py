"""Baseline regression guard on the reference instance (slow: ten 10200-iteration fits)."""

import numpy as np
import pytest

from ebflow import rng as rngmod
from ebflow.baselines import fit_langevin_mcem
from ebflow.model import GridPrior
from ebflow.penalty import SplinePenalty

import reference_runs as ref


@pytest.mark.slow
def test_langevin_mcem_tracks_ebflow():
    model, truth, ctx = ref.reference_instance()
    pen = SplinePenalty.for_prior(truth, ref.LAM)
    tvs = []
    for seed in ref.CHAIN_SEEDS:
        res = fit_langevin_mcem(ctx, GridPrior.uniform(), T_iter=100, eta_phi=1.0, total_iters=10200,
                                penalty=pen, S=10000, rng=rngmod.make_rng(seed, rngmod.CHAIN),
                                truth=truth, burn_in=200, trace_every=100)
        tvs.append(res.trace.tv[-1])
        assert res.info["mstep_not_converged"] == 0
    assert abs(np.mean(tvs) - ref.mean_tv("loglinear")) <= 0.05
