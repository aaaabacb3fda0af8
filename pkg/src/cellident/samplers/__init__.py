"""Markov-chain Monte Carlo samplers and chain diagnostics."""

from .mcmc import (SAMPLERS, Chain, RecursiveCovariance, SamplerConfig, SearchTarget, demc_gamma,
                   demc_proposal, haario_adapt, haario_bardenet_scale, mala_log_q, mala_step,
                   metropolis_rw_step, run_sampler)
from .diagnostics import (ESS_FLOOR, PosteriorSummary, autocorrelation, credible_interval, ess, rhat,
                          summary)

__all__ = [
    "SAMPLERS", "Chain", "RecursiveCovariance", "SamplerConfig", "SearchTarget", "demc_gamma",
    "demc_proposal", "haario_adapt", "haario_bardenet_scale", "mala_log_q", "mala_step",
    "metropolis_rw_step", "run_sampler",
    "ESS_FLOOR", "PosteriorSummary", "autocorrelation", "credible_interval", "ess", "rhat", "summary",
]
