"""scikit-learn style wrappers around fitting problems.

``X`` holds the excitation as two columns ``[time_s, current_A]`` and ``y`` the
measured voltage, so an estimator drops into ordinary array pipelines::

    est = ParameterEstimator(parameters=[{"name": "R_c", "lower": 1e-3, "upper": 0.05}])
    est.fit(X, y)
    est.params_["R_c"]
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .costs import COSTS, GaussianLogLikelihood, LogPosterior
from .models import DaeSystem, EcmConfig, Protocol, SolverOptions, SpmConfig, build_ecm, build_spm, integrate
from .optimisers import OptimiserConfig, run
from .parameters import Parameter, ParameterSet
from .problems import Dataset, FittingProblem
from .samplers import SamplerConfig, run_sampler, summary

__all__ = ["ParameterEstimator", "BayesianEstimator", "validate_time_series", "validate_parameters",
           "resolve_model"]


def validate_time_series(X, y=None):
    """Check ``X`` is ``n x 2`` ``[time, current]`` with increasing time (and ``y`` matches)."""
    if y is None:
        X = check_array(X, dtype=float, ensure_min_samples=2)
    else:
        X, y = check_X_y(X, y, dtype=float, ensure_min_samples=2, y_numeric=True)
    if X.shape[1] != 2:
        raise ValueError(f"X must have two columns [time, current], got {X.shape[1]}")
    if np.any(np.diff(X[:, 0]) <= 0):
        raise ValueError("time column must be strictly increasing")
    return (X, y) if y is not None else X


def validate_parameters(parameters) -> ParameterSet:
    """Accept a ParameterSet, a sequence of Parameter, or a sequence of dicts."""
    if isinstance(parameters, ParameterSet):
        return parameters
    if parameters is None or len(parameters) == 0:
        raise ValueError("at least one parameter to estimate is required")
    items = [p if isinstance(p, Parameter) else Parameter.from_dict(p) for p in parameters]
    return ParameterSet(items)


def resolve_model(model) -> DaeSystem:
    """``None``/``"spm"``, ``"ecm"``, a config object or a ready DaeSystem."""
    if model is None or model == "spm":
        return build_spm()
    if model == "ecm":
        return build_ecm(EcmConfig())
    if isinstance(model, SpmConfig):
        return build_spm(model)
    if isinstance(model, EcmConfig):
        return build_ecm(model)
    if isinstance(model, DaeSystem):
        return model
    raise ValueError(f"cannot interpret model {model!r}")


class _Base(BaseEstimator, RegressorMixin):
    def _problem(self, X, y):
        X, y = validate_time_series(X, y)
        system = resolve_model(self.model)
        params = validate_parameters(self.parameters)
        data = Dataset.time_series(X[:, 0], X[:, 1], y)
        self.n_features_in_ = 2
        return FittingProblem(system, params, data, fixed=self.fixed, options=self.solver_options)

    def predict(self, X):
        """Simulated voltage at the times of ``X`` under its current column."""
        check_is_fitted(self, "params_")
        X = validate_time_series(X)
        proto = Protocol.from_samples(X[:, 0], X[:, 1])
        theta = dict(self.fixed or {})
        theta.update({k: v for k, v in self.params_.items() if k in self.system_.defaults})
        trace = integrate(self.system_, theta, proto, self.solver_options, keep_states=False)
        out = np.full(X.shape[0], np.nan)
        out[: trace.outputs.size] = trace.outputs
        return out


class ParameterEstimator(_Base):
    """Point estimate by minimising a cost with one of the optimisers.

    Parameters
    ----------
    model : str, config or DaeSystem, default "spm"
    parameters : sequence of Parameter or dict
    cost : str
        Key of :data:`cellident.costs.COSTS` (``sse``, ``rmse``, ``minkowski``,
        ``sum-of-power``, ``gaussian``, ``map``).
    optimiser : str
        Algorithm id.
    max_evaluations, seed, threads : int
    optimiser_options : dict, optional
        Extra :class:`OptimiserConfig` fields.
    fixed : dict, optional
        Model coefficients held fixed at non-default values.
    """

    def __init__(self, model=None, parameters=None, cost: str = "sse", optimiser: str = "cmaes",
                 max_evaluations: int = 1000, seed: int = 0, threads: int = 1,
                 optimiser_options: Mapping | None = None, fixed: Mapping | None = None,
                 solver_options: SolverOptions | None = None):
        self.model = model
        self.parameters = parameters
        self.cost = cost
        self.optimiser = optimiser
        self.max_evaluations = max_evaluations
        self.seed = seed
        self.threads = threads
        self.optimiser_options = optimiser_options
        self.fixed = fixed
        self.solver_options = solver_options

    def fit(self, X, y):
        problem = self._problem(X, y)
        if self.cost not in COSTS or self.cost.endswith("energy-density"):
            raise ValueError(f"unknown fitting cost {self.cost!r}")
        if self.cost == "map":
            cost = COSTS["map"](GaussianLogLikelihood(problem))
        else:
            cost = COSTS[self.cost](problem)
        cfg = OptimiserConfig(self.optimiser, max_evaluations=self.max_evaluations, seed=self.seed,
                              threads=self.threads, **dict(self.optimiser_options or {}))
        result = run(cost, cost.params, cfg)
        self.system_ = problem.system
        self.cost_function_ = cost
        self.result_ = result
        self.params_ = result.as_dict()
        self.cost_ = result.cost
        return self


class BayesianEstimator(_Base):
    """Posterior sampling under a Gaussian likelihood (``sigma=None`` samples the noise).

    After :meth:`fit`, ``chains_`` holds the chains, ``summary_`` the
    :class:`PosteriorSummary` and ``params_`` the posterior means.
    """

    def __init__(self, model=None, parameters=None, sigma: float | None = None,
                 sampler: str = "haario-bardenet", n_chains: int = 4, iterations: int = 2000,
                 seed: int = 0, sampler_options: Mapping | None = None, fixed: Mapping | None = None,
                 solver_options: SolverOptions | None = None, x0: Sequence[float] | None = None):
        self.model = model
        self.parameters = parameters
        self.sigma = sigma
        self.sampler = sampler
        self.n_chains = n_chains
        self.iterations = iterations
        self.seed = seed
        self.sampler_options = sampler_options
        self.fixed = fixed
        self.solver_options = solver_options
        self.x0 = x0

    def fit(self, X, y):
        problem = self._problem(X, y)
        likelihood = GaussianLogLikelihood(problem, self.sigma)
        target = LogPosterior(likelihood)
        cfg = SamplerConfig(self.sampler, n_chains=self.n_chains, iterations=self.iterations, seed=self.seed,
                            **dict(self.sampler_options or {}))
        chains = run_sampler(target, likelihood.params, cfg, self.x0)
        self.system_ = problem.system
        self.chains_ = chains
        self.summary_ = summary(chains)
        self.params_ = dict(zip(likelihood.params.names, self.summary_.mean.tolist()))
        return self
