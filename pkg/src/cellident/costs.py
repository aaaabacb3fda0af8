"""Distance costs, likelihoods, posteriors, design objectives and identifiability.

The free functions operate on arrays: ``pred`` and ``data`` are equal-length
vectors and ``sens`` (optional) is the ``n x d`` matrix ``d pred / d theta``.
Cost classes bind those functions to a problem; calling one returns the
quantity the optimiser *minimises*, so likelihoods come back negated and design
metrics (which are maximised) come back negated as well. Gradients are with
respect to the physical parameters; drivers map them into search space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError
from .models.base import SolverError, Trace
from .parameters import Parameter, ParameterSet, Prior, Transformation
from .problems import DesignProblem, FittingProblem, InfeasibleDesign

__all__ = [
    "CostValue",
    "sse",
    "rmse",
    "minkowski",
    "sum_of_power",
    "gaussian_loglik",
    "discharge_energy",
    "gravimetric_energy_density",
    "volumetric_energy_density",
    "Cost",
    "SumSquaredError",
    "RootMeanSquaredError",
    "Minkowski",
    "SumOfPower",
    "GaussianLogLikelihood",
    "MAP",
    "LogPosterior",
    "map_objective",
    "log_posterior",
    "DesignCost",
    "GravimetricEnergyDensity",
    "VolumetricEnergyDensity",
    "IdentifiabilityReport",
    "finite_difference_hessian",
    "symmetrise",
    "hessian_identifiability",
    "COSTS",
]


@dataclass
class CostValue:
    """Scalar cost with an optional gradient; ``inf`` marks a failed evaluation."""

    value: float
    gradient: np.ndarray | None = None

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.value)

    @classmethod
    def failure(cls, worst: float = math.inf) -> "CostValue":
        return cls(worst, None)


def _residuals(pred, data):
    pred = np.asarray(pred, dtype=float)
    data = np.asarray(data, dtype=float)
    if pred.shape != data.shape:
        raise ValueError(f"prediction length {pred.shape} does not match data {data.shape}")
    return pred - data


def _sens(sens, n):
    if sens is None:
        return None
    sens = np.asarray(sens, dtype=float)
    if sens.ndim == 1:
        sens = sens[:, None]
    if sens.shape[0] != n:
        raise ValueError("sensitivity rows must match the prediction length")
    return sens


def sse(pred, data, sens=None) -> CostValue:
    """Sum of squared residuals; gradient ``2 sum r_i dy_i``."""
    r = _residuals(pred, data)
    S = _sens(sens, r.size)
    grad = None if S is None else 2.0 * (r @ S)
    return CostValue(float(r @ r), grad)


def rmse(pred, data, sens=None) -> CostValue:
    r = _residuals(pred, data)
    S = _sens(sens, r.size)
    value = math.sqrt(float(r @ r) / r.size)
    grad = None
    if S is not None:
        grad = np.zeros(S.shape[1]) if value == 0.0 else (r @ S) / (r.size * value)
    return CostValue(value, grad)


def sum_of_power(pred, data, p: float = 2.0, sens=None) -> CostValue:
    """``sum |r_i|^p`` (no root)."""
    if p < 1:
        raise ValueError("power p must be >= 1")
    r = _residuals(pred, data)
    S = _sens(sens, r.size)
    a = np.abs(r)
    grad = None if S is None else p * ((a ** (p - 1) * np.sign(r)) @ S)
    return CostValue(float(np.sum(a ** p)), grad)


def minkowski(pred, data, p: float = 2.0, sens=None) -> CostValue:
    """``(sum |r_i|^p)^(1/p)``, evaluated with max-scaling to avoid overflow at large ``p``."""
    if p < 1:
        raise ValueError("order p must be >= 1")
    r = _residuals(pred, data)
    S = _sens(sens, r.size)
    a = np.abs(r)
    top = float(np.max(a)) if a.size else 0.0
    if top == 0.0:
        return CostValue(0.0, None if S is None else np.zeros(S.shape[1]))
    w = (a / top) ** p
    value = top * float(np.sum(w)) ** (1.0 / p)
    grad = None
    if S is not None:
        # dL/dr_i = (|r_i| / L)^(p-1) sign(r_i)
        grad = (((a / value) ** (p - 1)) * np.sign(r)) @ S
    return CostValue(value, grad)


def gaussian_loglik(pred, data, sigma: float, sens=None, sigma_gradient: bool = False) -> CostValue:
    """Gaussian log-likelihood ``-n/2 ln(2 pi sigma^2) - SSE/(2 sigma^2)``.

    With ``sigma_gradient`` the derivative with respect to ``sigma`` is appended
    to the parameter gradient.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    r = _residuals(pred, data)
    n = r.size
    S = _sens(sens, n)
    e = float(r @ r)
    value = -0.5 * n * math.log(2.0 * math.pi * sigma ** 2) - e / (2.0 * sigma ** 2)
    grad = None
    if S is not None or sigma_gradient:
        parts = [] if S is None else [-(r @ S) / sigma ** 2]
        if sigma_gradient:
            parts.append(np.array([-n / sigma + e / sigma ** 3]))
        grad = np.concatenate(parts)
    return CostValue(value, grad)


def discharge_energy(trace: Trace) -> float:
    """``integral V I dt`` in Wh by the trapezoidal rule over the trace samples."""
    power = np.asarray(trace.outputs) * np.asarray(trace.currents)
    return float(np.trapezoid(power, trace.times)) / 3600.0


def gravimetric_energy_density(trace: Trace, mass: float) -> CostValue:
    """Energy per unit mass [Wh/kg] (a quantity to maximise)."""
    if not mass > 0:
        raise ValueError("mass must be positive")
    return CostValue(discharge_energy(trace) / mass)


def volumetric_energy_density(trace: Trace, volume: float) -> CostValue:
    """Energy per unit volume [Wh/m^3] (a quantity to maximise)."""
    if not volume > 0:
        raise ValueError("volume must be positive")
    return CostValue(discharge_energy(trace) / volume)


# ----------------------------------------------------------------------------
# problem-bound costs


class Cost:
    """Objective ``theta -> CostValue`` for the optimiser (always minimised).

    Subclasses implement :meth:`_compute` on a prediction. Solver failures and
    infeasible designs become ``+inf`` with no gradient.
    """

    differentiable = True
    name = "cost"

    def __init__(self, problem):
        self.problem = problem
        self.params: ParameterSet = problem.params

    @property
    def n_model(self) -> int:
        return self.problem.params.dimension

    def __call__(self, theta, gradient: bool = False) -> CostValue:
        if gradient and not self.differentiable:
            raise ConfigurationError(f"{self.name} does not provide gradients")
        theta = np.asarray(theta, dtype=float)
        try:
            pred = self.problem.evaluate(theta[: self.n_model], sensitivities=gradient)
        except (SolverError, InfeasibleDesign):
            return CostValue.failure()
        out = self._compute(pred.values, pred.sensitivities if gradient else None, theta)
        if not np.isfinite(out.value):
            return CostValue.failure()
        return out

    def _compute(self, pred, sens, theta) -> CostValue:
        raise NotImplementedError

    def residual_sse(self, theta) -> float:
        pred = self.problem.evaluate(np.asarray(theta, dtype=float)[: self.n_model])
        r = pred.values - self.problem.observations
        return float(r @ r)

    def covariance_scale(self, theta) -> float:
        """Factor ``s`` in ``cov = s H^-1`` for this cost's Hessian."""
        n = self.problem.n_observations
        return self.residual_sse(theta) / max(n - self.params.dimension, 1)


class SumSquaredError(Cost):
    name = "sse"

    def _compute(self, pred, sens, theta):
        return sse(pred, self.problem.observations, sens)

    def covariance_scale(self, theta):
        # H ~ 2 J^T J, so cov = sigma^2 (J^T J)^-1 = 2 sigma^2 H^-1
        return 2.0 * super().covariance_scale(theta)


class RootMeanSquaredError(Cost):
    name = "rmse"

    def _compute(self, pred, sens, theta):
        return rmse(pred, self.problem.observations, sens)

    def covariance_scale(self, theta):
        # near a good fit H ~ J^T J / (n rmse)
        n = self.problem.n_observations
        e = self.residual_sse(theta)
        return e / max(n - self.params.dimension, 1) / (n * math.sqrt(e / n))


class Minkowski(Cost):
    name = "minkowski"

    def __init__(self, problem, p: float = 2.0):
        super().__init__(problem)
        if p < 1:
            raise ValueError("order p must be >= 1")
        self.p = float(p)

    def _compute(self, pred, sens, theta):
        return minkowski(pred, self.problem.observations, self.p, sens)


class SumOfPower(Cost):
    name = "sum-of-power"

    def __init__(self, problem, p: float = 2.0):
        super().__init__(problem)
        if p < 1:
            raise ValueError("power p must be >= 1")
        self.p = float(p)

    def _compute(self, pred, sens, theta):
        return sum_of_power(pred, self.problem.observations, self.p, sens)

    def covariance_scale(self, theta):
        if self.p == 2.0:
            return 2.0 * super().covariance_scale(theta)
        return super().covariance_scale(theta)


def _sigma_parameter(lower=1e-4, upper=0.1, initial=None, prior: Prior | None = None):
    return Parameter("sigma", lower, upper, initial, prior, Transformation.log())


class GaussianLogLikelihood(Cost):
    """Gaussian likelihood with known ``sigma`` or ``sigma`` as an extra unknown.

    Calling the object gives the negative log-likelihood (for minimisation);
    :meth:`loglik` gives the likelihood itself. When ``sigma`` is ``None`` it is
    appended to the parameter vector as ``"sigma"`` with the supplied parameter
    (default: log-transformed on ``[1e-4, 0.1]`` V).
    """

    name = "gaussian"

    def __init__(self, problem: FittingProblem, sigma: float | None = None,
                 sigma_parameter: Parameter | None = None):
        super().__init__(problem)
        if sigma is not None and not sigma > 0:
            raise ValueError("sigma must be positive")
        self.sigma = sigma
        if sigma is None:
            self.params = problem.params.extended(sigma_parameter or _sigma_parameter())

    @property
    def estimates_sigma(self) -> bool:
        return self.sigma is None

    def _sigma(self, theta) -> float:
        return float(theta[-1]) if self.estimates_sigma else float(self.sigma)

    def loglik(self, theta, gradient: bool = False) -> CostValue:
        theta = np.asarray(theta, dtype=float)
        sigma = self._sigma(theta)
        if not sigma > 0:
            return CostValue(-math.inf)
        try:
            pred = self.problem.evaluate(theta[: self.n_model], sensitivities=gradient)
        except SolverError:
            return CostValue(-math.inf)
        out = gaussian_loglik(pred.values, self.problem.observations, sigma,
                              pred.sensitivities if gradient else None,
                              sigma_gradient=gradient and self.estimates_sigma)
        if not np.isfinite(out.value):
            return CostValue(-math.inf)
        return out

    def __call__(self, theta, gradient: bool = False) -> CostValue:
        ll = self.loglik(theta, gradient)
        if not np.isfinite(ll.value):
            return CostValue.failure()
        return CostValue(-ll.value, None if ll.gradient is None else -ll.gradient)

    def covariance_scale(self, theta):
        return 1.0


class MAP(Cost):
    """Negative log-posterior ``-(log L + log prior)`` (``P(D)`` omitted)."""

    name = "map"

    def __init__(self, likelihood: GaussianLogLikelihood):
        self.likelihood = likelihood
        self.problem = likelihood.problem
        self.params = likelihood.params
        self.differentiable = likelihood.differentiable

    def __call__(self, theta, gradient: bool = False) -> CostValue:
        lp = log_posterior(self.likelihood, theta, gradient)
        if not np.isfinite(lp.value):
            return CostValue.failure()
        return CostValue(-lp.value, None if lp.gradient is None else -lp.gradient)

    def covariance_scale(self, theta):
        return 1.0


class LogPosterior:
    """Unnormalised log-posterior for the samplers; ``-inf`` outside the prior support."""

    name = "log-posterior"

    def __init__(self, likelihood: GaussianLogLikelihood):
        self.likelihood = likelihood
        self.params = likelihood.params
        self.differentiable = likelihood.differentiable

    def __call__(self, theta, gradient: bool = False) -> CostValue:
        return log_posterior(self.likelihood, theta, gradient)


def log_posterior(likelihood: GaussianLogLikelihood, theta, gradient: bool = False) -> CostValue:
    theta = np.asarray(theta, dtype=float)
    params = likelihood.params
    prior = params.prior_logpdf(theta)
    if not np.isfinite(prior) or np.any(theta < params.lower) or np.any(theta > params.upper):
        return CostValue(-math.inf)
    ll = likelihood.loglik(theta, gradient)
    if not np.isfinite(ll.value):
        return CostValue(-math.inf)
    grad = None
    if gradient:
        g = ll.gradient
        if g.size < params.dimension:
            g = np.concatenate([g, np.zeros(params.dimension - g.size)])
        grad = g + params.prior_grad_logpdf(theta)
    return CostValue(ll.value + prior, grad)


def map_objective(likelihood: GaussianLogLikelihood, theta, gradient: bool = False) -> CostValue:
    return MAP(likelihood)(theta, gradient)


# ----------------------------------------------------------------------------
# design objectives


class DesignCost:
    """Negated design metric for minimisation; infeasible designs score ``+inf``."""

    differentiable = False
    name = "design"
    unit = ""

    def __init__(self, problem: DesignProblem):
        self.problem = problem
        self.params = problem.params

    def _metric(self, result) -> float:
        raise NotImplementedError

    def metric(self, theta) -> float:
        """Physical value (to maximise); ``-inf`` for infeasible or failed designs."""
        try:
            result = self.problem.design_evaluate(theta)
        except (InfeasibleDesign, SolverError):
            return -math.inf
        return self._metric(result)

    def __call__(self, theta, gradient: bool = False) -> CostValue:
        if gradient:
            raise ConfigurationError(f"{self.name} does not provide gradients")
        m = self.metric(theta)
        return CostValue(-m) if np.isfinite(m) else CostValue.failure()


class GravimetricEnergyDensity(DesignCost):
    name = "gravimetric-energy-density"
    unit = "Wh/kg"

    def _metric(self, result):
        return gravimetric_energy_density(result.trace, result.mass).value


class VolumetricEnergyDensity(DesignCost):
    name = "volumetric-energy-density"
    unit = "Wh/m^3"

    def _metric(self, result):
        return volumetric_energy_density(result.trace, result.volume).value


COSTS = {
    "sse": SumSquaredError,
    "rmse": RootMeanSquaredError,
    "minkowski": Minkowski,
    "sum-of-power": SumOfPower,
    "gaussian": GaussianLogLikelihood,
    "map": MAP,
    "gravimetric-energy-density": GravimetricEnergyDensity,
    "volumetric-energy-density": VolumetricEnergyDensity,
}


# ----------------------------------------------------------------------------
# identifiability


def symmetrise(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    return 0.5 * (H + H.T)


def finite_difference_hessian(f: Callable[[np.ndarray], float], x, steps) -> np.ndarray:
    """Central-difference Hessian of scalar ``f`` at ``x`` with per-axis ``steps``."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(steps, dtype=float)
    d = x.size
    f0 = f(x)
    H = np.empty((d, d))
    E = np.diag(h)
    for i in range(d):
        H[i, i] = (f(x + E[i]) - 2.0 * f0 + f(x - E[i])) / h[i] ** 2
        for j in range(i + 1, d):
            fpp = f(x + E[i] + E[j])
            fpm = f(x + E[i] - E[j])
            fmp = f(x - E[i] + E[j])
            fmm = f(x - E[i] - E[j])
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    return symmetrise(H)


@dataclass
class IdentifiabilityReport:
    """Local curvature of a cost around an optimum.

    ``hessian`` and its eigen-decomposition are in the coordinates named by
    ``space`` ("search" applies each parameter's transformation); covariance
    and standard errors are always physical (delta method).
    """

    names: tuple[str, ...]
    theta: np.ndarray
    space: str
    hessian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    positive_definite: bool
    condition: float
    scale: float
    covariance: np.ndarray | None = None
    std_errors: np.ndarray | None = None
    flags: list = field(default_factory=list)

    @property
    def weakest_direction(self) -> dict[str, float]:
        """Unit eigenvector of the smallest eigenvalue (the valley direction)."""
        v = self.eigenvectors[:, int(np.argmin(self.eigenvalues))]
        v = v * np.sign(v[np.argmax(np.abs(v))])
        return dict(zip(self.names, v.tolist()))

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "theta": self.theta.tolist(),
            "space": self.space,
            "hessian": self.hessian.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvalue_ratio": self.condition,
            "weakest_direction": self.weakest_direction,
            "positive_definite": self.positive_definite,
            "covariance_scale": self.scale,
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "std_errors": None if self.std_errors is None else dict(zip(self.names, self.std_errors.tolist())),
            "flags": list(self.flags),
        }


def hessian_identifiability(cost, theta_star, params: ParameterSet | None = None,
                            scale: float | None = None, space: str = "search",
                            elongation: float = 10.0) -> IdentifiabilityReport:
    """Finite-difference Hessian of ``cost`` at ``theta_star`` and derived covariance.

    Steps are ``1e-4 max(|x_k|, 1e-3 span_k)`` on each axis of the chosen
    coordinates. The covariance is ``scale * H^-1`` mapped to physical units;
    ``scale`` defaults to ``cost.covariance_scale`` when available, else 1.
    """
    if space not in ("search", "physical"):
        raise ValueError("space must be 'search' or 'physical'")
    params = params or cost.params
    theta = np.asarray(theta_star, dtype=float)
    if space == "search":
        x0 = params.to_search(theta)
        lo, hi = params.search_bounds()
        to_theta = params.from_search
    else:
        x0 = theta.copy()
        lo, hi = params.lower, params.upper
        to_theta = lambda x: x  # noqa: E731
    span = np.where(np.isfinite(hi - lo), hi - lo, 0.0)
    steps = 1e-4 * np.maximum(np.abs(x0), 1e-3 * span)
    steps = np.where(steps > 0, steps, 1e-8)

    def f(x):
        return float(cost(to_theta(x)).value)

    H = finite_difference_hessian(f, x0, steps)
    flags = []
    if not np.all(np.isfinite(H)):
        flags.append("non-finite Hessian (cost failed near the point)")
        H = np.where(np.isfinite(H), H, 0.0)
    w, V = np.linalg.eigh(H)
    pd = bool(np.all(w > 0))
    cond = float(w.max() / w.min()) if pd else math.inf
    if scale is None:
        scale = float(cost.covariance_scale(theta)) if hasattr(cost, "covariance_scale") else 1.0
    cov = se = None
    if pd:
        J = np.diag([p.transform.derivative(v) for p, v in zip(params, theta)]) if space == "search" \
            else np.eye(theta.size)
        cov = scale * J @ np.linalg.inv(H) @ J
        cov = symmetrise(cov)
        se = np.sqrt(np.diag(cov))
        if cond > elongation:
            flags.append(f"elongated valley: eigenvalue ratio {cond:.3g} > {elongation:g}")
    else:
        flags.append("Hessian not positive definite: covariance not reported")
    return IdentifiabilityReport(params.names, theta, space, H, w, V, pd, cond, float(scale), cov, se, flags)
