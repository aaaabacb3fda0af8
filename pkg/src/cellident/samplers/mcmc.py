"""Markov-chain Monte Carlo kernels and the multi-chain driver.

Chains run in search coordinates: the target seen by the kernels is
``log pi(theta(u)) + log |d theta / d u|``, so log-transformed parameters are
sampled on the log scale without biasing the posterior. Samples are stored
back in physical units.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..costs import CostValue
from ..errors import ConfigurationError
from ..parameters import ParameterSet
from ..problems import format_float

__all__ = [
    "SAMPLERS",
    "SamplerConfig",
    "Chain",
    "RecursiveCovariance",
    "SearchTarget",
    "metropolis_rw_step",
    "haario_adapt",
    "haario_bardenet_scale",
    "demc_proposal",
    "demc_gamma",
    "mala_step",
    "mala_log_q",
    "run_sampler",
]

log = logging.getLogger(__name__)

SAMPLERS = ("mrw", "haario", "haario-bardenet", "demc", "mala")
SCALE_2_4 = 2.4 ** 2


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for :func:`run_sampler`.

    ``iterations`` counts every step of a chain; the first ``burn_in`` (default
    half) are discarded. ``step_size`` is the initial proposal standard
    deviation in search coordinates (default 10% of the search box, 0.1 when
    unbounded) and, for MALA, the Langevin step ``tau`` (default half the
    squared initial spread). Adaptation starts at ``adapt_start`` and stops
    after ``adapt_iterations`` steps when that is set; ``adapt=False`` freezes
    the initial proposal for the whole run.
    """

    sampler: str = "haario-bardenet"
    n_chains: int = 4
    iterations: int = 10_000
    burn_in: int | None = None
    adapt: bool = True
    adapt_start: int = 100
    adapt_iterations: int | None = None
    epsilon: float = 1e-6
    target_acceptance: float = 0.234
    step_size: float | None = None
    gamma: float | None = None
    jitter: float = 1e-4
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; choose from {list(SAMPLERS)}")
        if self.n_chains < 1 or self.iterations < 2:
            raise ValueError("need at least one chain and two iterations")
        if self.sampler == "demc" and self.n_chains < 3:
            raise ValueError("DE-MC needs at least 3 chains")
        if self.burn_in is not None and not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must lie in [0, iterations)")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.adapt_start < 2:
            raise ValueError("adapt_start must be at least 2")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def n_burn(self) -> int:
        return self.iterations // 2 if self.burn_in is None else self.burn_in


@dataclass
class Chain:
    """Post-burn-in samples of one chain (physical units).

    ``logpost`` is the physical-space log-posterior of each sample;
    ``accepted`` counts accepted proposals over the kept iterations.
    """

    names: tuple[str, ...]
    samples: np.ndarray
    logpost: np.ndarray
    accepted: int
    sampler: str
    seed: int
    index: int = 0
    burn_in: int = 0
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def acceptance(self) -> float:
        return self.accepted / self.n if self.n else 0.0

    def to_csv(self, path=None) -> str:
        lines = [",".join([*self.names, "logpost"])]
        for row, lp in zip(self.samples, self.logpost):
            lines.append(",".join([*(format_float(v) for v in row), format_float(lp)]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


# ----------------------------------------------------------------------------
# kernels


def _factor(cov) -> np.ndarray:
    """Square-root factor of a PSD matrix (semi-definite allowed)."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
        return vecs * np.sqrt(np.maximum(vals, 0.0))


def _accept(log_ratio: float, rng) -> bool:
    if math.isnan(log_ratio):
        return False
    return log_ratio >= 0 or math.log(rng.random()) < log_ratio


def metropolis_rw_step(x, logpi: Callable, cov, rng, logp_x: float | None = None, factor=None):
    """Gaussian random-walk Metropolis step.

    Returns ``(x', logpi(x'), accepted, alpha)`` where ``alpha`` is the
    acceptance probability of the proposal.
    """
    x = np.asarray(x, dtype=float)
    if logp_x is None:
        logp_x = float(logpi(x))
    L = _factor(cov) if factor is None else factor
    prop = x + L @ rng.standard_normal(x.size)
    lp = float(logpi(prop))
    ratio = lp - logp_x if np.isfinite(lp) else -math.inf
    alpha = 1.0 if ratio >= 0 else math.exp(ratio)
    if _accept(ratio, rng):
        return prop, lp, True, alpha
    return x, logp_x, False, alpha


class RecursiveCovariance:
    """Running mean and unbiased covariance (Welford's update)."""

    def __init__(self, d: int):
        self.n = 0
        self.mean = np.zeros(d)
        self._m2 = np.zeros((d, d))

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self._m2 += np.outer(delta, x - self.mean)

    @property
    def cov(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self._m2)
        return self._m2 / (self.n - 1)


def haario_adapt(history, d: int | None = None, epsilon: float = 1e-6) -> np.ndarray:
    """Adaptive-Metropolis proposal ``(2.4^2/d)(cov(history) + eps I)`` from a batch."""
    H = np.atleast_2d(np.asarray(history, dtype=float))
    d = H.shape[1] if d is None else d
    C = np.cov(H, rowvar=False, ddof=1).reshape(d, d) if H.shape[0] > 1 else np.zeros((d, d))
    return SCALE_2_4 / d * (C + epsilon * np.eye(d))


def haario_bardenet_scale(log_lambda: float, t: int, alpha: float, target: float = 0.234) -> float:
    """Global scale update ``log lambda + t^-0.6 (alpha - target)``."""
    return log_lambda + t ** -0.6 * (alpha - target)


def demc_gamma(d: int) -> float:
    return 2.38 / math.sqrt(2 * d)


def demc_proposal(population, i: int, gamma: float, jitter: float, rng) -> np.ndarray:
    """``x_i + gamma (x_a - x_b) + e`` with distinct ``a, b != i`` and ``e ~ N(0, jitter^2 I)``."""
    X = np.asarray(population, dtype=float)
    n = X.shape[0]
    others = [k for k in range(n) if k != i]
    a, b = rng.choice(others, 2, replace=False)
    return X[i] + gamma * (X[a] - X[b]) + jitter * rng.standard_normal(X.shape[1])


def mala_log_q(to, frm, grad_frm, tau: float) -> float:
    """Log density (up to a constant) of the Langevin proposal ``frm -> to``."""
    r = np.asarray(to) - np.asarray(frm) - tau * np.asarray(grad_frm)
    return -float(r @ r) / (4.0 * tau)


def mala_step(x, logpi_grad: Callable, tau: float, rng, state=None):
    """Metropolis-adjusted Langevin step.

    ``logpi_grad(x)`` returns ``(log pi, gradient)``. ``state`` caches that
    pair at ``x``. Returns ``(x', (logpi', grad'), accepted, alpha)``.
    """
    x = np.asarray(x, dtype=float)
    lp, g = logpi_grad(x) if state is None else state
    prop = x + tau * g + math.sqrt(2.0 * tau) * rng.standard_normal(x.size)
    lp_new, g_new = logpi_grad(prop)
    if not np.isfinite(lp_new) or g_new is None:
        return x, (lp, g), False, 0.0
    ratio = lp_new - lp + mala_log_q(x, prop, g_new, tau) - mala_log_q(prop, x, g, tau)
    alpha = 1.0 if ratio >= 0 else math.exp(ratio)
    if _accept(ratio, rng):
        return prop, (lp_new, g_new), True, alpha
    return x, (lp, g), False, alpha


# ----------------------------------------------------------------------------
# driver


class SearchTarget:
    """Log-density in search coordinates, with the Jacobian term of the transforms."""

    def __init__(self, target: Callable, params: ParameterSet, gradient: bool = False):
        self.target = target
        self.params = params
        self.gradient = gradient
        self.lo, self.hi = params.search_bounds()

    def _call(self, theta, gradient):
        out = self.target(theta, True) if gradient else self.target(theta)
        if isinstance(out, CostValue):
            return float(out.value), out.gradient
        return float(out), None

    def evaluate(self, u):
        """``(log pi_u, log pi_theta, grad_u)``; ``-inf`` outside the search box."""
        u = np.asarray(u, dtype=float)
        if np.any(u < self.lo) or np.any(u > self.hi):
            return -math.inf, -math.inf, None
        theta = self.params.from_search(u)
        value, g = self._call(theta, self.gradient)
        if not np.isfinite(value):
            return -math.inf, -math.inf, None
        lp = value + self.params.log_abs_det_jacobian(u)
        grad = None
        if self.gradient:
            if g is None or not np.all(np.isfinite(g)):
                return -math.inf, -math.inf, None
            grad = (self.params.chain_gradient(g, theta) + self.params.grad_log_abs_det_jacobian(u))
        return lp, value, grad

    def __call__(self, u) -> float:
        return self.evaluate(u)[0]


def _initial_spread(params: ParameterSet, cfg: SamplerConfig) -> np.ndarray:
    lo, hi = params.search_bounds()
    span = hi - lo
    if cfg.step_size is not None and cfg.sampler != "mala":
        return np.full(len(lo), cfg.step_size)
    return np.where(np.isfinite(span), 0.1 * span, 0.1)


def _start(target: SearchTarget, params: ParameterSet, rng, x0=None, tries: int = 100):
    lo, hi = target.lo, target.hi
    if x0 is not None:
        u = params.to_search(np.asarray(x0, dtype=float))
        lp = target.evaluate(u)
        if np.isfinite(lp[0]):
            return u, lp
        raise ConfigurationError("the supplied starting point has zero posterior density")
    bounded = np.all(np.isfinite(lo) & np.isfinite(hi))
    for _ in range(tries):
        if params.priors_proper:
            u = params.to_search(params.sample_prior(rng))
        elif bounded:
            u = rng.uniform(lo, hi)
        else:
            u = params.to_search(params.initial) + 0.1 * rng.standard_normal(len(lo))
        lp = target.evaluate(u)
        if np.isfinite(lp[0]):
            return u, lp
    raise ConfigurationError(f"no starting point with finite posterior in {tries} prior draws")


def _check_gradient(target: Callable, params: ParameterSet):
    if not getattr(target, "differentiable", True):
        raise ConfigurationError("MALA needs a target that provides gradients")
    try:
        out = target(params.initial, True)
    except ConfigurationError:
        raise
    except (NotImplementedError, TypeError) as exc:
        raise ConfigurationError(f"MALA needs a gradient: {exc}") from exc
    if not isinstance(out, CostValue) or out.gradient is None:
        if isinstance(out, CostValue) and not np.isfinite(out.value):
            return
        raise ConfigurationError("MALA needs a target that returns gradients")


def _single_chain(target: SearchTarget, params: ParameterSet, cfg: SamplerConfig, rng, index: int,
                  x0=None) -> Chain:
    d = len(params)
    u, (lp_u, lp_theta, grad) = _start(target, params, rng, x0)
    spread = _initial_spread(params, cfg)
    C0 = np.diag(spread ** 2)
    # regulariser relative to the initial proposal so it is unit-free per axis
    reg = cfg.epsilon * C0
    L = _factor(C0)
    tau = cfg.step_size if cfg.step_size is not None else 0.5 * float(np.min(spread)) ** 2
    n_burn = cfg.n_burn
    keep = cfg.iterations - n_burn
    samples = np.empty((keep, d))
    logpost = np.empty(keep)
    accepted = 0
    adaptive = cfg.sampler in ("haario", "haario-bardenet") and cfg.adapt
    stats = RecursiveCovariance(d)
    stats.update(u)
    log_lambda = 0.0
    w_mean = w_cov = None
    lam_trace = []
    mala_state = (lp_u, grad)
    last = [lp_theta]

    def lp_fn(z):
        a, b, _ = target.evaluate(z)
        last[0] = b
        return a

    def lpg_fn(z):
        a, b, g = target.evaluate(z)
        last[0] = b
        return a, g

    for it in range(cfg.iterations):
        if cfg.sampler == "mala":
            u, mala_state, acc, alpha = mala_step(u, lpg_fn, tau, rng, mala_state)
        else:
            in_window = adaptive and (cfg.adapt_iterations is None
                                      or it < cfg.adapt_start + cfg.adapt_iterations)
            adapting = in_window and it >= cfg.adapt_start
            bardenet = cfg.sampler == "haario-bardenet"
            if adapting:
                if bardenet and w_cov is None:
                    w_mean, w_cov = stats.mean.copy(), stats.cov
                cov = w_cov if bardenet else stats.cov
                C = SCALE_2_4 / d * (cov + reg)
                if bardenet:
                    C = math.exp(log_lambda) * C
                L = _factor(C)
            u, lp_u, acc, alpha = metropolis_rw_step(u, lp_fn, None, rng, lp_u, L)
            if adapting and bardenet:
                t = it - cfg.adapt_start + 1
                log_lambda = haario_bardenet_scale(log_lambda, t, alpha, cfg.target_acceptance)
                # t^-0.6 weighting forgets the transient from a distant start
                gamma = t ** -0.6
                w_mean = (1 - gamma) * w_mean + gamma * u
                r = u - w_mean
                w_cov = (1 - gamma) * w_cov + gamma * np.outer(r, r)
            elif in_window:
                stats.update(u)
        if acc:
            lp_theta = last[0]
        if cfg.sampler == "haario-bardenet":
            lam_trace.append(log_lambda)
        if it >= n_burn:
            samples[it - n_burn] = params.from_search(u)
            logpost[it - n_burn] = lp_theta
            accepted += int(acc)
    info = {}
    if cfg.sampler == "haario-bardenet":
        info["log_lambda"] = np.array(lam_trace)
    if cfg.sampler == "mala":
        info["tau"] = tau
    return Chain(params.names, samples, logpost, accepted, cfg.sampler, cfg.seed, index, n_burn, info)


def _demc(target: SearchTarget, params: ParameterSet, cfg: SamplerConfig, rngs, rng, x0=None) -> list[Chain]:
    d = len(params)
    n = cfg.n_chains
    starts = [_start(target, params, r, x0) for r in rngs]
    U = np.array([s[0] for s in starts])
    LPU = np.array([s[1][0] for s in starts])
    LPT = np.array([s[1][1] for s in starts])
    gamma = cfg.gamma if cfg.gamma is not None else demc_gamma(d)
    n_burn = cfg.n_burn
    keep = cfg.iterations - n_burn
    samples = np.empty((n, keep, d))
    logpost = np.empty((n, keep))
    accepted = np.zeros(n, dtype=int)
    for it in range(cfg.iterations):
        for i in range(n):
            prop = demc_proposal(U, i, gamma, cfg.jitter, rng)
            lp_u, lp_t, _ = target.evaluate(prop)
            ratio = lp_u - LPU[i] if np.isfinite(lp_u) else -math.inf
            acc = _accept(ratio, rng)
            if acc:
                U[i], LPU[i], LPT[i] = prop, lp_u, lp_t
            if it >= n_burn:
                samples[i, it - n_burn] = params.from_search(U[i])
                logpost[i, it - n_burn] = LPT[i]
                accepted[i] += int(acc)
    return [Chain(params.names, samples[i], logpost[i], int(accepted[i]), "demc", cfg.seed, i, n_burn)
            for i in range(n)]


def run_sampler(target: Callable, params: ParameterSet, cfg: SamplerConfig | None = None,
                x0=None) -> list[Chain]:
    """Draw ``cfg.n_chains`` chains from ``target``.

    Parameters
    ----------
    target : callable
        ``target(theta[, gradient]) -> CostValue | float``, the physical-space
        log-posterior (``-inf`` outside the support), e.g. :class:`LogPosterior`.
    params : ParameterSet
        Defines bounds, priors (for the starting points) and transforms.
    cfg : SamplerConfig
    x0 : array_like, optional
        Common physical starting point replacing the prior draws.

    Raises
    ------
    ConfigurationError
        MALA on a target without gradients, or no finite starting point.
    """
    cfg = cfg or SamplerConfig()
    if cfg.sampler == "mala":
        _check_gradient(target, params)
    st = SearchTarget(target, params, gradient=cfg.sampler == "mala")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains + 1)
    rngs = [np.random.default_rng(s) for s in seeds[: cfg.n_chains]]
    if cfg.sampler == "demc":
        chains = _demc(st, params, cfg, rngs, np.random.default_rng(seeds[-1]), x0)
    elif cfg.threads > 1 and cfg.n_chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            chains = list(pool.map(lambda i: _single_chain(st, params, cfg, rngs[i], i, x0),
                                   range(cfg.n_chains)))
    else:
        chains = [_single_chain(st, params, cfg, rngs[i], i, x0) for i in range(cfg.n_chains)]
    for c in chains:
        log.info("%s chain %d: acceptance %.3f", cfg.sampler, c.index, c.acceptance)
    return chains
