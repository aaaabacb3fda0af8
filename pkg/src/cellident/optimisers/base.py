"""Ask/tell driver shared by every optimiser.

Algorithms work in search coordinates ``u`` of a :class:`ParameterSet`. The
driver maps candidates to physical ``theta`` for the objective, converts
physical gradients with the chain rule, clips iterates into the search box,
logs every iteration and decides termination.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..costs import CostValue
from ..errors import ConfigurationError
from ..parameters import ParameterSet

__all__ = ["OptimiserConfig", "OptimResult", "Algorithm", "Evaluator", "NoFeasibleEvaluation", "run",
           "register", "ALGORITHMS", "GRADIENT_ALGORITHMS"]

log = logging.getLogger(__name__)

ALGORITHMS: dict[str, type] = {}
GRADIENT_ALGORITHMS: set[str] = set()


def register(name: str, gradient: bool = False):
    def deco(cls):
        cls.id = name
        cls.uses_gradient = gradient
        ALGORITHMS[name] = cls
        if gradient:
            GRADIENT_ALGORITHMS.add(name)
        return cls
    return deco


class NoFeasibleEvaluation(RuntimeError):
    """Every objective evaluation failed."""


@dataclass(frozen=True)
class OptimiserConfig:
    """Settings for :func:`run`.

    ``step_size`` is the learning rate of gradient descent / AdamW, the
    initial step of iRProp- and, for the direct and population methods, the
    initial spread in search coordinates (default: 10% of the search box, or
    0.1 when unbounded). Algorithm-specific hyperparameters go in ``options``.
    """

    algorithm: str = "cmaes"
    max_evaluations: int = 10_000
    max_iterations: int | None = None
    abs_tol: float = 1e-9
    rel_tol: float = 0.0
    stall_iterations: int = 50
    tol_iterations: int = 3
    step_size: float | None = None
    population_size: int | None = None
    options: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown optimiser {self.algorithm!r}; choose from {sorted(ALGORITHMS)}")
        if self.max_evaluations <= 0 or (self.max_iterations is not None and self.max_iterations <= 0):
            raise ValueError("budgets must be positive")
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.stall_iterations <= 0 or self.tol_iterations <= 0:
            raise ValueError("iteration windows must be positive")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class OptimResult:
    """Outcome of :func:`run`. ``log`` rows hold iteration, evaluations, the
    iteration's cost and point (physical) and the best cost so far."""

    algorithm: str
    names: tuple[str, ...]
    x: np.ndarray
    cost: float
    evaluations: int
    iterations: int
    termination: str
    log: list[dict] = field(default_factory=list)
    seed: int = 0

    @property
    def best_trace(self) -> np.ndarray:
        return np.array([r["best"] for r in self.log])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.x.tolist()))


class Algorithm:
    """Base class: ``ask`` proposes search points, ``tell`` receives their costs.

    ``values`` passed to ``tell`` are finite floats or ``inf``; ``grads`` are
    search-space gradients (``None`` entries for failures) when the algorithm
    uses gradients.
    """

    id = "base"
    uses_gradient = False

    def __init__(self, x0: np.ndarray, lower: np.ndarray, upper: np.ndarray, cfg: OptimiserConfig,
                 rng: np.random.Generator):
        self.x0 = np.asarray(x0, dtype=float)
        self.d = self.x0.size
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.cfg = cfg
        self.rng = rng
        self.opt = dict(cfg.options)
        bounded = np.isfinite(self.lower) & np.isfinite(self.upper)
        spread = np.where(bounded, 0.1 * (self.upper - self.lower), 0.1)
        self.sigma0 = np.full(self.d, cfg.step_size) if cfg.step_size is not None else spread

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)

    def ask(self) -> list[np.ndarray]:
        raise NotImplementedError

    def tell(self, xs, values, grads=None) -> None:
        raise NotImplementedError

    def initial_population(self, n: int, sampler: Callable[[], np.ndarray] | None) -> np.ndarray:
        """``x0`` followed by ``n - 1`` prior draws (or uniform in a bounded box)."""
        pop = [self.x0.copy()]
        bounded = np.all(np.isfinite(self.lower) & np.isfinite(self.upper))
        for _ in range(n - 1):
            if sampler is not None:
                pop.append(self.clip(sampler()))
            elif bounded:
                pop.append(self.rng.uniform(self.lower, self.upper))
            else:
                pop.append(self.clip(self.x0 + self.sigma0 * self.rng.standard_normal(self.d)))
        return np.array(pop)

    def spread(self, values) -> float | None:
        """Algorithm-specific convergence measure; default is the batch cost spread."""
        finite = [v for v in values if np.isfinite(v)]
        if len(finite) < 2:
            return None
        return max(finite) - min(finite)


class Evaluator:
    """Evaluates batches of search points, optionally on a thread pool.

    Results are assembled by candidate index, so the outcome never depends on
    the number of workers.
    """

    def __init__(self, objective, params: ParameterSet, threads: int = 1):
        self.objective = objective
        self.params = params
        self.threads = threads
        self.count = 0
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def _one(self, u, gradient):
        theta = self.params.from_search(u)
        try:
            out = self.objective(theta, gradient) if gradient else self.objective(theta)
        except ConfigurationError:
            raise
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.debug("objective failed at %s: %s", theta, exc)
            out = CostValue.failure()
        if not isinstance(out, CostValue):
            out = CostValue(float(out))
        value = float(out.value)
        if not np.isfinite(value):
            return math.inf, None
        g = None
        if gradient:
            if out.gradient is None or not np.all(np.isfinite(out.gradient)):
                return math.inf, None
            g = self.params.chain_gradient(out.gradient, theta)
        return value, g

    def __call__(self, xs, gradient=False):
        self.count += len(xs)
        if self._pool is not None and len(xs) > 1:
            results = list(self._pool.map(lambda u: self._one(u, gradient), xs))
        else:
            results = [self._one(u, gradient) for u in xs]
        return [r[0] for r in results], [r[1] for r in results]

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def run(objective, params: ParameterSet, cfg: OptimiserConfig | None = None,
        x0=None, prior_init: bool = True, callback=None) -> OptimResult:
    """Minimise ``objective(theta[, gradient]) -> CostValue`` over ``params``.

    Parameters
    ----------
    objective : callable
        Physical-space objective; called as ``objective(theta)`` or, for gradient
        algorithms, ``objective(theta, True)`` returning a physical gradient.
    params : ParameterSet
    cfg : OptimiserConfig
    x0 : array_like, optional
        Physical starting point (default: the parameters' initial values).
    prior_init : bool
        Seed populations from the priors when they are proper.

    Raises
    ------
    ConfigurationError
        A gradient algorithm paired with an objective that has no gradient.
    NoFeasibleEvaluation
        Every evaluation failed.

    Returns
    -------
    OptimResult
        Termination is ``"tolerance"`` (cost spread below ``abs_tol + rel_tol |best|``
        for ``tol_iterations`` consecutive iterations), ``"stall"`` (no best-so-far
        improvement within ``stall_iterations``) or ``"budget"``.
    """
    cfg = cfg or OptimiserConfig()
    if cfg.algorithm in GRADIENT_ALGORITHMS and not getattr(objective, "differentiable", True):
        raise ConfigurationError(f"{cfg.algorithm} needs gradients, which this objective does not provide")
    rng = np.random.default_rng(cfg.seed)
    lo, hi = params.search_bounds()
    theta0 = params.initial if x0 is None else np.asarray(x0, dtype=float)
    u0 = np.clip(params.to_search(params.clip(theta0)), lo, hi)
    sampler = None
    if prior_init and params.priors_proper:
        sampler = lambda: params.to_search(params.sample_prior(rng))  # noqa: E731
    algo = ALGORITHMS[cfg.algorithm](u0, lo, hi, cfg, rng)
    algo.sampler = sampler
    evaluate = Evaluator(objective, params, cfg.threads)
    max_iter = cfg.max_iterations or math.inf
    best_u, best_f = u0.copy(), math.inf
    history: list[dict] = []
    since_improve = 0
    tol_count = 0
    termination = "budget"
    it = 0
    try:
        while True:
            xs = [algo.clip(np.asarray(x, dtype=float)) for x in algo.ask()]
            values, grads = evaluate(xs, gradient=algo.uses_gradient)
            algo.tell(xs, values, grads)
            it += 1
            k = int(np.argmin(values))
            current_f, current_u = values[k], xs[k]
            improved = current_f < best_f - (cfg.abs_tol + cfg.rel_tol * abs(best_f) if np.isfinite(best_f) else 0.0)
            if current_f < best_f:
                best_f, best_u = current_f, current_u.copy()
            since_improve = 0 if improved else since_improve + 1
            history.append({
                "iteration": it,
                "evaluations": evaluate.count,
                "cost": float(current_f),
                "best": float(best_f),
                "x": params.from_search(current_u).tolist(),
            })
            if callback is not None:
                callback(history[-1])
            spread = algo.spread(values)
            if spread is not None and np.isfinite(best_f) and spread <= cfg.abs_tol + cfg.rel_tol * abs(best_f):
                tol_count += 1
            else:
                tol_count = 0
            if tol_count >= cfg.tol_iterations:
                termination = "tolerance"
                break
            if since_improve >= cfg.stall_iterations and np.isfinite(best_f):
                termination = "stall"
                break
            if evaluate.count >= cfg.max_evaluations or it >= max_iter:
                termination = "budget"
                break
    finally:
        evaluate.close()
    if not np.isfinite(best_f):
        raise NoFeasibleEvaluation(f"{cfg.algorithm}: no feasible evaluation in {evaluate.count} attempts")
    x = params.clip(params.from_search(best_u))
    log.info("%s finished: %s after %d evaluations, best %.6g", cfg.algorithm, termination, evaluate.count, best_f)
    return OptimResult(cfg.algorithm, params.names, x, float(best_f), evaluate.count, it, termination,
                       history, cfg.seed)
