"""Unknown parameters, their bounds, priors and search-space transformations.

A :class:`ParameterSet` is the single description of the vector ``theta`` that
every downstream layer (problems, costs, optimisers, samplers) works with.
Optimisers and samplers operate on the *search* vector ``u``; the mapping
between the two is a per-component bijection (identity, log or affine).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Transformation",
    "Prior",
    "Parameter",
    "ParameterSet",
    "to_search",
    "from_search",
    "chain_gradient",
    "prior_logpdf",
    "sample_prior",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Transformation:
    """Bijection between physical value ``theta`` and search value ``u``.

    ``identity``: ``u = theta``; ``log``: ``u = ln(theta)``;
    ``affine``: ``u = (theta - offset) / scale``.
    """

    kind: str = "identity"
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "log", "affine"):
            raise ValueError(f"unknown transformation {self.kind!r}")
        if self.kind == "affine" and (self.scale == 0 or not np.isfinite(self.scale)):
            raise ValueError("affine transformation needs a finite non-zero scale")

    @classmethod
    def identity(cls) -> "Transformation":
        return cls("identity")

    @classmethod
    def log(cls) -> "Transformation":
        return cls("log")

    @classmethod
    def affine(cls, scale: float, offset: float = 0.0) -> "Transformation":
        return cls("affine", float(scale), float(offset))

    def to_search(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "log":
            if np.any(theta <= 0):
                raise ValueError("log transformation requires strictly positive values")
            return np.log(theta)
        if self.kind == "affine":
            return (theta - self.offset) / self.scale
        return theta.copy() if theta.ndim else theta

    def from_search(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "log":
            return np.exp(u)
        if self.kind == "affine":
            return u * self.scale + self.offset
        return u.copy() if u.ndim else u

    def derivative(self, theta):
        """d theta / d u evaluated at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "log":
            return theta
        if self.kind == "affine":
            return np.full_like(theta, self.scale)
        return np.ones_like(theta)

    def log_abs_det(self, u):
        """log |d theta / d u| at search value ``u``."""
        u = np.asarray(u, dtype=float)
        if self.kind == "log":
            return u
        if self.kind == "affine":
            return np.full_like(u, math.log(abs(self.scale)))
        return np.zeros_like(u)


@dataclass(frozen=True)
class Prior:
    """Univariate prior: ``uniform(a, b)``, ``gaussian(mean, std)`` or ``log-uniform(a, b)``."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "log-uniform"):
            raise ValueError(f"unknown prior {self.kind!r}")
        if self.kind == "gaussian":
            if not self.b > 0:
                raise ValueError("gaussian prior needs std > 0")
        elif not self.a < self.b:
            raise ValueError(f"{self.kind} prior needs a < b")
        if self.kind == "log-uniform" and self.a <= 0:
            raise ValueError("log-uniform prior needs a > 0")

    @classmethod
    def uniform(cls, a: float, b: float) -> "Prior":
        return cls("uniform", float(a), float(b))

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "Prior":
        return cls("gaussian", float(mean), float(std))

    @classmethod
    def log_uniform(cls, a: float, b: float) -> "Prior":
        return cls("log-uniform", float(a), float(b))

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "gaussian":
            return (-math.inf, math.inf)
        return (self.a, self.b)

    @property
    def is_proper(self) -> bool:
        return all(np.isfinite(v) for v in (self.a, self.b))

    def logpdf(self, x: float) -> float:
        x = float(x)
        if self.kind == "gaussian":
            z = (x - self.a) / self.b
            return -0.5 * z * z - math.log(self.b) - _LOG_SQRT_2PI
        if not (self.a <= x <= self.b):
            return -math.inf
        if self.kind == "uniform":
            return -math.log(self.b - self.a)
        return -math.log(x) - math.log(math.log(self.b / self.a))

    def grad_logpdf(self, x: float) -> float:
        x = float(x)
        if self.kind == "gaussian":
            return -(x - self.a) / self.b**2
        if self.kind == "log-uniform":
            return -1.0 / x if self.a <= x <= self.b else 0.0
        return 0.0

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "gaussian":
            return float(rng.normal(self.a, self.b))
        if self.kind == "uniform":
            return float(rng.uniform(self.a, self.b))
        return float(math.exp(rng.uniform(math.log(self.a), math.log(self.b))))

    def mean(self) -> float:
        if self.kind == "gaussian":
            return self.a
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b)
        return (self.b - self.a) / math.log(self.b / self.a)


@dataclass(frozen=True)
class Parameter:
    """One named unknown with bounds, initial value, prior and transformation.

    When no prior is given a uniform prior over finite bounds is assumed; for
    infinite bounds a prior must be supplied explicitly (improper priors are
    not supported).
    """

    name: str
    lower: float = -math.inf
    upper: float = math.inf
    initial: float | None = None
    prior: Prior | None = None
    transform: Transformation = field(default_factory=Transformation)

    def __post_init__(self):
        lower, upper = float(self.lower), float(self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if not lower < upper:
            raise ValueError(f"{self.name}: need lower < upper, got [{lower}, {upper}]")
        if self.transform.kind == "log" and lower <= 0:
            raise ValueError(f"{self.name}: log transformation requires lower > 0")
        prior = self.prior
        if prior is None:
            if not (np.isfinite(lower) and np.isfinite(upper)):
                raise ValueError(f"{self.name}: unbounded parameter needs an explicit prior")
            prior = Prior.uniform(lower, upper)
            object.__setattr__(self, "prior", prior)
        lo, hi = prior.support
        if lo > lower or hi < upper:
            raise ValueError(f"{self.name}: prior support must contain the bounds")
        initial = self.initial
        if initial is None:
            initial = prior.mean() if prior.kind != "gaussian" else prior.a
            initial = min(max(initial, lower), upper)
        initial = float(initial)
        if not lower <= initial <= upper:
            raise ValueError(f"{self.name}: initial value {initial} outside bounds")
        object.__setattr__(self, "initial", initial)

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    @classmethod
    def from_dict(cls, spec: Mapping) -> "Parameter":
        """Build from ``{"name", "lower", "upper", "initial", "transform", "prior"}``.

        ``transform`` is ``"identity"``, ``"log"`` or ``{"kind": "affine",
        "scale": s, "offset": o}``; ``prior`` is ``{"kind": k, "a": a, "b": b}``.
        """
        t = spec.get("transform", "identity")
        if isinstance(t, str):
            t = {"kind": t}
        transform = Transformation(t["kind"], float(t.get("scale", 1.0)), float(t.get("offset", 0.0)))
        pr = spec.get("prior")
        prior = None if pr is None else Prior(pr["kind"], float(pr["a"]), float(pr["b"]))
        return cls(spec["name"], spec.get("lower", -math.inf), spec.get("upper", math.inf),
                   spec.get("initial"), prior, transform)

    def to_dict(self) -> dict:
        t = {"kind": self.transform.kind}
        if self.transform.kind == "affine":
            t.update(scale=self.transform.scale, offset=self.transform.offset)
        return {"name": self.name, "lower": self.lower, "upper": self.upper, "initial": self.initial,
                "transform": t, "prior": {"kind": self.prior.kind, "a": self.prior.a, "b": self.prior.b}}


class ParameterSet:
    """Ordered, immutable collection of :class:`Parameter` objects."""

    def __init__(self, parameters: Sequence[Parameter]):
        params = tuple(parameters)
        if not params:
            raise ValueError("a parameter set needs at least one parameter")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        self._params = params
        self._index = {p.name: i for i, p in enumerate(params)}
        self.lower = np.array([p.lower for p in params])
        self.upper = np.array([p.upper for p in params])
        self.lower.flags.writeable = False
        self.upper.flags.writeable = False

    @classmethod
    def from_dicts(cls, specs: Sequence[Mapping]) -> "ParameterSet":
        return cls([Parameter.from_dict(s) for s in specs])

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, key) -> Parameter:
        if isinstance(key, str):
            return self._params[self._index[key]]
        return self._params[key]

    def __contains__(self, name) -> bool:
        return name in self._index

    def __repr__(self):
        return f"ParameterSet({list(self.names)})"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self._params)

    @property
    def dimension(self) -> int:
        return len(self._params)

    @property
    def initial(self) -> np.ndarray:
        return np.array([p.initial for p in self._params])

    def index(self, name: str) -> int:
        return self._index[name]

    def extended(self, parameter: Parameter) -> "ParameterSet":
        return ParameterSet(self._params + (parameter,))

    def as_dict(self, theta) -> dict[str, float]:
        theta = np.asarray(theta, dtype=float)
        return {p.name: float(v) for p, v in zip(self._params, theta)}

    def from_mapping(self, values: Mapping[str, float]) -> np.ndarray:
        return np.array([float(values[n]) for n in self.names])

    # search space -----------------------------------------------------------------
    def to_search(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.array([p.transform.to_search(v) for p, v in zip(self._params, theta)], dtype=float)

    def from_search(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.array([p.transform.from_search(v) for p, v in zip(self._params, u)], dtype=float)

    def chain_gradient(self, grad, theta) -> np.ndarray:
        grad = np.asarray(grad, dtype=float)
        theta = np.asarray(theta, dtype=float)
        jac = np.array([p.transform.derivative(v) for p, v in zip(self._params, theta)], dtype=float)
        return grad * jac

    def log_abs_det_jacobian(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(sum(p.transform.log_abs_det(v) for p, v in zip(self._params, u)))

    def grad_log_abs_det_jacobian(self, u) -> np.ndarray:
        return np.array([1.0 if p.transform.kind == "log" else 0.0 for p in self._params])

    def search_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Box in search coordinates (components sorted, so negative affine scales work)."""
        lo = np.empty(len(self))
        hi = np.empty(len(self))
        for i, p in enumerate(self._params):
            t = p.transform
            if t.kind == "log":
                a, b = math.log(p.lower), (math.log(p.upper) if np.isfinite(p.upper) else math.inf)
            elif t.kind == "affine":
                a, b = (p.lower - t.offset) / t.scale, (p.upper - t.offset) / t.scale
            else:
                a, b = p.lower, p.upper
            lo[i], hi[i] = min(a, b), max(a, b)
        return lo, hi

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    # priors --------------------------------------------------------------------------
    def prior_logpdf(self, theta) -> float:
        total = 0.0
        for p, v in zip(self._params, np.asarray(theta, dtype=float)):
            total += p.prior.logpdf(v)
            if total == -math.inf:
                return -math.inf
        return total

    def prior_grad_logpdf(self, theta) -> np.ndarray:
        return np.array([p.prior.grad_logpdf(v) for p, v in zip(self._params, np.asarray(theta, dtype=float))])

    @property
    def priors_proper(self) -> bool:
        return all(p.prior.is_proper or p.prior.kind == "gaussian" for p in self._params)

    def sample_prior(self, rng: np.random.Generator) -> np.ndarray:
        """One draw from the product prior, truncated to the bounds by rejection."""
        out = np.empty(len(self))
        for i, p in enumerate(self._params):
            for _ in range(1000):
                v = p.prior.sample(rng)
                if p.lower <= v <= p.upper:
                    break
            else:
                v = min(max(v, p.lower), p.upper)
            out[i] = v
        return out


def to_search(theta, parameters: ParameterSet) -> np.ndarray:
    return parameters.to_search(theta)


def from_search(u, parameters: ParameterSet) -> np.ndarray:
    return parameters.from_search(u)


def chain_gradient(grad_physical, theta, parameters: ParameterSet) -> np.ndarray:
    """Gradient with respect to the search vector from the physical-space gradient."""
    return parameters.chain_gradient(grad_physical, theta)


def prior_logpdf(theta, parameters: ParameterSet) -> float:
    return parameters.prior_logpdf(theta)


def sample_prior(parameters: ParameterSet, rng: np.random.Generator) -> np.ndarray:
    return parameters.sample_prior(rng)
