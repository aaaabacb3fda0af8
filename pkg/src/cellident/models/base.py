"""Core model abstractions: mass-matrix DAE systems, current protocols and traces."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "SolverError",
    "BuildError",
    "DaeSystem",
    "Protocol",
    "Trace",
    "ModelBuilder",
    "rebuild_geometry",
]


class SolverError(RuntimeError):
    """Forward simulation failed; ``time`` is the simulated time of the failure."""

    def __init__(self, message: str, time: float | None = None, theta=None):
        super().__init__(message if time is None else f"{message} (t = {time:.6g} s)")
        self.time = time
        self.theta = theta


class BuildError(ValueError):
    """Invalid model configuration."""


@dataclass(frozen=True, eq=False)
class DaeSystem:
    """Discretised battery model ``M dx/dt = F(t, x, p, I)``, ``y = h(t, x, p, I)``.

    ``p`` is a mapping of model coefficients; :meth:`resolve` merges user values
    over :attr:`defaults`. Linear models supply ``linear(p) -> (A, B)`` with
    ``F = A x + B I`` and an identity mass matrix, which lets the integrator use a
    compiled kernel. ``output`` is vectorised over rows of ``X`` and returns NaN
    where the state is physically inadmissible.
    """

    name: str
    n_states: int
    defaults: Mapping[str, float]
    initial_state: Callable
    output: Callable
    rhs: Callable | None = None
    linear: Callable | None = None
    linear_derivative: Callable | None = None
    output_jacobian: Callable | None = None
    output_param_derivative: Callable | None = None
    mass: np.ndarray | None = None
    state_bounds: tuple[np.ndarray, np.ndarray] | None = None
    geometric: frozenset = frozenset()
    geometry: tuple = ()
    builder: "ModelBuilder | None" = None
    state_names: tuple[str, ...] = ()
    info: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.rhs is None and self.linear is None:
            raise BuildError("a DaeSystem needs rhs or linear")
        if self.mass is not None:
            m = np.asarray(self.mass, dtype=float)
            if m.shape != (self.n_states,):
                raise BuildError("mass matrix must be given as its diagonal")
            if np.any((m != 0) & (m != 1)):
                raise BuildError("mass matrix diagonal entries must be 0 or 1")
            object.__setattr__(self, "mass", m)

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return tuple(self.defaults)

    @property
    def has_algebraic(self) -> bool:
        return self.mass is not None and bool(np.any(self.mass == 0))

    @property
    def is_linear(self) -> bool:
        return self.linear is not None and not self.has_algebraic

    def resolve(self, theta: Mapping[str, float] | None = None) -> dict[str, float]:
        p = dict(self.defaults)
        if theta:
            unknown = set(theta) - set(p)
            if unknown:
                raise KeyError(f"{self.name} has no parameters {sorted(unknown)}")
            p.update({k: float(v) for k, v in theta.items()})
        return p

    def F(self, t: float, x: np.ndarray, p: Mapping[str, float], current: float) -> np.ndarray:
        if self.rhs is not None:
            return np.asarray(self.rhs(t, x, p, current), dtype=float)
        A, B = self.linear(p)
        return A @ x + B * current


def rebuild_geometry(system: DaeSystem, theta: Mapping[str, float] | None) -> DaeSystem:
    """Return a system discretised for ``theta``'s geometry, reusing the cache when unchanged."""
    if system.builder is None or not theta:
        return system
    p = system.resolve(theta)
    if system.builder.geometry_key(p) == system.geometry:
        return system
    return system.builder.system(p)


class ModelBuilder:
    """Builds :class:`DaeSystem` objects and caches the latest discretisation.

    Subclasses implement :meth:`discretise`. Only parameters listed in
    ``geometric`` force a new discretisation; everything else is a coefficient
    update on the cached mesh. The cache is guarded by a lock so concurrent
    population evaluations serialise their rebuilds.
    """

    geometric: frozenset = frozenset()

    def __init__(self):
        self.rebuild_count = 0
        self._cached: DaeSystem | None = None
        self._lock = threading.Lock()

    def default_parameters(self) -> dict[str, float]:
        raise NotImplementedError

    def discretise(self, p: Mapping[str, float]) -> DaeSystem:
        raise NotImplementedError

    def geometry_key(self, p: Mapping[str, float]) -> tuple:
        return tuple(float(p[g]) for g in sorted(self.geometric))

    def system(self, theta: Mapping[str, float] | None = None) -> DaeSystem:
        p = self.default_parameters()
        if theta:
            unknown = set(theta) - set(p)
            if unknown:
                raise KeyError(f"unknown model parameters {sorted(unknown)}")
            p.update({k: float(v) for k, v in theta.items()})
        key = self.geometry_key(p)
        with self._lock:
            if self._cached is not None and self._cached.geometry == key:
                return self._cached
            system = self.discretise(p)
            self.rebuild_count += 1
            self._cached = system
            return system


@dataclass(frozen=True)
class Protocol:
    """Piecewise constant-current protocol with output sample instants.

    Current is discharge-positive (A). Segment boundaries are right-continuous:
    a sample exactly on a boundary sees the next segment's current.
    ``cutoff_voltage`` ends the simulation at the first sample whose output falls
    below it.
    """

    currents: tuple[float, ...]
    durations: tuple[float, ...]
    t_eval: np.ndarray
    t_start: float = 0.0
    cutoff_voltage: float | None = None
    output_currents: np.ndarray | None = None

    def __post_init__(self):
        currents = tuple(float(c) for c in self.currents)
        durations = tuple(float(d) for d in self.durations)
        if len(currents) != len(durations) or not currents:
            raise ValueError("protocol needs matching, non-empty currents and durations")
        if any(d <= 0 for d in durations):
            raise ValueError("segment durations must be positive")
        t_eval = np.array(self.t_eval, dtype=float)
        if t_eval.ndim != 1 or t_eval.size == 0:
            raise ValueError("t_eval must be a non-empty 1-d array")
        if np.any(np.diff(t_eval) <= 0):
            raise ValueError("t_eval must be strictly increasing")
        end = self.t_start + sum(durations)
        if t_eval[0] < self.t_start or t_eval[-1] > end * (1 + 1e-12):
            raise ValueError("t_eval must lie within the protocol duration")
        t_eval.flags.writeable = False
        if self.output_currents is not None:
            oc = np.array(self.output_currents, dtype=float)
            if oc.shape != t_eval.shape:
                raise ValueError("output_currents must match t_eval")
            oc.flags.writeable = False
            object.__setattr__(self, "output_currents", oc)
        object.__setattr__(self, "currents", currents)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "t_eval", t_eval)

    @classmethod
    def constant(cls, segments: Sequence[tuple[float, float]], dt: float = 1.0, **kw) -> "Protocol":
        """Segments ``[(current, duration), ...]`` sampled every ``dt`` seconds from t=0."""
        currents = [s[0] for s in segments]
        durations = [s[1] for s in segments]
        total = float(sum(durations))
        n = int(np.floor(total / dt + 1e-9))
        t_eval = np.arange(n) * dt
        return cls(tuple(currents), tuple(durations), t_eval, **kw)

    @classmethod
    def from_samples(cls, times, currents) -> "Protocol":
        """Replay sampled current as a zero-order hold between samples, merging equal runs."""
        times = np.asarray(times, dtype=float)
        currents = np.asarray(currents, dtype=float)
        if times.size < 2:
            raise ValueError("need at least two samples to replay a current")
        held = currents[:-1]
        change = np.nonzero(held[1:] != held[:-1])[0] + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [times.size - 1]])
        return cls(tuple(held[starts]), tuple(times[ends] - times[starts]), times,
                   t_start=float(times[0]), output_currents=currents)

    @property
    def boundaries(self) -> np.ndarray:
        return self.t_start + np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def duration(self) -> float:
        return float(sum(self.durations))

    def current_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        edges = self.boundaries[1:-1]
        idx = np.searchsorted(edges, t, side="right")
        return np.asarray(self.currents)[idx]

    def sample_currents(self) -> np.ndarray:
        """Current seen by the output map at each sample instant."""
        if self.output_currents is not None:
            return np.array(self.output_currents)
        return self.current_at(self.t_eval)

    def with_t_eval(self, t_eval) -> "Protocol":
        return Protocol(self.currents, self.durations, t_eval, self.t_start, self.cutoff_voltage)

    def scaled(self, factor: float) -> "Protocol":
        oc = None if self.output_currents is None else self.output_currents * factor
        return Protocol(tuple(c * factor for c in self.currents), self.durations,
                        self.t_eval, self.t_start, self.cutoff_voltage, oc)


@dataclass
class Trace:
    """Simulation result at the sample instants."""

    times: np.ndarray
    outputs: np.ndarray
    currents: np.ndarray
    states: np.ndarray | None = None
    sensitivities: np.ndarray | None = None
    sensitivity_names: tuple[str, ...] = ()
    stats: dict = field(default_factory=dict)
    terminated: str | None = None

    def __len__(self):
        return self.times.size
