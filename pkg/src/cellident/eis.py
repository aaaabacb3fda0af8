"""Small-signal impedance from a linearisation about a zero-current steady state.

With ``M dx/dt = F(x, I)`` and ``V = h(x, I)`` linearised as ``A, B, C, D`` the
impedance is ``Z(w) = -(C (iwM - A)^-1 B + D)``. Current is discharge-positive,
so ``Z = -dV/dI`` and passive cells have ``Re Z > 0``. The state-of-charge
integrator contributes a ``1/(iw)`` tail at low frequency; it is physical and
kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .costs import CostValue
from .errors import ConfigurationError
from .models.base import DaeSystem, SolverError, rebuild_geometry
from .models.solver import fd_step, find_steady_state
from .parameters import ParameterSet
from .problems import Dataset, _theta_mapping

__all__ = ["Linearisation", "ImpedanceSpectrum", "linearise", "impedance", "sweep", "default_frequencies",
           "eis_cost", "ImpedanceProblem", "ImpedanceCost"]

FD_REL = 1e-7
FD_FLOOR = 1e-10


@dataclass(frozen=True)
class Linearisation:
    """Linear model about ``x_star`` at zero current.

    ``M`` is the mass-matrix diagonal; ``A`` may be dense or sparse.
    """

    M: np.ndarray
    A: object
    B: np.ndarray
    C: np.ndarray
    D: float
    x_star: np.ndarray
    soc: float
    residual: float

    @property
    def n(self) -> int:
        return self.B.size


@dataclass(frozen=True)
class ImpedanceSpectrum:
    frequencies: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        if f.ndim != 1 or np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be positive and strictly increasing")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "Z", np.asarray(self.Z, dtype=complex))

    def to_dataset(self, metadata=None) -> Dataset:
        return Dataset.spectrum(self.frequencies, self.Z, metadata)

    def to_csv(self, path=None) -> str:
        return self.to_dataset().to_csv(path)


def default_frequencies(f_min: float = 1e-4, f_max: float = 1e3, per_decade: int = 10) -> np.ndarray:
    """Log-spaced grid with ``per_decade`` points per decade, both ends included."""
    decades = math.log10(f_max / f_min)
    n = int(round(decades * per_decade)) + 1
    return np.logspace(math.log10(f_min), math.log10(f_max), n)


def _fd_columns(fun, x, rel=FD_REL, floor=FD_FLOOR):
    cols = []
    for k in range(x.size):
        h = fd_step(x[k], rel, floor)
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h))
    return np.array(cols).T


def linearise(system: DaeSystem, theta: Mapping[str, float] | None = None, soc: float = 0.5,
              method: str = "auto") -> Linearisation:
    """Linearise ``system`` about its zero-current steady state at ``soc``.

    ``method="auto"`` uses the registered linear form and output Jacobian when
    available; ``"fd"`` forces central differences (step ``1e-7`` relative,
    ``1e-10`` at zero) for every block.

    Raises
    ------
    SolverError
        When no steady state is found.
    """
    if method not in ("auto", "fd"):
        raise ValueError("method must be 'auto' or 'fd'")
    system = rebuild_geometry(system, theta)
    p = system.resolve(theta)
    if "soc0" in p:
        p["soc0"] = float(soc)
    x = find_steady_state(system, p, soc)
    n = x.size
    M = np.ones(n) if system.mass is None else np.asarray(system.mass, dtype=float)
    analytic = method == "auto"
    if analytic and system.is_linear:
        A, B = system.linear(p)
        B = np.asarray(B, dtype=float)
    else:
        A = _fd_columns(lambda z: system.F(0.0, z, p, 0.0), x)
        h = FD_REL
        B = (system.F(0.0, x, p, h) - system.F(0.0, x, p, -h)) / (2 * h)
    if analytic and system.output_jacobian is not None:
        J, dI = system.output_jacobian(0.0, x[None, :], p, 0.0)
        C = np.asarray(J, dtype=float)[0]
        D = float(np.asarray(dI)[0])
    else:
        C = _fd_columns(lambda z: system.output(0.0, z[None, :], p, 0.0)[0], x)
        C = np.asarray(C, dtype=float).reshape(n)
        h = FD_REL
        D = float((system.output(0.0, x[None, :], p, h)[0] - system.output(0.0, x[None, :], p, -h)[0]) / (2 * h))
    residual = float(np.max(np.abs(system.F(0.0, x, p, 0.0)))) if n else 0.0
    dense_A = A.toarray() if sp.issparse(A) else np.asarray(A)
    if not (np.all(np.isfinite(dense_A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(C))
            and math.isfinite(D)):
        raise SolverError(f"non-finite linearisation of {system.name} at soc={soc}")
    return Linearisation(M, A, B, C, D, x, float(soc), residual)


def impedance(lin: Linearisation, omega: float) -> complex:
    """``Z = -(C v + D)`` with ``(i omega M - A) v = B``; ``omega`` in rad/s."""
    if not omega > 0:
        raise ValueError("angular frequency must be positive")
    if sp.issparse(lin.A) and lin.n > 200:
        K = (1j * omega * sp.diags(lin.M) - lin.A).tocsc()
        try:
            v = spla.spsolve(K, lin.B.astype(complex))
        except RuntimeError as exc:
            raise SolverError(f"singular impedance system at omega={omega}") from exc
        if not np.all(np.isfinite(v)):
            raise SolverError(f"singular impedance system at omega={omega}")
    else:
        A = lin.A.toarray() if sp.issparse(lin.A) else np.asarray(lin.A)
        K = 1j * omega * np.diag(lin.M) - A
        try:
            v = np.linalg.solve(K, lin.B.astype(complex))
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular impedance system at omega={omega}") from exc
    return complex(-(lin.C @ v + lin.D))


def sweep(lin: Linearisation, frequencies=None) -> ImpedanceSpectrum:
    """Impedance over ``frequencies`` in Hz (default :func:`default_frequencies`)."""
    f = default_frequencies() if frequencies is None else np.asarray(frequencies, dtype=float)
    f = np.atleast_1d(f)
    Z = np.array([impedance(lin, 2 * math.pi * fk) for fk in f])
    return ImpedanceSpectrum(f, Z)


def _z_of(obj) -> np.ndarray:
    if isinstance(obj, ImpedanceSpectrum):
        return obj.Z
    if isinstance(obj, Dataset):
        return obj.impedance
    return np.asarray(obj, dtype=complex)


def eis_cost(spectrum, data) -> CostValue:
    """Root-mean-square modulus of the complex residuals, ``sqrt(sum |dZ|^2 / n)``."""
    z, d = _z_of(spectrum), _z_of(data)
    if z.shape != d.shape:
        raise ValueError("spectrum and data differ in length")
    r = z - d
    return CostValue(float(np.sqrt(np.mean(np.abs(r) ** 2))))


class ImpedanceProblem:
    """Model impedance at a dataset's frequencies and operating SOC.

    Geometric parameters re-discretise the model through the same rebuild path
    as time-domain problems.
    """

    def __init__(self, system: DaeSystem, params: ParameterSet, dataset: Dataset, soc: float | None = None,
                 fixed: Mapping[str, float] | None = None):
        if dataset.kind != "frequency":
            raise ValueError("ImpedanceProblem needs a spectrum dataset")
        unknown = [n for n in params.names if n not in system.defaults]
        if unknown:
            raise KeyError(f"parameters {unknown} are not coefficients of model {system.name!r}")
        self.system = system
        self.params = params
        self.dataset = dataset
        self.fixed = dict(fixed or {})
        self.soc = float(dataset.metadata.get("soc", 0.5) if soc is None else soc)

    @property
    def n_observations(self) -> int:
        return len(self.dataset)

    def theta_mapping(self, theta) -> dict[str, float]:
        return _theta_mapping(self.params, theta, self.fixed)

    def spectrum(self, theta) -> ImpedanceSpectrum:
        lin = linearise(self.system, self.theta_mapping(theta), self.soc)
        return sweep(lin, self.dataset.frequency)


class ImpedanceCost:
    """RMS impedance misfit; gradients are not available for impedance fits."""

    differentiable = False
    name = "eis-rmse"

    def __init__(self, problem: ImpedanceProblem):
        self.problem = problem
        self.params = problem.params

    def __call__(self, theta, gradient: bool = False) -> CostValue:
        if gradient:
            raise ConfigurationError("impedance costs provide no gradients; use a gradient-free method")
        try:
            spec = self.problem.spectrum(np.asarray(theta, dtype=float))
        except SolverError:
            return CostValue.failure()
        out = eis_cost(spec, self.problem.dataset)
        return out if np.isfinite(out.value) else CostValue.failure()
