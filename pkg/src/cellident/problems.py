"""Problems bind a model, a parameter set and data (or a design protocol).

Costs only ever talk to a problem: :class:`FittingProblem` turns a parameter
vector into a prediction aligned with the dataset, :class:`DesignProblem` turns
a design vector into a discharge trace plus the cell mass and volume.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .models.base import DaeSystem, ModelBuilder, Protocol, SolverError, Trace
from .models.solver import SolverOptions, integrate, integrate_with_sensitivities
from .parameters import ParameterSet

__all__ = [
    "Dataset",
    "Prediction",
    "FittingProblem",
    "SynthSpec",
    "synthesize",
    "InfeasibleDesign",
    "MassModel",
    "DesignProblem",
    "DesignResult",
    "cell_mass",
    "electrode_density",
    "format_float",
]

TIME_HEADER = ("time_s", "current_A", "voltage_V")
FREQ_HEADER = ("freq_Hz", "z_re_ohm", "z_im_ohm")


def format_float(x: float) -> str:
    """Decimal text that parses back to the same double."""
    return format(float(x), ".17g")


class Dataset:
    """Time-domain ``(t, I, V)`` or frequency-domain ``(f, Z)`` observations.

    Parameters
    ----------
    kind : {"time", "frequency"}
    x : array_like
        Sample times [s] or frequencies [Hz], strictly increasing.
    values : array_like
        ``(current, voltage)`` columns for time data, complex impedance for
        frequency data.
    metadata : mapping, optional
        Free-form annotations such as ``soc0`` or ``temperature``.
    """

    def __init__(self, kind: str, x, values, metadata: Mapping | None = None):
        if kind not in ("time", "frequency"):
            raise ValueError(f"unknown dataset kind {kind!r}")
        x = np.array(x, dtype=float)
        # a spectrum may hold a single frequency; a time series needs an interval
        if x.ndim != 1 or x.size < (2 if kind == "time" else 1):
            raise ValueError("a dataset needs at least two records" if kind == "time" else "empty spectrum")
        if np.any(np.diff(x) <= 0):
            raise ValueError("dataset abscissa must be strictly increasing")
        self.kind = kind
        self.metadata = dict(metadata or {})
        if kind == "time":
            current, voltage = (np.array(v, dtype=float) for v in values)
            if current.shape != x.shape or voltage.shape != x.shape:
                raise ValueError("current and voltage must match the time column")
            arrays = (x, current, voltage)
            self.time, self.current, self.voltage = arrays
        else:
            z = np.array(values, dtype=complex)
            if z.shape != x.shape:
                raise ValueError("impedance must match the frequency column")
            if np.any(x <= 0):
                raise ValueError("frequencies must be positive")
            arrays = (x, z.real, z.imag)
            self.frequency, self.impedance = x, z
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("dataset contains non-finite values")
        for a in arrays:
            a.flags.writeable = False
        if kind == "frequency":
            self.impedance.flags.writeable = False

    @classmethod
    def time_series(cls, time, current, voltage, metadata=None) -> "Dataset":
        return cls("time", time, (current, voltage), metadata)

    @classmethod
    def spectrum(cls, frequency, impedance, metadata=None) -> "Dataset":
        return cls("frequency", frequency, impedance, metadata)

    def __len__(self) -> int:
        return (self.time if self.kind == "time" else self.frequency).size

    @property
    def observations(self) -> np.ndarray:
        return self.voltage if self.kind == "time" else self.impedance

    def columns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.kind == "time":
            return self.time, self.current, self.voltage
        return self.frequency, self.impedance.real, self.impedance.imag

    def to_csv(self, path=None) -> str:
        """Write the dataset as CSV (17 significant digits); returns the text."""
        header = TIME_HEADER if self.kind == "time" else FREQ_HEADER
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*self.columns()):
            writer.writerow([format_float(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, metadata=None) -> "Dataset":
        text = Path(path).read_text()
        reader = csv.reader(io.StringIO(text))
        header = tuple(h.strip() for h in next(reader))
        rows = np.array([[float(v) for v in r] for r in reader if r], dtype=float)
        if rows.ndim != 2 or rows.shape[1] != 3:
            raise ValueError(f"{path}: expected three columns")
        if header == TIME_HEADER:
            return cls.time_series(rows[:, 0], rows[:, 1], rows[:, 2], metadata)
        if header == FREQ_HEADER:
            return cls.spectrum(rows[:, 0], rows[:, 1] + 1j * rows[:, 2], metadata)
        raise ValueError(f"{path}: unrecognised header {','.join(header)}")

    def equals(self, other: "Dataset") -> bool:
        """Bitwise equality of all columns."""
        return self.kind == other.kind and all(
            np.array_equal(a, b) for a, b in zip(self.columns(), other.columns()))


@dataclass
class Prediction:
    """Model output at the dataset instants; ``sensitivities`` is ``n x d`` (physical)."""

    values: np.ndarray
    sensitivities: np.ndarray | None = None
    trace: Trace | None = None


def _theta_mapping(params: ParameterSet, theta, fixed: Mapping[str, float] | None):
    if isinstance(theta, Mapping):
        values = dict(theta)
    else:
        values = params.as_dict(theta)
    merged = dict(fixed or {})
    merged.update(values)
    return merged


class FittingProblem:
    """Model output aligned with a time-domain dataset.

    The dataset current is replayed as a zero-order hold between samples, so the
    simulation sees exactly the measured excitation.

    Parameters
    ----------
    system : DaeSystem
    params : ParameterSet
        Unknowns; every name must be a model parameter.
    dataset : Dataset
    fixed : mapping, optional
        Model coefficients held at values other than the model defaults.
    """

    def __init__(self, system: DaeSystem, params: ParameterSet, dataset: Dataset,
                 fixed: Mapping[str, float] | None = None, options: SolverOptions | None = None):
        if dataset.kind != "time":
            raise ValueError("FittingProblem needs a time-domain dataset")
        unknown = [n for n in params.names if n not in system.defaults]
        if unknown:
            raise KeyError(f"parameters {unknown} are not coefficients of model {system.name!r}")
        self.system = system
        self.params = params
        self.dataset = dataset
        self.fixed = dict(fixed or {})
        self.options = options or SolverOptions()
        self.protocol = Protocol.from_samples(dataset.time, dataset.current)

    @property
    def n_observations(self) -> int:
        return len(self.dataset)

    @property
    def observations(self) -> np.ndarray:
        return self.dataset.voltage

    def theta_mapping(self, theta) -> dict[str, float]:
        return _theta_mapping(self.params, theta, self.fixed)

    def evaluate(self, theta, sensitivities: bool = False) -> Prediction:
        """Simulate at ``theta`` (physical vector or mapping).

        Raises
        ------
        SolverError
            With ``theta`` attached, when the forward simulation fails.
        """
        mapping = self.theta_mapping(theta)
        try:
            if sensitivities:
                trace = integrate_with_sensitivities(self.system, mapping, self.protocol,
                                                     self.params.names, self.options, keep_states=False)
            else:
                trace = integrate(self.system, mapping, self.protocol, self.options, keep_states=False)
        except SolverError as exc:
            exc.theta = mapping
            raise
        if trace.outputs.size != self.n_observations:
            raise SolverError("simulation ended before the last observation", float(trace.times[-1]), mapping)
        return Prediction(trace.outputs, trace.sensitivities, trace)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic dataset: true values, excitation, noise level and seed."""

    theta_true: Mapping[str, float]
    protocol: Protocol
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("noise sigma must be non-negative")


def synthesize(system: DaeSystem, spec: SynthSpec, options: SolverOptions | None = None,
               return_clean: bool = False):
    """Simulate ``spec.protocol`` at ``spec.theta_true`` and add seeded Gaussian noise."""
    trace = integrate(system, dict(spec.theta_true), spec.protocol, options, keep_states=False)
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.sigma, trace.outputs.size) if spec.sigma > 0 else 0.0
    p = system.resolve(dict(spec.theta_true))
    meta = {"sigma": spec.sigma, "seed": spec.seed}
    for key in ("soc0", "T"):
        if key in p:
            meta["temperature" if key == "T" else key] = p[key]
    data = Dataset.time_series(trace.times, trace.currents, trace.outputs + noise, meta)
    if return_clean:
        return data, Dataset.time_series(trace.times, trace.currents, trace.outputs, meta)
    return data


# ----------------------------------------------------------------------------
# design


class InfeasibleDesign(ValueError):
    """Design vector violates a physical constraint (e.g. non-positive porosity)."""


def electrode_density(eps_active: float, eps_inactive: float, rho_active: float,
                      rho_inactive: float, rho_electrolyte: float) -> float:
    """Effective density of a porous electrode, pores filled with electrolyte."""
    porosity = 1.0 - eps_active - eps_inactive
    return eps_active * rho_active + porosity * rho_electrolyte + eps_inactive * rho_inactive


def cell_mass(area: float, layers: Sequence[tuple[float, float]]) -> float:
    """Slab mass ``A * sum(L_i * rho_i)`` for ``layers = [(thickness, density), ...]``."""
    if area <= 0:
        raise ValueError("area must be positive")
    total = 0.0
    for thickness, density in layers:
        if thickness < 0 or density <= 0:
            raise ValueError("layer thickness must be >= 0 and density > 0")
        total += thickness * density
    return area * total


@dataclass(frozen=True)
class MassModel:
    """Layered slab: Cu collector | negative | separator | positive | Al collector.

    Densities in kg/m^3, thicknesses in m. Electrode layers take their thickness
    and volume fractions from the model parameters.
    """

    rho_active_n: float = 2260.0
    rho_active_p: float = 4870.0
    rho_inactive_n: float = 1800.0
    rho_inactive_p: float = 1800.0
    rho_electrolyte: float = 1280.0
    rho_separator: float = 1009.0
    separator_porosity: float = 0.47
    rho_cu: float = 8960.0
    rho_al: float = 2700.0
    L_separator: float = 12e-6
    L_cu: float = 12e-6
    L_al: float = 16e-6

    def __post_init__(self):
        for name in ("rho_active_n", "rho_active_p", "rho_inactive_n", "rho_inactive_p",
                     "rho_electrolyte", "rho_separator", "rho_cu", "rho_al"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def layers(self, p: Mapping[str, float]) -> list[tuple[float, float]]:
        sep = (self.separator_porosity * self.rho_electrolyte
               + (1.0 - self.separator_porosity) * self.rho_separator)
        return [
            (self.L_cu, self.rho_cu),
            (p["L_n"], electrode_density(p["eps_act_n"], p["eps_inact_n"], self.rho_active_n,
                                         self.rho_inactive_n, self.rho_electrolyte)),
            (self.L_separator, sep),
            (p["L_p"], electrode_density(p["eps_act_p"], p["eps_inact_p"], self.rho_active_p,
                                         self.rho_inactive_p, self.rho_electrolyte)),
            (self.L_al, self.rho_al),
        ]

    def mass(self, p: Mapping[str, float]) -> float:
        return cell_mass(p["A"], self.layers(p))

    def volume(self, p: Mapping[str, float]) -> float:
        return p["A"] * sum(L for L, _ in self.layers(p))


@dataclass
class DesignResult:
    trace: Trace
    mass: float
    volume: float
    current: float
    capacity: float
    porosity: dict = field(default_factory=dict)


class DesignProblem:
    """Constant-current discharge of a candidate design to a voltage cut-off.

    Parameters
    ----------
    builder : ModelBuilder
        SPM builder (must expose ``capacity(theta)``).
    params : ParameterSet
        Design variables, e.g. ``L_p`` and ``eps_act_p``.
    c_rate : float
        Discharge rate relative to the 1C current.
    cutoff_voltage : float
    rescale_current : bool
        Recompute the 1C current from each design's theoretical capacity;
        otherwise the initial design's 1C current is held fixed.
    """

    def __init__(self, builder: ModelBuilder, params: ParameterSet, c_rate: float = 1.0,
                 cutoff_voltage: float = 2.5, dt: float = 10.0, mass_model: MassModel | None = None,
                 rescale_current: bool = True, fixed: Mapping[str, float] | None = None,
                 max_duration: float | None = None, options: SolverOptions | None = None):
        if c_rate <= 0:
            raise ValueError("c_rate must be positive")
        self.builder = builder
        self.params = params
        self.c_rate = float(c_rate)
        self.cutoff_voltage = float(cutoff_voltage)
        self.dt = float(dt)
        self.mass_model = mass_model or MassModel()
        self.rescale_current = rescale_current
        self.fixed = dict(fixed or {})
        self.options = options or SolverOptions()
        self.max_duration = max_duration or 1.5 * 3600.0 / self.c_rate
        base = self.model_parameters(params.initial)
        self.reference_current = self.c_rate * builder.capacity(base)
        ocv = self._open_circuit(base)
        if not self.cutoff_voltage < ocv:
            raise ValueError(f"cut-off {self.cutoff_voltage} V is above the initial OCV {ocv:.3f} V")

    def model_parameters(self, theta) -> dict[str, float]:
        p = self.builder.default_parameters()
        p.update(self.fixed)
        p.update(_theta_mapping(self.params, theta, None))
        return p

    def _open_circuit(self, p) -> float:
        system = self.builder.system(p)
        x0 = system.initial_state(system.resolve(p))
        return float(system.output(0.0, x0[None, :], system.resolve(p), 0.0)[0])

    def porosities(self, p: Mapping[str, float]) -> dict[str, float]:
        return {k: 1.0 - p[f"eps_act_{k}"] - p[f"eps_inact_{k}"] for k in ("n", "p")}

    def current(self, p: Mapping[str, float]) -> float:
        if self.rescale_current:
            return self.c_rate * self.builder.capacity(p)
        return self.reference_current

    def design_evaluate(self, theta) -> DesignResult:
        """Apply the porosity link, size the current, discharge to cut-off.

        Raises
        ------
        InfeasibleDesign
            When a porosity is not positive.
        SolverError
            When the discharge cannot be simulated.
        """
        p = self.model_parameters(theta)
        porosity = self.porosities(p)
        bad = {k: v for k, v in porosity.items() if not v > 0}
        if bad:
            raise InfeasibleDesign(f"non-positive porosity {bad}")
        current = self.current(p)
        capacity = self.builder.capacity(p)
        n = int(math.floor(self.max_duration / self.dt + 1e-9)) + 1
        protocol = Protocol((current,), (self.max_duration,), np.arange(n) * self.dt,
                            cutoff_voltage=self.cutoff_voltage)
        system = self.builder.system(p)
        trace = integrate(system, {k: p[k] for k in system.defaults}, protocol, self.options,
                          keep_states=False)
        return DesignResult(trace, self.mass_model.mass(p), self.mass_model.volume(p),
                            current, capacity, porosity)
