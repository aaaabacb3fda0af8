"""Battery model parameter identification and design optimisation.

Layers, bottom up: :mod:`~cellident.models` (DAE systems and the solver),
:mod:`~cellident.problems` (data plus a model), :mod:`~cellident.costs`,
:mod:`~cellident.optimisers` and :mod:`~cellident.samplers`, with
:mod:`~cellident.eis` for the frequency domain and :mod:`~cellident.cli` for
batch runs.
"""

from .errors import ConfigurationError
from .models import (DaeSystem, EcmConfig, Protocol, SolverError, SolverOptions, SpmConfig, SpmModel, build_ecm,
                     build_spm, integrate)
from .parameters import Parameter, ParameterSet, Prior, Transformation
from .problems import Dataset, DesignProblem, FittingProblem, SynthSpec, synthesize
from .costs import (COSTS, MAP, GaussianLogLikelihood, GravimetricEnergyDensity, LogPosterior,
                    RootMeanSquaredError, SumSquaredError, VolumetricEnergyDensity, hessian_identifiability)
from .optimisers import ALGORITHMS, OptimiserConfig, OptimResult, run
from .samplers import SAMPLERS, SamplerConfig, run_sampler, summary
from .eis import ImpedanceCost, ImpedanceProblem, linearise, sweep
from .estimators import BayesianEstimator, ParameterEstimator

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DaeSystem", "EcmConfig", "Protocol", "SolverError", "SolverOptions", "SpmConfig",
    "SpmModel", "build_ecm", "build_spm", "integrate",
    "Parameter", "ParameterSet", "Prior", "Transformation",
    "Dataset", "DesignProblem", "FittingProblem", "SynthSpec", "synthesize",
    "COSTS", "MAP", "GaussianLogLikelihood", "GravimetricEnergyDensity", "LogPosterior", "RootMeanSquaredError",
    "SumSquaredError", "VolumetricEnergyDensity", "hessian_identifiability",
    "ALGORITHMS", "OptimiserConfig", "OptimResult", "run",
    "SAMPLERS", "SamplerConfig", "run_sampler", "summary",
    "ImpedanceCost", "ImpedanceProblem", "linearise", "sweep",
    "BayesianEstimator", "ParameterEstimator",
    "__version__",
]
