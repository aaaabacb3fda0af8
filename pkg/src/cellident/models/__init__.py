"""Battery models, protocols and the integrator."""

from .base import BuildError, DaeSystem, ModelBuilder, Protocol, SolverError, Trace, rebuild_geometry
from .curves import Curve, default_ocv, default_ocv_table, graphite_ocp, nmc811_ocp
from .ecm import EcmConfig, build_ecm
from .solver import (SolverOptions, fd_step, find_steady_state, integrate,
                     integrate_with_sensitivities, state_jacobian)
from .spm import ElectrodeConfig, SpmConfig, SpmModel, build_spm, theoretical_capacity

__all__ = [
    "BuildError", "DaeSystem", "ModelBuilder", "Protocol", "SolverError", "Trace", "rebuild_geometry",
    "Curve", "default_ocv", "default_ocv_table", "graphite_ocp", "nmc811_ocp",
    "EcmConfig", "build_ecm",
    "SolverOptions", "fd_step", "find_steady_state", "integrate", "integrate_with_sensitivities",
    "state_jacobian",
    "ElectrodeConfig", "SpmConfig", "SpmModel", "build_spm", "theoretical_capacity",
]
