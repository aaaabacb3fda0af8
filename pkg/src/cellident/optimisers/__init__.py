"""Optimisers sharing an ask/tell interface and a common driver."""

from .base import (ALGORITHMS, GRADIENT_ALGORITHMS, Algorithm, Evaluator, NoFeasibleEvaluation,
                   OptimiserConfig, OptimResult, register, run)
from .gradient import (AdamState, AdamW, GradientDescent, IRPropMinus, RpropState, adamw_step,
                       gradient_descent_step, irprop_minus_step)
from .simplex import NelderMead, nelder_mead_iteration, nelder_mead_step, reflect
from .population import (CuckooSearch, DifferentialEvolution, ParticleSwarm, Swarm, abandon_nests,
                         cuckoo_step, de_select, de_trials, levy_steps, pso_step)
from .es import (CMAES, SNES, XNES, CmaState, SnesState, XnesState, cma_update, cma_weights,
                 default_population, nes_utilities, snes_update, xnes_update)

__all__ = [
    "ALGORITHMS", "GRADIENT_ALGORITHMS", "Algorithm", "Evaluator", "NoFeasibleEvaluation",
    "OptimiserConfig", "OptimResult", "register", "run",
    "AdamState", "AdamW", "GradientDescent", "IRPropMinus", "RpropState", "adamw_step",
    "gradient_descent_step", "irprop_minus_step",
    "NelderMead", "nelder_mead_iteration", "nelder_mead_step", "reflect",
    "CuckooSearch", "DifferentialEvolution", "ParticleSwarm", "Swarm", "abandon_nests", "cuckoo_step",
    "de_select", "de_trials", "levy_steps", "pso_step",
    "CMAES", "SNES", "XNES", "CmaState", "SnesState", "XnesState", "cma_update", "cma_weights",
    "default_population", "nes_utilities", "snes_update", "xnes_update",
]
