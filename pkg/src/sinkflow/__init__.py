"""Step-size generalized Sinkhorn iterations, their continuous-time flows,
noisy variants and a 1D bridge sandbox, on discrete measures.

Submodules: :mod:`measures`, :mod:`sinkhorn`, :mod:`flow`,
:mod:`stochastic`, :mod:`bridge`, :mod:`cli`. Numerical kernels come from a
compiled extension when it is built and from numpy otherwise; see
:data:`sinkflow.kernels.BACKEND`.
"""
from .kernels import BACKEND
from .measures import (
    ConvergenceError,
    CostMatrix,
    Coupling,
    DegeneracyError,
    DiscreteMeasure,
    ParameterError,
    ReferenceCoupling,
    StructureError,
    build_reference,
    kl_divergence,
    total_variation,
)
from .sinkhorn import (
    Potentials,
    SolverConfig,
    StepSchedule,
    bregman_dual,
    classical_step,
    coupling_from_g,
    gamma_step_dual,
    gamma_step_primal,
    objective,
    solve,
    solve_reference,
)
from .flow import IntegratorConfig, integrate, rate_certificate
from .stochastic import NoiseModel, StochasticRunConfig, run_constant_step, run_robbins_monro

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConvergenceError",
    "CostMatrix",
    "Coupling",
    "DegeneracyError",
    "DiscreteMeasure",
    "IntegratorConfig",
    "NoiseModel",
    "ParameterError",
    "Potentials",
    "ReferenceCoupling",
    "SolverConfig",
    "StepSchedule",
    "StochasticRunConfig",
    "StructureError",
    "bregman_dual",
    "build_reference",
    "classical_step",
    "coupling_from_g",
    "gamma_step_dual",
    "gamma_step_primal",
    "integrate",
    "kl_divergence",
    "objective",
    "rate_certificate",
    "run_constant_step",
    "run_robbins_monro",
    "solve",
    "solve_reference",
    "total_variation",
]
