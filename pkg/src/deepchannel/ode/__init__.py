"""Averaged learning-dynamics ODEs, an integrator and convergence/invariant checks."""
from .analysis import InvariantReport, analyze, classify_root
from .bridge import sgd_vs_ode
from .integrate import StepControl, Trajectory, integrate
from .systems import (
    OdeSystem,
    build_chain,
    build_chain_stdp,
    build_compressive,
    build_expansive,
    build_general_linear,
    build_nonlinear_power,
    counterexample_state,
    random_state,
)

__all__ = [
    "InvariantReport",
    "OdeSystem",
    "StepControl",
    "Trajectory",
    "analyze",
    "build_chain",
    "build_chain_stdp",
    "build_compressive",
    "build_expansive",
    "build_general_linear",
    "build_nonlinear_power",
    "classify_root",
    "counterexample_state",
    "integrate",
    "random_state",
    "sgd_vs_ode",
]
