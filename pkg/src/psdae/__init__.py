"""Transient-stability simulation of power-system DAEs.

Three model forms (the semi-explicit DAE, its implicit-function-theorem ODE
form and a mu-regularized approximation) discretized with fixed-step BDF or
trapezoidal rules and solved by Newton's method.
"""
from .integrators import SchemeConfig, bdf_constants
from .model import (PowerSystemModel, build_model, check_index_one, check_regularity,
                    linearize)
from .network import LoadModel, PowerNetwork, apply_load_disturbance, load_case, parse_case
from .powerflow import initialize_dynamic_state, solve_power_flow
from .sim import (ScenarioSpec, SimulationTrace, error_norm_series, mu_sweep, reference_trace,
                  rmse, run, timing_comparison)
from .solver import NewtonConfig, newton_solve
from .transforms import ModelForm, Variant

__all__ = [
    "LoadModel", "ModelForm", "NewtonConfig", "PowerNetwork", "PowerSystemModel", "ScenarioSpec",
    "SchemeConfig", "SimulationTrace", "Variant", "apply_load_disturbance", "bdf_constants",
    "build_model", "check_index_one", "check_regularity", "error_norm_series",
    "initialize_dynamic_state", "linearize", "load_case", "mu_sweep", "newton_solve", "parse_case",
    "reference_trace", "rmse", "run", "solve_power_flow", "timing_comparison",
]
