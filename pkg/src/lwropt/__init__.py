"""Optimal departure planning for groups of drivers on a congested road."""
from .costexpr import Function, parse
from .fluxmodel import FluxModel, affine_flux_model, build_flux_model
from .groups import FractionField, Group, GroupSpec, marginal_cost, total_cost
from .laxhopf import BoundaryProfile, LaxSolution
from .planner import Plan, PlannerOptions, plan, solve_constants

__all__ = [
    "BoundaryProfile", "FluxModel", "FractionField", "Function", "Group", "GroupSpec",
    "LaxSolution", "Plan", "PlannerOptions", "affine_flux_model", "build_flux_model",
    "marginal_cost", "parse", "plan", "solve_constants", "total_cost",
]
__version__ = "0.1.0"
