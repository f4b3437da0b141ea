"""Bayesian risk optimization with nested simulation and stochastic approximation."""

from .errors import ConfigError, DomainError
from .estimators import (
    GradientEstimate,
    InnerObservation,
    NestedBatch,
    NestedSample,
    RiskSpec,
    empirical_cvar,
    empirical_var,
    grad_cvar,
    grad_expectation,
    grad_mean_variance,
    grad_var,
    grad_var_batched,
    indicator_mismatch,
    nested_mean,
)
from .models import MarketModel, QuadraticModel, SimulationModel
from .posterior import EmpiricalPosterior, GaussianPosterior, MCMCConfig, PointPosterior, quadratic_posterior

__all__ = [
    "ConfigError",
    "DomainError",
    "EmpiricalPosterior",
    "GaussianPosterior",
    "GradientEstimate",
    "InnerObservation",
    "MCMCConfig",
    "MarketModel",
    "NestedBatch",
    "NestedSample",
    "PointPosterior",
    "QuadraticModel",
    "RiskSpec",
    "SimulationModel",
    "empirical_cvar",
    "empirical_var",
    "grad_cvar",
    "grad_expectation",
    "grad_mean_variance",
    "grad_var",
    "grad_var_batched",
    "indicator_mismatch",
    "nested_mean",
    "quadratic_posterior",
]
