"""Equilibrium randomized stopping times under an expectation constraint.

Construction, verification, ODE fields and Monte Carlo validation for
one-dimensional diffusions.
"""
from .construct import (ComponentHint, ConstructionResult, construct_equilibrium, find_root,
                        smooth_fit_residual_bm, unconstrained_threshold_bm, z_tilde)
from .diffusion import Payoff, ProblemSpec, generator_apply, scale_function, simulate_path
from .errors import BracketError, ConstructionError, DomainError, NumericError
from .expected_time import check_constraint, expected_time_field
from .mc import McEstimate, estimate_e_and_J, estimate_perturbation_gap, occupation_ratio, sample_stopping
from .ode import BoundaryCondition, Field, max_residual, one_sided_derivative, solve_linear_bvp
from .reward import reward_closed_form_bm, reward_field
from .strategy import OpenSetUnion, RateFunction, Strategy, rate_at, region_partition, validate
from .verify import VerificationReport, check_necessary, check_regularity, check_sufficient

__version__ = "0.1.0"
