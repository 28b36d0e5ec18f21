"""Bilevel optimization with a multi-objective lower level.

Three formulations of the same bilevel problem are supported, each with a
projected (stochastic) gradient driver:

* optimistic: minimize jointly over the upper-level variables and the
  scalarization weights;
* risk-neutral: minimize the average of the upper-level objective over a
  weight grid on the simplex;
* risk-averse: minimize the worst case over the stationarity-characterized
  set of weighted-sum minimizers.
"""

from .core import (
    BoxSet,
    RngStream,
    finite_diff_grad,
    finite_diff_jacobian,
    project_box,
    project_simplex,
    sample_minibatch,
    sample_weight_grid,
)
from .adjoint import AdjointWorkspace, bsg_opt_direction, bsg_rn_direction, solve_adjoint
from .drivers import (
    DriverConfig,
    ParetoFrontSample,
    RunTrace,
    pareto_front,
    run_bsg_opt,
    run_bsg_ra,
    run_bsg_rn,
    true_value,
)
from .errors import (
    DivergenceError,
    InnerMaxError,
    InnerMaxInfeasibleError,
    LLSolveError,
    NumericalError,
    SingularHessianError,
)
from .harness import AggregateTrace, RunConfig, run_experiment
from .lower import LLBudget, solve_ll, solve_ll_accurate, update_accuracy, weighted_ll_grad
from .noise import NoiseSpec, perturb_cross_hessian, perturb_gradient, perturb_hessian
from .problems import (
    BilevelProblem,
    GKV1Params,
    LLObjective,
    QuadraticUL,
    initial_point,
    make_gkv1,
    make_gkv1_nonsep,
    make_gkv1_sep,
    make_jos1,
    make_sp1,
    make_spd,
    problem_from_key,
)
from .riskaverse import InnerMaxSolution, lagrangian_grad_x, ra_subgradient, solve_inner_max
from .stepsize import ArmijoParams, ArmijoResult, StepsizeRule, armijo_search
from ._version import __version__

__all__ = [
    "AdjointWorkspace",
    "AggregateTrace",
    "ArmijoParams",
    "ArmijoResult",
    "BilevelProblem",
    "BoxSet",
    "DivergenceError",
    "DriverConfig",
    "GKV1Params",
    "InnerMaxError",
    "InnerMaxInfeasibleError",
    "InnerMaxSolution",
    "LLBudget",
    "LLObjective",
    "LLSolveError",
    "NoiseSpec",
    "NumericalError",
    "ParetoFrontSample",
    "QuadraticUL",
    "RngStream",
    "RunConfig",
    "RunTrace",
    "SingularHessianError",
    "StepsizeRule",
    "armijo_search",
    "bsg_opt_direction",
    "bsg_rn_direction",
    "finite_diff_grad",
    "finite_diff_jacobian",
    "initial_point",
    "lagrangian_grad_x",
    "make_gkv1",
    "make_gkv1_nonsep",
    "make_gkv1_sep",
    "make_jos1",
    "make_sp1",
    "make_spd",
    "pareto_front",
    "perturb_cross_hessian",
    "perturb_gradient",
    "perturb_hessian",
    "problem_from_key",
    "project_box",
    "project_simplex",
    "ra_subgradient",
    "run_bsg_opt",
    "run_bsg_ra",
    "run_bsg_rn",
    "run_experiment",
    "sample_minibatch",
    "sample_weight_grid",
    "solve_adjoint",
    "solve_inner_max",
    "solve_ll",
    "solve_ll_accurate",
    "true_value",
    "update_accuracy",
    "weighted_ll_grad",
]
