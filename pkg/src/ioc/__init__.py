"""Minimum-principle inverse optimal control for LTI-quadratic problems.

Given a trajectory of a linear system driven by an (unknown) quadratic-cost
optimal controller, recover the cost weights by two routes and predict in
advance whether either can succeed:

* residual route (`soft_ioc`): treat both minimum-principle conditions as
  residuals and minimize their integrated norm via a backward differential
  Riccati equation;
* Gram route (`hard_ioc`): eliminate the costate exactly and minimize the
  stationarity residual through an integrated Gram matrix;
* diagnostics (`solvability`): observability-style rank tests along the
  data and closed-form eigenstructure case analysis for second-order
  systems.

`harness` provides the `ioc` command-line front-end (simulate / solve /
diagnose / reproduce / sweep).
"""
from .model import (DampingClass, GridTooCoarse, LqrSolution, LtiProblem,
                    NoStabilizingSolution, NotRealMode, NotStabilizable,
                    are_residual, classify_damping, default_grid,
                    default_horizon, default_step, eigenmode_initial_state,
                    kleinman_iteration, simulate_closed_loop, solve_are)
from .numerics import (DIVERGENCE_GUARD, Divergence, format_float,
                       numerical_rank, rank_cutoff, rank_tol_factor,
                       rk4_linear_propagator, simpson_weights)
from .trajectory import (JacobianTable, TimeGrid, Trajectory,
                         derivative_series, load_trajectory, save_trajectory,
                         tabulate_general, tabulate_lti_quadratic)
from .soft_ioc import (ResidualMatrices, RiccatiSolution, SoftRecovery,
                       assemble_residual, integrate_riccati,
                       recover_weights_soft, soft_residual_norm)
from .hard_ioc import (HardAssembly, HardRecovery, assemble_W, integrate_L,
                       recover_weights_hard)
from .solvability import (CaseVerdict, ComparisonReport, KernelSelectors,
                          ObservabilitySeries, hard_case_analysis,
                          kernel_selectors, observability_series,
                          predict_vs_empirical, soft_case_overdamped)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
