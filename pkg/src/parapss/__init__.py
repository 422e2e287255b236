"""Parallel-in-time computation of time-periodic steady states.

Solvers for the autonomous periodic problem M u'(t) = f(u(t)),
u(0) = u(T), where the period T is itself unknown: classical multiple
shooting with a bordered Newton iteration, and a two-level periodic
parareal iteration whose coarse level is an affine surrogate model with
a closed-form implicit Euler step. Verified on a Colpitts oscillator
circuit and a Van der Pol oscillator.
"""

from .errors import (ConfigError, NewtonDivergedError,
                     NoOscillationDetectedError, NonFiniteError,
                     RankDeficientError, SingularMatrixError, SolverError)
from .linalg import SolveStats, fd_jacobian, solve_min_norm, solve_square
from .systems import (ColpittsParams, LinearSurrogate, OdeSystem,
                      colpitts_surrogate, colpitts_system, vanderpol_surrogate,
                      vanderpol_system)
from .propagators import (PropagatorConfig, TimeGrid, coarse_propagate,
                          fine_propagate, integrate_path, linear_coarse_step,
                          period_sensitivity)
from .records import ConvergenceRecord, IterationRecord
from .shooting import (ShootingState, ShootingResidual, jump_norm,
                       matching_jacobian, matching_residual, newton_solve,
                       state_from_coarse_sweep)
from .parareal import (BlockSystem, PararealConfig, build_block_system,
                       defect_rhs, fixed_point_rhs, solve_block_system,
                       solve_known_period, solve_unknown_period)
from .bench import (PeriodEstimate, run_experiment, run_sequential, speedup,
                    state_from_transient)
from .config import RunConfig, default_config, read_config

__version__ = "0.1.0"
