"""Periodic Parareal with a periodic coarse problem, period known or unknown.

The Newton system of multiple shooting is approximated Parareal-style:
the window state derivatives are replaced by coarse-propagator finite
differences, which couples the new iterate's window values through the
coarse map only. A further additive split replaces the nonlinear coarse
propagator on the left-hand side by the closed-form implicit Euler step
of an affine surrogate model, giving a linear block-cyclic system per
inner fixed-point sweep:

    C U_{n-1} - Q U_n (+ Q g_n T) = Q h_n - T c,    C = M/dtau,  Q = C - T A

with the periodicity row wrapping window N back to U_0. With the period
unknown the system gains the period column and is underdetermined by
one; it is solved for the minimum-norm increment from the current
iterate, which preserves the iterate's phase along the orbit family
(solving for the minimum-norm point instead provably drifts the iterate
toward small states and small periods until it locks onto a spurious
equilibrium root).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import RankDeficientError, SingularMatrixError
from .linalg import (MinNormFactorization, SolveStats,
                     solve_min_norm_regularized)
from .propagators import coarse_propagate, linear_coarse_step, period_sensitivity
from .records import ConvergenceRecord, IterationRecord
from .shooting import ShootingState, jump_norm, matching_residual


@dataclass
class PararealConfig:
    """Outer/inner iteration controls.

    outer_tol is the relative jump-norm tolerance (the same convergence
    metric the shooting solver uses); inner_tol is a relative stagnation
    tolerance on successive inner window-value sweeps. period_known, when
    set, freezes the period at that value and drops the period column
    (the known-period baseline method). regularization is the Tikhonov
    strength of the rank-deficiency fallback solve.
    """

    outer_tol: float = 1e-3
    outer_max_iter: int = 40
    inner_tol: float = 1e-6
    inner_max_iter: int = 50
    period_known: Optional[float] = None
    regularization: float = 1e-10

    def __post_init__(self):
        if self.outer_tol <= 0.0 or self.inner_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.inner_max_iter < 1:
            raise ValueError("inner_max_iter must be >= 1")
        if self.period_known is not None and not self.period_known > 0.0:
            raise ValueError("period_known must be positive when set")


@dataclass
class BlockSystem:
    """Assembled block-cyclic linear system of one inner sweep.

    matrix has shape (N d, N d + 1) with the period column, or (N d, N d)
    when the period is frozen. Block sparsity: -Q on the diagonal, C on
    the cyclic sub-diagonal (row 0 wraps to the last column block), and
    the dense period column Q g_n.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    n_windows: int
    dim: int
    period_known: bool


def defect_rhs(state, fine_endpoints, grid, system, prop_cfg,
               include_period_term=True, stats=None, workers=1):
    """Window defect vectors b_n driving the outer correction.

    b_n = g_n T + G(window n) - F(window n), all evaluated at the current
    outer iterate (the period term is omitted for the known-period
    variant, where the period column it pairs with is absent). Returns
    (b, g) with g None when the period term is off. Coarse evaluations of
    the separate windows may run concurrently.
    """
    N = grid.n_windows
    nodes = grid.nodes
    U = state.initial_values
    T = state.period

    def run(w):
        local = SolveStats(system.dim)
        gw = (period_sensitivity(system, nodes[w + 1] - nodes[w],
                                 fine_endpoints[w], stats=local)
              if include_period_term else None)
        Gw = coarse_propagate(system, T, nodes[w], nodes[w + 1], U[w],
                              prop_cfg, stats=local, window=w)
        return gw, Gw, local

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(N)))
    else:
        results = [run(w) for w in range(N)]
    if stats is not None:
        for _, _, local in results:
            stats.merge(local)

    b = np.empty_like(U)
    g = np.empty_like(U) if include_period_term else None
    for w, (gw, Gw, _) in enumerate(results):
        b[w] = Gw - fine_endpoints[w]
        if include_period_term:
            g[w] = gw
            b[w] += gw * T
    return b, g


def fixed_point_rhs(b, U_inner, T, grid, system, surrogate, prop_cfg,
                    stats=None, workers=1):
    """Inner-sweep right-hand side h_n.

    h_n = b_n + (affine coarse step - nonlinear coarse step), both applied
    to the current inner window values. The affine/nonlinear difference is
    what the fixed-point iteration relaxes away.
    """
    N = grid.n_windows
    nodes = grid.nodes

    def run(w):
        local = SolveStats(system.dim)
        lin = linear_coarse_step(surrogate, system.mass, T,
                                 nodes[w + 1] - nodes[w], U_inner[w], stats=local)
        non = coarse_propagate(system, T, nodes[w], nodes[w + 1], U_inner[w],
                               prop_cfg, stats=local, window=w)
        return lin, non, local

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(N)))
    else:
        results = [run(w) for w in range(N)]
    if stats is not None:
        for _, _, local in results:
            stats.merge(local)
    h = np.empty_like(U_inner)
    for w, (lin, non, _) in enumerate(results):
        h[w] = b[w] + lin - non
    return h


def _window_for_row(r, n_windows):
    # row block 0 is the periodicity seam fed by the last window
    return n_windows - 1 if r == 0 else r - 1


def _assemble_rhs(grid, system, surrogate, T, h):
    N = grid.n_windows
    d = system.dim
    dtau = grid.window_lengths[0]
    Q = system.mass / dtau - T * surrogate.A
    rhs = np.empty(N * d)
    for r in range(N):
        w = _window_for_row(r, N)
        rhs[r * d:(r + 1) * d] = Q @ h[w] - T * surrogate.c
    return rhs


def build_block_system(grid, system, surrogate, T, h, g=None):
    """Assemble the block-cyclic matrix and right-hand side.

    Requires an equidistant grid (the affine coarse step is only explicit
    then). Passing g enables the period column; h are the inner-sweep
    right-hand sides.
    """
    if not grid.equidistant:
        raise ValueError("the block system requires an equidistant grid")
    N = grid.n_windows
    d = system.dim
    dtau = grid.window_lengths[0]
    C = system.mass / dtau
    Q = C - T * surrogate.A
    period_known = g is None

    ncols = N * d if period_known else N * d + 1
    matrix = np.zeros((N * d, ncols))
    for r in range(N):
        w = _window_for_row(r, N)
        rows = slice(r * d, (r + 1) * d)
        prev = N - 1 if r == 0 else r - 1
        matrix[rows, prev * d:(prev + 1) * d] = C
        matrix[rows, r * d:(r + 1) * d] -= Q
        if not period_known:
            matrix[rows, -1] = Q @ g[w]
    rhs = _assemble_rhs(grid, system, surrogate, T, h)
    return BlockSystem(matrix=matrix, rhs=rhs, n_windows=N, dim=d,
                       period_known=period_known)


class _BlockFactorization:
    """Factor the block matrix once per outer iteration, back-solve inside.

    The inner fixed point only changes the right-hand side, so the LU (or
    the thin QR of the transpose, for the bordered case) is retained and
    re-applied; the first application is charged as a full solve, later
    ones as back substitutions.
    """

    def __init__(self, bs, regularization):
        self.bs = bs
        self.m = max(bs.matrix.shape)
        self.regularization = regularization
        self.fallback = False
        if bs.period_known:
            self._lu = None
            try:
                lu, piv = sla.lu_factor(bs.matrix, check_finite=False)
                anorm = np.max(np.sum(np.abs(bs.matrix), axis=1))
                if np.min(np.abs(np.diag(lu))) <= 1e-14 * anorm:
                    raise SingularMatrixError("near-singular cyclic block matrix")
                self._lu = (lu, piv)
            except SingularMatrixError:
                self.fallback = True
        else:
            self._qr = MinNormFactorization(bs.matrix)
            if not self._qr.rank_ok:
                self.fallback = True

    def solve(self, rhs, stats, anchor=None, first=False):
        """Return a solution of matrix @ x = rhs.

        For the bordered (underdetermined) case the solution with the
        smallest increment from `anchor` is returned; with no anchor the
        minimum-norm point. Rank-deficient or singular systems fall back
        to a Tikhonov-regularized normal-equation solve around the same
        anchor.
        """
        bs = self.bs
        if stats is not None:
            if first or self.fallback:
                stats.add_solve(self.m)
            else:
                stats.add_back_solve(self.m)
        if self.fallback:
            x0 = np.zeros(bs.matrix.shape[1]) if anchor is None else anchor
            delta = solve_min_norm_regularized(bs.matrix, rhs - bs.matrix @ x0,
                                               reg=self.regularization)
            return x0 + delta
        if bs.period_known:
            return sla.lu_solve(self._lu, rhs, check_finite=False)
        if anchor is None:
            return self._qr.solve(rhs)
        return anchor + self._qr.solve(rhs - bs.matrix @ anchor)


def solve_block_system(bs, stats=None, anchor=None, regularization=1e-10):
    """One-shot solve of an assembled block system.

    Underdetermined systems give the minimum-norm solution (or the
    minimum increment from `anchor` when provided); square systems are
    solved directly. Returns (window values, period). For the
    known-period pattern the period slot of the result is None.

    Raises RankDeficientError / SingularMatrixError only if even the
    regularized fallback cannot produce a finite solution.
    """
    fact = _BlockFactorization(bs, regularization)
    x = fact.solve(bs.rhs, stats, anchor=anchor, first=True)
    if not np.all(np.isfinite(x)):
        if bs.period_known:
            raise SingularMatrixError("cyclic block solve produced non-finite values")
        raise RankDeficientError("bordered block solve produced non-finite values")
    if bs.period_known:
        return x.reshape(bs.n_windows, bs.dim), None
    return x[:-1].reshape(bs.n_windows, bs.dim), float(x[-1])


def _iterate(z0, grid, system, surrogate, cfg, prop_cfg, stats, workers,
             period_known):
    mode = "pppc" if period_known else "pppc-up"
    record = ConvergenceRecord(mode=mode)
    stats = stats if stats is not None else SolveStats(system.dim)
    if not grid.equidistant:
        raise ValueError("the parareal iteration requires an equidistant grid")

    U = z0.initial_values.copy()
    T = cfg.period_known if period_known else z0.period
    best = None

    for k in range(cfg.outer_max_iter + 1):
        state = ShootingState(U.copy(), T)
        mark = stats.snapshot()[2]
        residual = matching_residual(state, grid, system, prop_cfg, stats, workers)
        fine_units = stats.snapshot()[2] - mark
        fine_max = max(residual.window_units)
        jump = jump_norm(residual, state)
        record.add(IterationRecord(k=k, s=0, period=T, jump_norm=jump,
                                   fine_units=fine_units, fine_max=fine_max,
                                   max_block_norm=residual.max_block_norm))
        if best is None or jump < best[0]:
            best = (jump, state)
        if jump <= cfg.outer_tol:
            record.converged = True
            record.stop_reason = "tolerance reached"
            record.outer_iterations = k
            return state, record
        if k == cfg.outer_max_iter:
            break

        mark = stats.snapshot()[2]
        b, g = defect_rhs(state, residual.fine_endpoints, grid, system,
                          prop_cfg, include_period_term=not period_known,
                          stats=stats, workers=workers)
        defect_units = stats.snapshot()[2] - mark

        # the block matrix is frozen over the inner loop: factor once
        bs_probe = build_block_system(grid, system, surrogate, T,
                                      h=np.zeros_like(U), g=g)
        fact = _BlockFactorization(bs_probe, cfg.regularization)
        if fact.fallback:
            record.note_safeguard(
                f"k={k}: rank-deficient block system, Tikhonov fallback "
                f"(reg={cfg.regularization:g})")

        U_inner = U.copy()
        T_next = T
        first_row = True
        for s in range(1, cfg.inner_max_iter + 1):
            mark = stats.snapshot()[2]
            h = fixed_point_rhs(b, U_inner, T, grid, system, surrogate,
                                prop_cfg, stats=stats, workers=workers)
            rhs = _assemble_rhs(grid, system, surrogate, T, h)
            coarse_units = stats.snapshot()[2] - mark

            mark = stats.snapshot()[2]
            if period_known:
                x = fact.solve(rhs, stats, anchor=U_inner.ravel(), first=first_row)
                U_next = x.reshape(U.shape)
                T_cand = T
            else:
                anchor = np.concatenate([U_inner.ravel(), [T_next]])
                x = fact.solve(rhs, stats, anchor=anchor, first=first_row)
                U_next = x[:-1].reshape(U.shape)
                T_cand = float(x[-1])
                if T_cand <= 0.0:
                    T_cand = T_next / 2.0
                    record.note_safeguard(
                        f"k={k} s={s}: non-positive period candidate clamped "
                        f"to {T_cand:.3e}")
            block_units = stats.snapshot()[2] - mark
            first_row = False

            stall = (np.linalg.norm(U_next - U_inner)
                     <= cfg.inner_tol * max(np.linalg.norm(U_inner), 1e-300))
            row = IterationRecord(
                k=k, s=s, period=T_cand, jump_norm=jump,
                coarse_units=coarse_units + (defect_units if s == 1 else 0),
                block_units=block_units,
                period_rel_change=abs(T_cand - T_next) / max(T_next, 1e-300))
            record.add(row)
            U_inner = U_next
            T_next = T_cand
            if stall:
                break

        U = U_inner
        T = T_next

    record.converged = False
    record.stop_reason = "max iterations exceeded"
    record.outer_iterations = cfg.outer_max_iter
    return best[1], record


def solve_unknown_period(z0, grid, system, surrogate, cfg, prop_cfg,
                         stats=None, workers=1):
    """Periodic parareal iteration with the period as an extra unknown.

    Per outer iteration: one parallel fine sweep provides the matching
    defects, the period sensitivities and the stopping test; the inner
    fixed point then repeatedly solves the bordered block-cyclic system
    (factored once, minimum-increment selection) until the window values
    stagnate, and the last period candidate becomes the next outer
    period. Returns (state, ConvergenceRecord); exhausting the outer
    budget returns the best iterate with record.converged False.
    """
    cfg_use = cfg if cfg.period_known is None else PararealConfig(
        outer_tol=cfg.outer_tol, outer_max_iter=cfg.outer_max_iter,
        inner_tol=cfg.inner_tol, inner_max_iter=cfg.inner_max_iter,
        period_known=None, regularization=cfg.regularization)
    return _iterate(z0, grid, system, surrogate, cfg_use, prop_cfg, stats,
                    workers, period_known=False)


def solve_known_period(z0, period, grid, system, surrogate, cfg, prop_cfg,
                       stats=None, workers=1):
    """Known-period baseline: frozen period, no period column.

    Identical outer/inner structure with the square cyclic system solved
    directly (LU kept over the inner loop).
    """
    cfg_use = PararealConfig(
        outer_tol=cfg.outer_tol, outer_max_iter=cfg.outer_max_iter,
        inner_tol=cfg.inner_tol, inner_max_iter=cfg.inner_max_iter,
        period_known=float(period), regularization=cfg.regularization)
    return _iterate(z0, grid, system, surrogate, cfg_use, prop_cfg, stats,
                    workers, period_known=True)
