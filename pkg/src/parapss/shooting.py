"""Multiple shooting with the period as an extra unknown.

The unknown vector stacks the N window initial values with the period,
z = [U_0, ..., U_{N-1}, T]. The matching map enforces continuity at the
interior synchronization nodes and periodicity across the seam; its root
is found by a Newton iteration whose underdetermined linear systems are
solved in the minimum-norm sense, so no explicit phase condition is
needed.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NewtonDivergedError
from .linalg import SolveStats, solve_min_norm
from .propagators import coarse_propagate, fine_propagate, period_sensitivity
from .records import ConvergenceRecord, IterationRecord


@dataclass
class ShootingState:
    """Window initial values (N, d) plus the period in seconds."""

    initial_values: np.ndarray
    period: float

    def __post_init__(self):
        self.initial_values = np.asarray(self.initial_values, dtype=float)
        if self.initial_values.ndim != 2:
            raise ValueError("initial_values must be a 2-D (windows, dim) array")
        if not np.all(np.isfinite(self.initial_values)):
            raise ValueError("initial_values must be finite")
        if not self.period > 0.0:
            raise ValueError(f"period must be positive, got {self.period}")

    @property
    def n_windows(self):
        return self.initial_values.shape[0]

    @property
    def dim(self):
        return self.initial_values.shape[1]

    def as_vector(self):
        return np.concatenate([self.initial_values.ravel(), [self.period]])

    @classmethod
    def from_vector(cls, z, n_windows, dim):
        return cls(z[:-1].reshape(n_windows, dim), float(z[-1]))

    def copy(self):
        return ShootingState(self.initial_values.copy(), self.period)


@dataclass
class ShootingResidual:
    """Stacked matching defects, periodicity block first.

    blocks[0]   = F(last window) - U_0          (periodicity seam)
    blocks[r]   = F(window r)    - U_r          for r = 1..N-1

    fine_endpoints keeps the window endpoints so callers that need them
    (defect assembly, period sensitivities) do not repeat the sweep;
    window_units records the per-window fine solve cost of that sweep.
    """

    blocks: np.ndarray
    fine_endpoints: np.ndarray
    window_units: list = None

    @property
    def vector(self):
        return self.blocks.ravel()

    @property
    def max_block_norm(self):
        return float(np.max(np.linalg.norm(self.blocks, axis=1)))


def jump_norm(residual, state):
    """Relative matching-defect norm: ||defects||_2 / ||stacked states||_2."""
    return float(np.linalg.norm(residual.vector)
                 / np.linalg.norm(state.initial_values.ravel()))


def _window_map(workers):
    if workers and workers > 1:
        pool = ThreadPoolExecutor(max_workers=workers)
        return pool, pool.map
    return None, map


def fine_sweep(state, grid, system, cfg, stats=None, workers=1):
    """Fine-propagate every window in parallel.

    Returns (endpoints (N, d), per-window cost units). Results are
    aggregated by window index, so any worker count gives identical
    output.
    """
    N = grid.n_windows
    nodes = grid.nodes
    U = state.initial_values
    T = state.period

    def run(w):
        local = SolveStats(system.dim)
        end = fine_propagate(system, T, nodes[w], nodes[w + 1], U[w], cfg,
                             stats=local, window=w)
        return end, local

    pool, mapper = _window_map(workers)
    try:
        results = list(mapper(run, range(N)))
    finally:
        if pool is not None:
            pool.shutdown()
    endpoints = np.array([r[0] for r in results])
    per_window = [r[1].cost_units for r in results]
    if stats is not None:
        for _, local in results:
            stats.merge(local)
    return endpoints, per_window


def matching_residual(state, grid, system, cfg, stats=None, workers=1):
    """Evaluate the matching map at a shooting state.

    Window integrations are independent and may run concurrently; any
    propagator failure is re-raised with its window index attached.
    """
    if grid.n_windows != state.n_windows:
        raise ValueError("grid and state disagree on the window count")
    try:
        endpoints, per_window = fine_sweep(state, grid, system, cfg, stats, workers)
    except NewtonDivergedError as exc:
        raise NewtonDivergedError(
            f"fine propagation failed in window {exc.window}: {exc}",
            window=exc.window, step=exc.step)
    U = state.initial_values
    blocks = np.empty_like(U)
    blocks[0] = endpoints[-1] - U[0]
    blocks[1:] = endpoints[:-1] - U[1:]
    return ShootingResidual(blocks=blocks, fine_endpoints=endpoints,
                            window_units=per_window)


def matching_jacobian(state, grid, system, cfg, mode="fd-fine", stats=None,
                      workers=1, residual=None, fd_step=1e-6):
    """Bordered Jacobian of the matching map, shape (N d, N d + 1).

    Row block r carries the propagated window's state derivative at the
    column of its start value, -I at the column of the subtracted value,
    and the period derivative in the last column.

    mode "fd-fine": forward differences of the fine propagator for both
    the state blocks and the period column (the classical shooting path).
    mode "coarse-parareal": forward differences of the coarse propagator
    for the state blocks and the window quadrature rule for the period
    column (the cheap approximation used by the parareal iteration).
    """
    if mode not in ("fd-fine", "coarse-parareal"):
        raise ValueError(f"unknown jacobian mode {mode!r}")
    N, d = state.n_windows, state.dim
    nodes = grid.nodes
    U = state.initial_values
    T = state.period
    propagate = fine_propagate if mode == "fd-fine" else coarse_propagate
    if residual is None:
        residual = matching_residual(state, grid, system, cfg, stats, workers)

    if mode == "fd-fine":
        base = residual.fine_endpoints
    else:
        base = np.array([
            coarse_propagate(system, T, nodes[w], nodes[w + 1], U[w], cfg,
                             stats=stats, window=w)
            for w in range(N)
        ])

    def window_block(w):
        local = SolveStats(system.dim)
        cols = np.empty((d, d))
        for j in range(d):
            step = fd_step * (1.0 + abs(U[w, j]))
            up = U[w].copy()
            up[j] += step
            end = propagate(system, T, nodes[w], nodes[w + 1], up, cfg,
                            stats=local, window=w)
            cols[:, j] = (end - base[w]) / step
        if mode == "fd-fine":
            t_step = fd_step * (1.0 + abs(T)) * T
            end_t = fine_propagate(system, T + t_step, nodes[w], nodes[w + 1],
                                   U[w], cfg, stats=local, window=w)
            g = (end_t - residual.fine_endpoints[w]) / t_step
        else:
            g = period_sensitivity(system, nodes[w + 1] - nodes[w],
                                   residual.fine_endpoints[w], stats=local)
        return cols, g, local

    pool, mapper = _window_map(workers)
    try:
        results = list(mapper(window_block, range(N)))
    finally:
        if pool is not None:
            pool.shutdown()
    if stats is not None:
        for _, _, local in results:
            stats.merge(local)

    J = np.zeros((N * d, N * d + 1))
    eye = np.eye(d)
    for w in range(N):
        r = (w + 1) % N          # row block that window w's endpoint feeds
        rows = slice(r * d, (r + 1) * d)
        J[rows, w * d:(w + 1) * d] += results[w][0]
        J[rows, r * d:(r + 1) * d] -= eye
        J[rows, -1] = results[w][1]
    return J


def newton_solve(z0, grid, system, cfg, tol=1e-3, max_iter=20, stats=None,
                 workers=1, damping=True, jacobian_mode="fd-fine"):
    """Newton iteration on the matching map with minimum-norm steps.

    Each step solves the underdetermined bordered system for the shortest
    increment, which keeps the iterate's phase instead of drifting along
    the orbit family. Two safeguards, both logged on the record and both
    inactive on well-seeded runs: the step is halved (up to 8 times) while
    it would increase the residual, and a non-positive period update is
    replaced by half the current period.

    Returns (state, ConvergenceRecord); a run that exhausts max_iter
    returns the best iterate seen with record.converged False.
    """
    stats = stats if stats is not None else SolveStats(system.dim)
    state = z0.copy()
    record = ConvergenceRecord(mode="shooting")
    best = None

    mark = stats.snapshot()
    residual = matching_residual(state, grid, system, cfg, stats, workers)
    for k in range(max_iter + 1):
        rnorm = jump_norm(residual, state)
        fine_spent = stats.snapshot()[2] - mark[2]
        if best is None or rnorm < best[0]:
            best = (rnorm, state.copy())
        if rnorm <= tol:
            record.add(IterationRecord(k=k, s=0, period=state.period,
                                       jump_norm=rnorm, fine_units=fine_spent,
                                       fine_max=fine_spent,
                                       max_block_norm=residual.max_block_norm))
            record.converged = True
            record.stop_reason = "tolerance reached"
            record.outer_iterations = k
            return state, record
        if k == max_iter:
            record.add(IterationRecord(k=k, s=0, period=state.period,
                                       jump_norm=rnorm, fine_units=fine_spent,
                                       fine_max=fine_spent,
                                       max_block_norm=residual.max_block_norm))
            break

        mark = stats.snapshot()
        J = matching_jacobian(state, grid, system, cfg, mode=jacobian_mode,
                              stats=stats, workers=workers, residual=residual)
        jac_units = stats.snapshot()[2] - mark[2]
        dz = solve_min_norm(J, -residual.vector, stats)
        block_units = stats.units_for_solve(max(J.shape))

        mark = stats.snapshot()
        lam = 1.0
        halvings = 0
        while True:
            z_new = state.as_vector() + lam * dz
            T_new = z_new[-1]
            if T_new <= 0.0:
                T_new = state.period / 2.0
                record.note_safeguard(
                    f"k={k}: non-positive period update clamped to {T_new:.3e}")
            cand = ShootingState(z_new[:-1].reshape(state.initial_values.shape),
                                 float(T_new))
            cand_residual = matching_residual(cand, grid, system, cfg, stats,
                                              workers)
            cand_norm = jump_norm(cand_residual, cand)
            if cand_norm < rnorm or not damping or halvings >= 8:
                break
            lam *= 0.5
            halvings += 1
            record.note_safeguard(f"k={k}: damping halved to {lam}")
        line_units = stats.snapshot()[2] - mark[2]

        record.add(IterationRecord(
            k=k, s=0, period=state.period, jump_norm=rnorm,
            fine_units=fine_spent + jac_units + line_units,
            coarse_units=0, block_units=block_units,
            fine_max=fine_spent + jac_units + line_units,
            max_block_norm=residual.max_block_norm,
            period_rel_change=abs(cand.period - state.period) / state.period))
        state = cand
        residual = cand_residual
        mark = stats.snapshot()

    record.converged = False
    record.stop_reason = "max iterations exceeded"
    record.outer_iterations = max_iter
    _, best_state = best
    return best_state, record


def state_from_coarse_sweep(system, grid, u0, period_guess, cfg, stats=None):
    """Initial shooting state from one sequential coarse sweep.

    Starts at u0 and fills the remaining window values by chaining the
    coarse propagator. Cheap, but for strongly transient problems the
    result can sit near an equilibrium rather than the orbit; prefer a
    transient-sampled seed there.
    """
    nodes = grid.nodes
    values = [np.asarray(u0, dtype=float)]
    for w in range(grid.n_windows - 1):
        values.append(coarse_propagate(system, period_guess, nodes[w],
                                       nodes[w + 1], values[-1], cfg,
                                       stats=stats, window=w))
    return ShootingState(np.array(values), period_guess)
