"""Window integrators on the rescaled unit interval.

The periodic problem M u' = f(u) on (0, T) is rescaled to
M u' = T f(u) on (0, 1) so the unknown period T becomes an ordinary
parameter. Both propagators integrate one window (tau_a, tau_b] of the
unit interval with the implicit Euler scheme (theta = 1 by default; a
theta hook exists for experiments but only theta = 1 is supported):

    fine propagator    many small steps, the accuracy reference
    coarse propagator  few (usually one) big steps, the cheap sweep

plus the closed-form one-step coarse solution for an affine model and
the quadrature approximation of the period sensitivity d(endpoint)/dT.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NewtonDivergedError, NonFiniteError, SingularMatrixError
from .linalg import solve_square

_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class TimeGrid:
    """Nodes 0 = tau_0 < ... < tau_N = 1 splitting the unit interval."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if abs(nodes[0]) > 1e-14 or abs(nodes[-1] - 1.0) > 1e-14:
            raise ValueError("grid must span [0, 1]")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        if abs(np.sum(np.diff(nodes)) - 1.0) > 1e-14:
            raise ValueError("window lengths must sum to 1")

    @classmethod
    def uniform(cls, n_windows):
        return cls(np.linspace(0.0, 1.0, n_windows + 1))

    @property
    def n_windows(self):
        return self.nodes.size - 1

    @property
    def window_lengths(self):
        return np.diff(self.nodes)

    @property
    def equidistant(self):
        w = self.window_lengths
        return bool(np.all(np.abs(w - w[0]) <= 1e-14))


@dataclass
class PropagatorConfig:
    """Step counts and stage-Newton settings for both propagators.

    fine_steps_per_window and coarse_steps_per_window fix the uniform
    substep counts; newton_tol is an absolute tolerance on the max-norm
    of the stage residual (a floating-point floor proportional to the
    residual's own magnitude is always added, so tiny mass-matrix scales
    cannot make the test unsatisfiable), and theta selects the implicit
    scheme (theta = 1: backward Euler, the supported default).
    """

    fine_steps_per_window: int = 1000
    coarse_steps_per_window: int = 1
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    theta: float = 1.0

    def __post_init__(self):
        if self.coarse_steps_per_window < 1:
            raise ValueError("coarse_steps_per_window must be >= 1")
        if self.fine_steps_per_window < self.coarse_steps_per_window:
            raise ValueError("fine step count must be >= coarse step count")
        if self.newton_tol <= 0.0:
            raise ValueError("newton_tol must be positive")


def _stage_scale(mass, v, u, w_abs, f_norm):
    # magnitude of the residual's constituents; bounds the attainable accuracy
    mv = np.max(np.abs(mass @ (v - u)))
    floor = np.max(np.abs(mass)) * (1.0 + np.max(np.abs(v)))
    return mv + w_abs * f_norm + _EPS * floor


def _implicit_stage(system, u_prev, w, cfg, stats, window=None, step=None):
    """Solve the theta-stage M(v - u_prev) = w [theta f(v) + (1-theta) f(u_prev)].

    Newton with residual-norm backtracking; the best iterate seen is kept
    when a trial step does not reduce the residual. Every linear solve is
    counted on `stats`.
    """
    mass = system.mass
    theta = cfg.theta
    v = u_prev.copy()
    f_prev = system.rhs(u_prev) if theta != 1.0 else None

    def residual(vv, fvv):
        expl = (1.0 - theta) * f_prev if theta != 1.0 else 0.0
        return mass @ (vv - u_prev) - w * (theta * fvv + expl)

    fv = system.rhs(v)
    resid = residual(v, fv)
    rnorm = np.max(np.abs(resid))
    w_abs = abs(w)
    for _ in range(cfg.newton_max_iter):
        scale = _stage_scale(mass, v, u_prev, w_abs, np.max(np.abs(fv)))
        if rnorm <= max(cfg.newton_tol, 32.0 * _EPS * scale):
            return v
        jac = mass - (w * theta) * system.rhs_jacobian(v)
        try:
            dv = solve_square(jac, -resid, stats)
        except SingularMatrixError as exc:
            raise NewtonDivergedError(
                f"singular stage matrix ({exc})", window=window, step=step)
        best = None
        lam = 1.0
        for _ in range(12):
            v_try = v + lam * dv
            f_try = system.rhs(v_try)
            r_try = residual(v_try, f_try)
            rn_try = np.max(np.abs(r_try))
            if not np.isfinite(rn_try):
                rn_try = np.inf
            if best is None or rn_try < best[3]:
                best = (v_try, f_try, r_try, rn_try)
            if rn_try < rnorm:
                break
            lam *= 0.5
        v, fv, resid, rnorm = best
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(
                f"non-finite state in stage Newton (window {window}, step {step})")
    scale = _stage_scale(mass, v, u_prev, w_abs, np.max(np.abs(fv)))
    if rnorm <= max(1e3 * cfg.newton_tol, 1e4 * _EPS * scale):
        return v
    raise NewtonDivergedError(
        f"stage Newton exceeded {cfg.newton_max_iter} iterations "
        f"(|r|={rnorm:.2e})", window=window, step=step)


def _integrate(system, T, tau_a, tau_b, U, steps, cfg, stats, window=None,
               record=False):
    if not T > 0.0:
        raise ValueError(f"period must be positive, got {T}")
    if not tau_b > tau_a:
        raise ValueError("tau_b must exceed tau_a")
    U = np.asarray(U, dtype=float)
    if not np.all(np.isfinite(U)):
        raise NonFiniteError("non-finite initial window state")
    w = ((tau_b - tau_a) / steps) * T
    v = U.copy()
    path = np.empty((steps + 1, U.size)) if record else None
    if record:
        path[0] = v
    for j in range(steps):
        v = _implicit_stage(system, v, w, cfg, stats, window=window, step=j)
        if record:
            path[j + 1] = v
    return path if record else v


def fine_propagate(system, T, tau_a, tau_b, U, cfg, stats=None, window=None):
    """Endpoint of the fine implicit Euler integration of M u' = T f(u).

    Uses cfg.fine_steps_per_window uniform substeps on (tau_a, tau_b].
    """
    return _integrate(system, T, tau_a, tau_b, U,
                      cfg.fine_steps_per_window, cfg, stats, window=window)


def coarse_propagate(system, T, tau_a, tau_b, U, cfg, stats=None, window=None):
    """Endpoint of the coarse integration (cfg.coarse_steps_per_window steps)."""
    return _integrate(system, T, tau_a, tau_b, U,
                      cfg.coarse_steps_per_window, cfg, stats, window=window)


def integrate_path(system, T, tau_a, tau_b, U, steps, cfg, stats=None):
    """Full trajectory of the implicit Euler run, shape (steps+1, d)."""
    return _integrate(system, T, tau_a, tau_b, U, steps, cfg, stats, record=True)


def linear_coarse_step(surrogate, mass, T, dtau, U, stats=None):
    """Closed-form single implicit Euler step for the affine model.

    Solves [M/dtau - T A] v = M U / dtau + T c. Requires the equidistant
    window length dtau. A singular bracket signals a resonance of dtau*T
    with the surrogate spectrum and raises SingularMatrixError.
    """
    Q = mass / dtau - T * surrogate.A
    rhs = mass @ np.asarray(U, dtype=float) / dtau + T * surrogate.c
    try:
        return solve_square(Q, rhs, stats)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"singular coarse bracket (dtau*T resonance with surrogate): {exc}")


def period_sensitivity(system, dtau_n, U_end, stats=None):
    """Quadrature approximation of the endpoint derivative w.r.t. the period.

    One window of M u' = T f(u) contributes M^-1 * integral of f over the
    window; evaluating f at the fine endpoint (right rectangle rule) gives
    g_n = M^-1 dtau_n f(U_end) at the price of one mass-matrix solve.
    """
    return solve_square(system.mass, dtau_n * system.rhs(np.asarray(U_end, float)),
                        stats)
