"""ODE system definitions: M u' = f(u) with the problem instances.

Ships the Colpitts oscillator circuit (a stiff 4-state implicit ODE with
an exponential bipolar-transistor characteristic), its global linear
surrogate model, and a Van der Pol oscillator used as an easy autonomous
test problem with an a-priori unknown limit-cycle period.
"""

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import SingularMatrixError
from .linalg import fd_jacobian

#: cap on the transistor exponent argument; evaluations beyond it are
#: saturated and flagged in the system diagnostics
EXP_CLAMP = 200.0


class EvalDiagnostics:
    """Counts clamped nonlinearity evaluations (thread-safe, diagnostic only)."""

    def __init__(self):
        self.clamped_evals = 0
        self._lock = threading.Lock()

    def flag_clamp(self, n=1):
        with self._lock:
            self.clamped_evals += n


@dataclass
class OdeSystem:
    """An autonomous implicit ODE system M u' = f(u).

    Attributes
    ----------
    dim : int
        State dimension d.
    mass : ndarray
        Non-singular d-by-d mass matrix M.
    rhs : callable
        u -> f(u), both d-vectors.
    rhs_jacobian : callable
        u -> df/du as a d-by-d array. If omitted, a central
        finite-difference fallback is installed.
    name : str
        Identifier used in logs and output files.
    diagnostics : EvalDiagnostics
        Mutable evaluation counters (e.g. clamp events).

    Evaluation is pure and reentrant: rhs and rhs_jacobian may be called
    concurrently from several workers.
    """

    dim: int
    mass: np.ndarray
    rhs: Callable[[np.ndarray], np.ndarray]
    rhs_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "ode"
    diagnostics: EvalDiagnostics = field(default_factory=EvalDiagnostics)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (self.dim, self.dim):
            raise ValueError(f"mass matrix must be {self.dim}x{self.dim}")
        # solvability probe: the mass matrix must factor with healthy pivots
        try:
            from .linalg import solve_square
            solve_square(self.mass, np.zeros(self.dim))
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"singular mass matrix for '{self.name}': {exc}")
        if self.rhs_jacobian is None:
            rhs = self.rhs
            self.rhs_jacobian = lambda u: fd_jacobian(rhs, u)


@dataclass
class LinearSurrogate:
    """Affine model f(u) ~ A u + c used by the closed-form coarse step."""

    A: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        d = self.c.size
        if self.A.shape != (d, d):
            raise ValueError(f"surrogate shapes disagree: A {self.A.shape}, c {self.c.shape}")

    @property
    def dim(self):
        return self.c.size

    def rhs(self, u):
        return self.A @ u + self.c


@dataclass
class ColpittsParams:
    """Circuit constants of the Colpitts oscillator model.

    Units: farad, ohm, henry, volt, ampere. Defaults are the reference
    values of the four-node-voltage formulation; `u_t` is the (enlarged)
    thermal voltage of the transistor law h(x) = exp(x/u_t) - 1 and
    `u_t_bar` the steeper slope voltage used by the linear surrogate.
    """

    c1: float = 50e-12
    c2: float = 1e-9
    c3: float = 50e-9
    c4: float = 100e-9
    r1: float = 12e3
    r2: float = 3.0
    r3: float = 8.2e3
    r4: float = 1.5e3
    inductance: float = 10e-3
    u_op: float = 10.0
    y_e: float = 10e-6
    x_e: float = 1.01e-3
    i_s: float = 1e-3
    y_c: float = 20e-6
    x_c: float = 1.02e-3
    u_t: float = 2.585
    u_t_bar: float = 0.2585

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c4", "r1", "r2", "r3", "r4",
                     "inductance", "u_t", "u_t_bar"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"Colpitts parameter {name} must be positive")


def colpitts_system(params=None):
    """Build the d=4 Colpitts oscillator as an OdeSystem.

    States are the four node voltages. The capacitance coupling sits in
    the mass matrix; the right-hand side carries the resistive paths, the
    supply and the exponential transistor currents. The exponent argument
    is clamped at EXP_CLAMP and clamp events are flagged on
    ``system.diagnostics`` because start-up transients can visit very
    large voltage differences.
    """
    p = params or ColpittsParams()
    mass = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, p.c1 + p.c3, -p.c3, -p.c1],
        [0.0, -p.c3, p.c2 + p.c3 + p.c4, -p.c2],
        [0.0, -p.c1, -p.c2, p.c1 + p.c2],
    ])
    diagnostics = EvalDiagnostics()
    u_t = p.u_t

    def h_pair(x42, x43):
        a42 = x42 / u_t
        a43 = x43 / u_t
        n_clamped = (a42 > EXP_CLAMP) + (a43 > EXP_CLAMP)
        if n_clamped:
            diagnostics.flag_clamp(n_clamped)
            a42 = min(a42, EXP_CLAMP)
            a43 = min(a43, EXP_CLAMP)
        return np.exp(a42) - 1.0, np.exp(a43) - 1.0

    def rhs(u):
        u1, u2, u3, u4 = u
        h42, h43 = h_pair(u4 - u2, u4 - u3)
        return np.array([
            (u2 - u1) * p.r2 / p.inductance,
            (p.u_op - u1) / p.r2 + p.x_c * h42 - p.i_s * h43,
            -u3 / p.r4 + p.x_e * h43 - p.i_s * h42,
            -u4 / p.r3 + (p.u_op - u4) / p.r1 - p.y_e * h43 - p.y_c * h42,
        ])

    def slope_pair(x42, x43):
        # derivative of the clamped law: zero beyond the saturation knee
        a42 = x42 / u_t
        a43 = x43 / u_t
        s42 = np.exp(a42) / u_t if a42 <= EXP_CLAMP else 0.0
        s43 = np.exp(a43) / u_t if a43 <= EXP_CLAMP else 0.0
        return s42, s43

    def rhs_jacobian(u):
        u1, u2, u3, u4 = u
        a, b = slope_pair(u4 - u2, u4 - u3)
        return np.array([
            [-p.r2 / p.inductance, p.r2 / p.inductance, 0.0, 0.0],
            [-1.0 / p.r2, -p.x_c * a, p.i_s * b, p.x_c * a - p.i_s * b],
            [0.0, p.i_s * a, -1.0 / p.r4 - p.x_e * b, p.x_e * b - p.i_s * a],
            [0.0, p.y_c * a, p.y_e * b,
             -1.0 / p.r3 - 1.0 / p.r1 - p.y_e * b - p.y_c * a],
        ])

    return OdeSystem(dim=4, mass=mass, rhs=rhs, rhs_jacobian=rhs_jacobian,
                     name="colpitts", diagnostics=diagnostics)


def colpitts_surrogate(params=None):
    """Global affine surrogate of the Colpitts right-hand side.

    Equals the analytic Jacobian of the circuit with the transistor law
    replaced by the steeper linear law x/u_t_bar, plus the constant
    supply-current vector.
    """
    p = params or ColpittsParams()
    s = 1.0 / p.u_t_bar
    A = np.array([
        [-p.r2 / p.inductance, p.r2 / p.inductance, 0.0, 0.0],
        [-1.0 / p.r2, -p.x_c * s, p.i_s * s, (p.x_c - p.i_s) * s],
        [0.0, p.i_s * s, -1.0 / p.r4 - p.x_e * s, (p.x_e - p.i_s) * s],
        [0.0, p.y_c * s, p.y_e * s,
         -1.0 / p.r3 - 1.0 / p.r1 - p.y_e * s - p.y_c * s],
    ])
    c = np.array([0.0, p.u_op / p.r2, 0.0, p.u_op / p.r1])
    return LinearSurrogate(A=A, c=c)


def vanderpol_system(mu=1.0):
    """Van der Pol oscillator u1' = u2, u2' = mu (1 - u1^2) u2 - u1."""
    if mu <= 0.0:
        raise ValueError("mu must be positive")

    def rhs(u):
        return np.array([u[1], mu * (1.0 - u[0] ** 2) * u[1] - u[0]])

    def rhs_jacobian(u):
        return np.array([
            [0.0, 1.0],
            [-2.0 * mu * u[0] * u[1] - 1.0, mu * (1.0 - u[0] ** 2)],
        ])

    return OdeSystem(dim=2, mass=np.eye(2), rhs=rhs, rhs_jacobian=rhs_jacobian,
                     name="vanderpol")


def vanderpol_surrogate(mu=1.0):
    """Linear surrogate for Van der Pol: the right-hand-side Jacobian at the origin."""
    return LinearSurrogate(A=np.array([[0.0, 1.0], [-1.0, mu]]), c=np.zeros(2))
