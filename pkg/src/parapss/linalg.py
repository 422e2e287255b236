"""Dense linear algebra kernels and solve-count accounting.

Everything here operates on plain numpy arrays (row-major 2-D arrays play
the role of dense matrices). The kernels are deliberately small-system
oriented: the solver stack never sees anything larger than a few tens of
unknowns, so dense LU/QR is the right tool.

Cost accounting convention
--------------------------
One cost unit is one d-by-d dense solve (factorization plus back
substitution), where d is the state dimension of the problem being run.
A larger m-by-m solve costs ceil((m/d)**3) units, the flop-faithful cube
rule. Re-using a retained factorization for one additional right-hand
side costs ceil((m/d)**2) units. All counters are synchronized so that
window-parallel workers can share one accumulator.
"""

import math
import threading
import warnings

import numpy as np
import scipy.linalg as sla

from .errors import NonFiniteError, RankDeficientError, SingularMatrixError

#: relative pivot tolerance: a pivot below this times the inf-norm of the
#: matrix is treated as an exact zero
PIVOT_RTOL = 1e-14

#: relative tolerance on triangular diagonals for row-rank detection
RANK_RTOL = 1e-12


class SolveStats:
    """Thread-safe counters for factorizations, back solves and cost units.

    Parameters
    ----------
    base_dim : int
        The d of the owning problem; defines what "one cost unit" means.
    """

    def __init__(self, base_dim):
        if base_dim < 1:
            raise ValueError("base_dim must be a positive integer")
        self.base_dim = int(base_dim)
        self.factorizations = 0
        self.back_solves = 0
        self.cost_units = 0
        self._lock = threading.Lock()

    def units_for_solve(self, m):
        """Cost units of a full m-by-m solve under the cube rule."""
        if m <= self.base_dim:
            return 1
        return math.ceil((m / self.base_dim) ** 3)

    def units_for_back_solve(self, m):
        """Cost units of one extra back substitution on a kept factorization."""
        if m <= self.base_dim:
            return 1
        return math.ceil((m / self.base_dim) ** 2)

    def add_solve(self, m=None):
        m = self.base_dim if m is None else m
        u = self.units_for_solve(m)
        with self._lock:
            self.factorizations += 1
            self.back_solves += 1
            self.cost_units += u
        return u

    def add_back_solve(self, m=None):
        m = self.base_dim if m is None else m
        u = self.units_for_back_solve(m)
        with self._lock:
            self.back_solves += 1
            self.cost_units += u
        return u

    def merge(self, other):
        """Fold another accumulator into this one."""
        with self._lock:
            self.factorizations += other.factorizations
            self.back_solves += other.back_solves
            self.cost_units += other.cost_units

    def snapshot(self):
        with self._lock:
            return (self.factorizations, self.back_solves, self.cost_units)

    def __repr__(self):
        return (f"SolveStats(d={self.base_dim}, fact={self.factorizations}, "
                f"back={self.back_solves}, units={self.cost_units})")


def _check_finite_matrix(A, what="matrix"):
    if not np.all(np.isfinite(A)):
        raise NonFiniteError(f"{what} contains non-finite entries")


def solve_square(A, b, stats=None):
    """Solve a dense square system by partial-pivot LU.

    Raises SingularMatrixError when a pivot falls below
    ``PIVOT_RTOL * norm(A, inf)``. Counts one solve on `stats`.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix must be square, got {A.shape}")
    _check_finite_matrix(A)
    with warnings.catch_warnings():
        # exact singularity is detected via the pivot check below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    anorm = np.max(np.sum(np.abs(A), axis=1))
    pivmin = np.min(np.abs(np.diag(lu)))
    if pivmin <= PIVOT_RTOL * anorm:
        raise SingularMatrixError(
            f"pivot {pivmin:.3e} under tolerance {PIVOT_RTOL * anorm:.3e}")
    x = sla.lu_solve((lu, piv), b, check_finite=False)
    if stats is not None:
        stats.add_solve(n)
    return x


class MinNormFactorization:
    """Retained QR factorization of A^T for repeated min-norm solves.

    The minimum-norm solution of an underdetermined full-row-rank system
    A x = b is computed through the thin QR of A^T: with A^T = Q R one has
    x = Q R^-T b, which lies in the row space of A by construction. Rows
    are equilibrated to unit inf-norm first; that leaves both the solution
    set and its minimum-norm element unchanged but keeps the triangular
    factor well scaled when row magnitudes span many decades.
    """

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        _check_finite_matrix(A)
        m, n = A.shape
        if m >= n:
            raise ValueError(f"system must be underdetermined, got shape {A.shape}")
        self.shape = (m, n)
        self.row_scale = np.max(np.abs(A), axis=1)
        self.row_scale[self.row_scale == 0.0] = 1.0
        self._A_scaled = A / self.row_scale[:, None]
        self.Q, self.R = sla.qr(self._A_scaled.T, mode="economic", check_finite=False)
        diag = np.abs(np.diag(self.R))
        self.rank_ok = bool(np.min(diag) > RANK_RTOL * np.max(diag))

    def solve(self, b):
        if not self.rank_ok:
            raise RankDeficientError(
                f"numerical row rank below {self.shape[0]} in min-norm solve")
        y = sla.solve_triangular(self.R, b / self.row_scale, trans="T",
                                 check_finite=False)
        return self.Q @ y


def solve_min_norm(A, b, stats=None):
    """Minimum-Euclidean-norm solution of an underdetermined system A x = b.

    Among all x with A x = b this returns the shortest one, equivalently
    the unique solution lying in the row space of A. Requires full row
    rank; raises RankDeficientError otherwise. Counts one solve of the
    larger dimension on `stats`.
    """
    fact = MinNormFactorization(A)
    x = fact.solve(np.asarray(b, dtype=float))
    if stats is not None:
        stats.add_solve(max(A.shape))
    return x


def solve_min_norm_regularized(A, b, reg=1e-10, stats=None):
    """Tikhonov-regularized fallback for rank-deficient min-norm solves.

    Solves (A_s A_s^T + reg*I) y = b_s on row-equilibrated data and maps
    back with x = A_s^T y. With equilibrated rows the Gram matrix has
    unit-scale diagonal, so an absolute `reg` is meaningful. For a
    consistent rank-deficient system this converges to the pseudoinverse
    solution as reg -> 0.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_finite_matrix(A)
    scale = np.max(np.abs(A), axis=1)
    scale[scale == 0.0] = 1.0
    As = A / scale[:, None]
    bs = b / scale
    G = As @ As.T + reg * np.eye(A.shape[0])
    y = sla.solve(G, bs, assume_a="pos", check_finite=False)
    if stats is not None:
        stats.add_solve(max(A.shape))
    return As.T @ y


def fd_jacobian(func, u, rel_step=1e-6):
    """Central finite-difference Jacobian of a vector function.

    The step for component i is ``rel_step * (1 + |u_i|)``. Raises
    NonFiniteError if any evaluation returns NaN or Inf.
    """
    u = np.asarray(u, dtype=float)
    f0 = np.asarray(func(u), dtype=float)
    J = np.empty((f0.size, u.size))
    for i in range(u.size):
        step = rel_step * (1.0 + abs(u[i]))
        up = u.copy()
        um = u.copy()
        up[i] += step
        um[i] -= step
        fp = np.asarray(func(up), dtype=float)
        fm = np.asarray(func(um), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteError(f"non-finite function value near component {i}")
        J[:, i] = (fp - fm) / (2.0 * step)
    return J
