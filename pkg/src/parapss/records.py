"""Per-iteration convergence bookkeeping shared by all solvers."""

from dataclasses import dataclass, field


@dataclass
class IterationRecord:
    """One (outer, inner) step of an iterative solve.

    fine/coarse/block units follow the package cost convention; fine_max
    additionally keeps the largest single-window fine cost so that the
    perfectly-parallel effective cost can be reconstructed.
    """

    k: int
    s: int
    period: float
    jump_norm: float
    fine_units: int = 0
    coarse_units: int = 0
    block_units: int = 0
    fine_max: int = 0
    max_block_norm: float = 0.0
    period_rel_change: float = 0.0


@dataclass
class ConvergenceRecord:
    """History of an iterative solve plus its accounting totals."""

    mode: str
    rows: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    outer_iterations: int = 0
    seed_units: int = 0
    safeguards: list = field(default_factory=list)

    def add(self, row):
        self.rows.append(row)

    def note_safeguard(self, message):
        self.safeguards.append(message)

    @property
    def total_units(self):
        return sum(r.fine_units + r.coarse_units + r.block_units for r in self.rows)

    @property
    def effective_units(self):
        """Cost under perfect window parallelism of the fine sweeps."""
        return sum(r.fine_max + r.coarse_units + r.block_units for r in self.rows)

    @property
    def period_history(self):
        return [r.period for r in self.rows]

    @property
    def jump_history(self):
        return [r.jump_norm for r in self.rows]
