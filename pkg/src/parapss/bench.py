"""Experiment orchestration: sequential reference, solver runs, CSV output.

This module owns the brute-force period oracle (long time stepping plus
upward mean-level crossing detection), transient seeding of the shooting
state, the steady-state solve-count baseline, and the speedup report of
the iterative solvers against that baseline.

Cost reporting
--------------
The effective-parallel cost of an iterative run charges fine sweeps at
the maximum over windows (perfect window parallelism), everything else
(coarse sweeps, period sensitivities, block solves) at full sequential
price. The sequential baseline is the cost of plain time stepping until
the orbit first repeats within the outer tolerance. Speedup is the plain
ratio of those two unit counts; the seeding transient of the iterative
run is reported separately so the reader can judge the end-to-end
economics as well.
"""

import csv
import hashlib
import os
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NoOscillationDetectedError
from .linalg import SolveStats
from .parareal import PararealConfig, solve_known_period, solve_unknown_period
from .propagators import PropagatorConfig, TimeGrid, integrate_path
from .records import ConvergenceRecord
from .shooting import (ShootingState, newton_solve, state_from_coarse_sweep)

CSV_COLUMNS = ["run_id", "mode", "k", "s", "T_seconds", "jump_norm_rel",
               "fine_units", "coarse_units", "block_units", "cumulative_units"]


@dataclass
class PeriodEstimate:
    """Crossing-based period estimate with an honest uncertainty.

    confidence_window combines a Richardson step-bias probe (the dominant
    error of a first-order integrator) with the 3-sigma scatter of the
    individual crossing spacings.
    """

    period_seconds: float
    confidence_window: float
    crossings_used: int

    def __post_init__(self):
        if not self.period_seconds > 0.0:
            raise ValueError("period must be positive")
        if self.crossings_used < 3:
            raise ValueError("a period estimate needs at least 3 crossings")

    def contains(self, value):
        return abs(value - self.period_seconds) <= self.confidence_window


def dominant_component(path):
    """Index of the state component with the largest peak-to-peak swing."""
    return int(np.argmax(path.max(axis=0) - path.min(axis=0)))


def upward_crossings(values, dt, t_offset=0.0, level=None):
    """Times where a sampled signal crosses its mean level upward.

    Crossing instants are refined by linear interpolation between the
    bracketing samples.
    """
    level = float(np.mean(values)) if level is None else level
    x = values - level
    below = x[:-1] < 0.0
    above = x[1:] >= 0.0
    idx = np.nonzero(below & above)[0]
    fracs = -x[idx] / (x[idx + 1] - x[idx])
    return t_offset + (idx + fracs) * dt


def crossing_period(path, dt, tail_fraction=0.3, component=None):
    """Mean upward-crossing spacing over the trailing part of a trajectory.

    Returns (period, spacings, component, crossings). Raises
    NoOscillationDetectedError with fewer than 3 crossings.
    """
    n = path.shape[0]
    start = int(n * (1.0 - tail_fraction))
    tail = path[start:]
    comp = dominant_component(tail) if component is None else component
    times = upward_crossings(tail[:, comp], dt, t_offset=start * dt)
    if times.size < 3:
        raise NoOscillationDetectedError(
            f"only {times.size} upward crossings in the trajectory tail")
    spacings = np.diff(times)
    return float(np.mean(spacings)), spacings, comp, times


@dataclass
class SequentialResult:
    path: np.ndarray
    dt: float
    estimate: PeriodEstimate
    component: int
    total_units: int
    units_to_steady: Optional[int]
    steady_time: Optional[float]
    horizon: float
    wall_seconds: float


def _periodicity_metric(path, i, period_steps, n_probe=10):
    """Relative seam defect of the sampled orbit starting at index i.

    Mirrors the solvers' jump norm: the defect of one revolution divided
    by the norm of n_probe states sampled around that revolution.
    """
    j = i + period_steps
    j0 = int(j)
    if j0 + 1 >= path.shape[0]:
        return None
    fr = j - j0
    u_T = path[j0] * (1.0 - fr) + path[j0 + 1] * fr
    seam = np.linalg.norm(u_T - path[i])
    samples = []
    for m in range(n_probe):
        jj = i + period_steps * m / n_probe
        jj0 = int(jj)
        ff = jj - jj0
        samples.append(path[jj0] * (1.0 - ff) + path[jj0 + 1] * ff)
    return seam / np.linalg.norm(np.concatenate(samples))


def _first_steady_index(path, period_steps, tol, stride=None):
    """First sample index whose revolution defect is within tol."""
    n = path.shape[0]
    stride = max(1, n // 2000) if stride is None else stride
    limit = n - int(period_steps) - 2
    prev_hit = None
    for i in range(0, max(limit, 0), stride):
        m = _periodicity_metric(path, i, period_steps)
        if m is not None and m <= tol:
            prev_hit = i
            break
    if prev_hit is None:
        return None
    for i in range(max(0, prev_hit - stride), prev_hit + 1):
        m = _periodicity_metric(path, i, period_steps)
        if m is not None and m <= tol:
            return i
    return prev_hit


def run_sequential(system, u0, dt, horizon, prop_cfg=None, outer_tol=1e-3,
                   stats=None, extend_until_steady=False, max_extensions=60,
                   bias_probe=True):
    """Plain implicit Euler time stepping with period detection.

    Integrates from u0 with the physical step dt over the horizon,
    estimates the period from upward mean-level crossings of the
    dominant-swing component over the trailing 30 percent, and locates
    the first time the orbit repeats to within outer_tol (the solver
    jump metric). With extend_until_steady the run is prolonged in
    horizon-sized chunks until that happens.

    The confidence window of the returned PeriodEstimate adds a
    Richardson bias probe (a short continuation integrated at 2*dt) to
    the crossing-spacing scatter.
    """
    prop_cfg = prop_cfg or PropagatorConfig()
    stats = stats if stats is not None else SolveStats(system.dim)
    t0 = time.perf_counter()
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * max(horizon, dt):
        raise ValueError("horizon must be an integer number of steps")

    # physical-time integration == rescaled integration with T = 1
    unit_t = steps * dt
    path = integrate_path(system, 1.0, 0.0, unit_t, np.asarray(u0, float),
                          steps, prop_cfg, stats)

    extensions = 0
    while True:
        period, spacings, comp, _ = crossing_period(path, dt)
        period_steps = period / dt
        idx = _first_steady_index(path, period_steps, outer_tol)
        if idx is not None or not extend_until_steady or extensions >= max_extensions:
            break
        chunk = integrate_path(system, 1.0, 0.0, unit_t, path[-1], steps,
                               prop_cfg, stats)
        path = np.vstack([path, chunk[1:]])
        extensions += 1
    per_step = stats.snapshot()[2] / (path.shape[0] - 1)

    if bias_probe:
        # continue from the settled tail at twice the step for ~6 cycles;
        # the difference of the two crossing estimates approximates the
        # first-order step bias of the main run
        probe_steps = max(int(round(6 * period / (2 * dt))), 50)
        probe = integrate_path(system, 1.0, 0.0, probe_steps * 2 * dt, path[-1],
                               probe_steps, prop_cfg, stats)
        try:
            period_2h, _, _, _ = crossing_period(probe, 2 * dt,
                                                 tail_fraction=0.9, component=comp)
            bias = abs(period_2h - period)
        except NoOscillationDetectedError:
            bias = 2.0 * dt
    else:
        bias = 2.0 * dt

    sem = float(np.std(spacings) / np.sqrt(spacings.size))
    estimate = PeriodEstimate(period_seconds=period,
                              confidence_window=2.0 * bias + 3.0 * sem,
                              crossings_used=spacings.size + 1)

    if idx is not None:
        steady_time = idx * dt
        verify_steps = idx + int(np.ceil(period_steps))
        units_to_steady = int(np.ceil(per_step * verify_steps))
    else:
        steady_time = None
        units_to_steady = None
    return SequentialResult(path=path, dt=dt, estimate=estimate, component=comp,
                            total_units=stats.snapshot()[2],
                            units_to_steady=units_to_steady,
                            steady_time=steady_time,
                            horizon=path.shape[0] * dt,
                            wall_seconds=time.perf_counter() - t0)


def state_from_transient(system, u0, period_guess, grid, prop_cfg=None,
                         periods=15, steps_per_period=1000, stats=None):
    """Shooting state sampled from a settled stretch of a transient run.

    Integrates periods * period_guess of physical time, estimates the
    period from the trailing crossings, and samples the final estimated
    cycle at the grid nodes. Returns (state, seed_units, estimate-ish
    period). The period of the returned state is the crossing estimate,
    which removes most of the phase shear a wrong guess would imprint on
    the windows.
    """
    prop_cfg = prop_cfg or PropagatorConfig()
    stats = stats if stats is not None else SolveStats(system.dim)
    dt = period_guess / steps_per_period
    steps = int(round(periods * steps_per_period))
    path = integrate_path(system, 1.0, 0.0, steps * dt, np.asarray(u0, float),
                          steps, prop_cfg, stats)
    period, _, _, _ = crossing_period(path, dt, tail_fraction=0.5)
    t_end = steps * dt
    values = []
    for node in grid.nodes[:-1]:
        t = t_end - period + node * period
        j = t / dt
        j0 = int(j)
        fr = j - j0
        values.append(path[j0] * (1.0 - fr) + path[min(j0 + 1, steps)] * fr)
    return ShootingState(np.array(values), period), stats.snapshot()[2]


def speedup(baseline_units, effective_units):
    """Solve-count speedup of a parallel run against the sequential baseline."""
    if effective_units <= 0:
        raise ValueError("effective units must be positive")
    return baseline_units / effective_units


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_convergence_csv(path, run_id, mode, record):
    """Fixed-schema per-iteration CSV; float fields use repr for
    byte-stable round-trip output."""
    cumulative = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in record.rows:
            cumulative += row.fine_units + row.coarse_units + row.block_units
            writer.writerow([run_id, mode, row.k, row.s, _fmt(row.period),
                             _fmt(row.jump_norm), row.fine_units,
                             row.coarse_units, row.block_units, cumulative])


def write_trajectory_csv(path, dt, traj):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds"] + [f"u{i+1}" for i in range(traj.shape[1])])
        for i in range(traj.shape[0]):
            writer.writerow([_fmt(i * dt)] + [_fmt(v) for v in traj[i]])


def run_id_for(config_text):
    return hashlib.sha256(config_text.encode()).hexdigest()[:10]


@dataclass
class ExperimentResult:
    mode: str
    record: Optional[ConvergenceRecord]
    state: Optional[ShootingState]
    sequential: Optional[SequentialResult]
    seed_units: int
    baseline_units: Optional[int]
    effective_units: Optional[int]
    speedup: Optional[float]
    exit_code: int
    summary: str


def _build_seed(config, system, grid, prop_cfg, surrogate):
    if config.init == "coarse-sweep":
        stats = SolveStats(system.dim)
        state = state_from_coarse_sweep(system, grid, config.u0,
                                        config.period_guess, prop_cfg, stats)
        return state, stats.snapshot()[2]
    state, units = state_from_transient(
        system, config.u0, config.period_guess, grid, prop_cfg,
        periods=config.seed_periods,
        steps_per_period=config.seed_steps_per_period)
    return state, units


def run_experiment(config, out_dir=None):
    """Dispatch one configured run and write its output files.

    Writes convergence.csv (iterative modes), trajectory.csv (sequential
    mode) and summary.txt into out_dir. Returns an ExperimentResult whose
    exit_code follows the CLI contract: 0 converged, 2 iteration budget
    exhausted, 3 solver error (raised upstream), 4 config error (raised
    upstream).
    """
    from .config import build_problem  # deferred: config imports this module

    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    system, surrogate = build_problem(config)
    grid = TimeGrid.uniform(config.windows)
    prop_cfg = config.propagator_config()
    run_id = run_id_for(config.canonical_text())
    t_start = time.perf_counter()

    lines = [f"run_id: {run_id}", f"mode: {config.mode}",
             f"problem: {config.problem}"]

    if config.mode == "sequential":
        stats = SolveStats(system.dim)
        seq = run_sequential(system, config.u0, config.dt, config.horizon,
                             prop_cfg, outer_tol=config.outer_tol, stats=stats,
                             extend_until_steady=config.extend_until_steady)
        write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"),
                             seq.dt, seq.path)
        est = seq.estimate
        lines += [
            f"period_estimate_seconds: {est.period_seconds!r}",
            f"confidence_window_seconds: {est.confidence_window!r}",
            f"crossings_used: {est.crossings_used}",
            f"dominant_component: u{seq.component + 1}",
            f"total_solve_units: {seq.total_units}",
            f"units_to_steady_state: {seq.units_to_steady}",
            f"steady_state_time_seconds: "
            f"{None if seq.steady_time is None else repr(seq.steady_time)}",
            f"wall_seconds: {seq.wall_seconds:.3f}",
        ]
        summary = "\n".join(lines) + "\n"
        with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
            fh.write(summary)
        return ExperimentResult(mode="sequential", record=None, state=None,
                                sequential=seq, seed_units=0,
                                baseline_units=seq.units_to_steady,
                                effective_units=None, speedup=None,
                                exit_code=0, summary=summary)

    # iterative modes share seeding and solver plumbing
    seed_state, seed_units = _build_seed(config, system, grid, prop_cfg,
                                         surrogate)
    stats = SolveStats(system.dim)
    if config.mode == "shooting":
        state, record = newton_solve(seed_state, grid, system, prop_cfg,
                                     tol=config.outer_tol,
                                     max_iter=config.outer_max_iter,
                                     stats=stats, workers=config.workers)
    else:
        pcfg = PararealConfig(outer_tol=config.outer_tol,
                              outer_max_iter=config.outer_max_iter,
                              inner_tol=config.inner_tol,
                              inner_max_iter=config.inner_max_iter)
        if config.mode == "pppc":
            T_fix = config.period_fixed or seed_state.period
            state, record = solve_known_period(seed_state, T_fix, grid, system,
                                               surrogate, pcfg, prop_cfg,
                                               stats=stats,
                                               workers=config.workers)
        else:
            state, record = solve_unknown_period(seed_state, grid, system,
                                                 surrogate, pcfg, prop_cfg,
                                                 stats=stats,
                                                 workers=config.workers)
    record.seed_units = seed_units
    write_convergence_csv(os.path.join(out_dir, "convergence.csv"), run_id,
                          config.mode, record)

    baseline = config.baseline_units
    if baseline is None and config.report_speedup:
        seq = run_sequential(system, config.u0, config.dt, config.horizon,
                             prop_cfg, outer_tol=config.outer_tol,
                             extend_until_steady=True)
        baseline = seq.units_to_steady
    eff = record.effective_units
    spd = None if baseline is None else speedup(baseline, eff)

    lines += [
        f"converged: {record.converged}",
        f"stop_reason: {record.stop_reason}",
        f"outer_iterations: {record.outer_iterations}",
        f"period_seconds: {state.period!r}",
        f"final_jump_norm_rel: {record.rows[-1].jump_norm!r}",
        f"seed_units: {seed_units}",
        f"total_solve_units: {record.total_units}",
        f"effective_parallel_units: {eff}",
        f"sequential_baseline_units: {baseline}",
        f"speedup_vs_sequential: {None if spd is None else repr(spd)}",
        f"speedup_including_seed: "
        f"{None if baseline is None else repr(baseline / (eff + seed_units))}",
        f"wall_seconds: {time.perf_counter() - t_start:.3f}",
    ]
    for note in record.safeguards:
        lines.append(f"safeguard: {note}")
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(summary)
    return ExperimentResult(mode=config.mode, record=record, state=state,
                            sequential=None, seed_units=seed_units,
                            baseline_units=baseline, effective_units=eff,
                            speedup=spd,
                            exit_code=0 if record.converged else 2,
                            summary=summary)
