"""Run configuration: INI-style file parsing, presets, validation.

A config file has flat key=value sections::

    [problem]
    name = colpitts
    # optional parameter overrides, e.g.  u_t = 2.585

    [grid]
    windows = 10
    coarse_dtau = 0.1
    fine_dtau = 1e-4

    [propagator]
    newton_tol = 1e-10
    newton_max_iter = 50

    [run]
    mode = pppc-up
    outer_tol = 1e-3
    ...

Problem presets fill everything the file omits; command-line flags
override file values last.
"""

import configparser
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigError
from .propagators import PropagatorConfig
from .systems import (ColpittsParams, colpitts_surrogate, colpitts_system,
                      vanderpol_surrogate, vanderpol_system)

MODES = ("sequential", "shooting", "pppc", "pppc-up")


@dataclass
class RunConfig:
    problem: str = "colpitts"
    problem_overrides: dict = field(default_factory=dict)
    mode: str = "pppc-up"
    windows: int = 10
    coarse_dtau: float = 0.1
    fine_dtau: float = 1e-4
    outer_tol: float = 1e-3
    outer_max_iter: int = 40
    inner_tol: float = 1e-3
    inner_max_iter: int = 50
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    u0: np.ndarray = None
    period_guess: float = 1e-4
    period_fixed: Optional[float] = None
    dt: float = 1.125e-7
    horizon: float = 1.125e-3
    extend_until_steady: bool = False
    init: str = "transient"
    seed_periods: float = 15.0
    seed_steps_per_period: int = 1000
    out_dir: str = "out"
    workers: int = 1
    baseline_units: Optional[int] = None
    report_speedup: bool = True

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.windows < 2:
            raise ConfigError("windows must be at least 2")
        if abs(self.windows * self.coarse_dtau - 1.0) > 1e-12:
            raise ConfigError(
                f"windows * coarse_dtau must equal 1, got "
                f"{self.windows} * {self.coarse_dtau}")
        ratio = self.coarse_dtau / self.fine_dtau
        if abs(ratio - round(ratio)) > 1e-12 * max(ratio, 1.0) or ratio < 1:
            raise ConfigError("fine_dtau must divide coarse_dtau")
        for name in ("outer_tol", "inner_tol", "newton_tol", "period_guess",
                     "dt", "horizon"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.init not in ("transient", "coarse-sweep"):
            raise ConfigError("init must be 'transient' or 'coarse-sweep'")
        if self.u0 is None or np.asarray(self.u0).size == 0:
            raise ConfigError("an initial state u0 is required")
        return self

    def propagator_config(self):
        return PropagatorConfig(
            fine_steps_per_window=int(round(self.coarse_dtau / self.fine_dtau)),
            coarse_steps_per_window=1,
            newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter)

    def canonical_text(self):
        """Deterministic serialization used for the run id."""
        pairs = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, dict):
                v = ",".join(f"{k}={v[k]!r}" for k in sorted(v))
            pairs.append(f"{f.name}={v}")
        return "\n".join(pairs)


PRESETS = {
    "colpitts": dict(
        u0=np.array([9.75, 1.0, 1.0, 1.0]),
        period_guess=1.0e-4,
        dt=1.125e-7,
        horizon=1.125e-3,
        fine_dtau=1e-4,
        coarse_dtau=0.1,
        windows=10,
        outer_tol=1e-3,
        seed_periods=15.0,
        seed_steps_per_period=1000,
    ),
    "vanderpol": dict(
        u0=np.array([2.0, 0.0]),
        period_guess=6.6,
        dt=6.6e-3,
        horizon=132.0,
        fine_dtau=1e-3,
        coarse_dtau=0.1,
        windows=10,
        outer_tol=1e-6,
        inner_tol=1e-8,
        seed_periods=6.0,
        seed_steps_per_period=1000,
    ),
}


def default_config(problem="colpitts"):
    if problem not in PRESETS:
        raise ConfigError(f"unknown problem {problem!r}; known: {sorted(PRESETS)}")
    cfg = RunConfig(problem=problem)
    for key, value in PRESETS[problem].items():
        setattr(cfg, key, value)
    return cfg


def build_problem(config):
    """Instantiate (system, surrogate) for a validated config."""
    over = config.problem_overrides
    if config.problem == "colpitts":
        params = ColpittsParams(**over) if over else ColpittsParams()
        return colpitts_system(params), colpitts_surrogate(params)
    if config.problem == "vanderpol":
        mu = float(over.get("mu", 1.0))
        return vanderpol_system(mu), vanderpol_surrogate(mu)
    raise ConfigError(f"unknown problem {config.problem!r}")


_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}

_FIELD_SECTIONS = {
    "grid": {"windows": int, "coarse_dtau": float, "fine_dtau": float},
    "propagator": {"newton_tol": float, "newton_max_iter": int},
    "run": {"mode": str, "outer_tol": float, "outer_max_iter": int,
            "inner_tol": float, "inner_max_iter": int,
            "period_guess": float, "period_fixed": float,
            "dt": float, "horizon": float, "extend_until_steady": "bool",
            "init": str, "seed_periods": float, "seed_steps_per_period": int,
            "out_dir": str, "workers": int, "baseline_units": int,
            "report_speedup": "bool", "initial_state": "vector"},
}


def _convert(raw, kind, key):
    raw = raw.strip()
    try:
        if kind == "bool":
            return _BOOL[raw.lower()]
        if kind == "vector":
            return np.array([float(x) for x in raw.replace(",", " ").split()])
        return kind(raw)
    except (ValueError, KeyError):
        raise ConfigError(f"cannot parse {key} = {raw!r}")


def read_config(path=None, overrides=None):
    """Load a config file and apply CLI-style overrides.

    Precedence: problem preset < file values < overrides dict. `path`
    None starts from the bare preset. Raises ConfigError for anything
    malformed.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")

    problem = "colpitts"
    if parser.has_option("problem", "name"):
        problem = parser.get("problem", "name").strip()
    if overrides and overrides.get("problem"):
        problem = overrides["problem"]
    cfg = default_config(problem)

    if parser.has_section("problem"):
        for key, raw in parser.items("problem"):
            if key == "name":
                continue
            cfg.problem_overrides[key] = _convert(raw, float, key)

    for section, spec in _FIELD_SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if key not in spec:
                raise ConfigError(f"unknown key [{section}] {key}")
            value = _convert(raw, spec[key], key)
            if key == "initial_state":
                cfg.u0 = value
            else:
                setattr(cfg, key, value)

    if overrides:
        for key, value in overrides.items():
            if value is None or key == "problem":
                continue
            setattr(cfg, key, value)
    return cfg.validate()
