"""Outer loops: iterative hard thresholding and gradient matching pursuit.

Both alternate a gradient step with the exact structured projection, so
every iterate has a feasible support.  The stochastic variants share the
control flow and only swap in ``stochastic_gradient``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .objectives import ObjectiveOracle
from .projection import FAST_CONFIG, ProjectionConfig, project
from .structure import TvcsStructure, build_constraint_system

VARIANTS = ("iht", "gradmp", "stoiht", "stogradmp")


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop settings.

    ``step_size=None`` uses the objective's own default (the inverse
    curvature bound for the least-squares type losses).  ``projection``
    configures every inner projection; ``warm_start`` seeds each one with
    the previous projection's primal-dual state, which rarely pays off
    once the certificate uses tightened dual bounds.

    A run stops when the relative objective change falls below
    ``stop_tolerance``, when a deterministic variant revisits an earlier
    iterate exactly (it would cycle from there on), or after
    ``max_outer_iterations``.
    """

    variant: str = "iht"
    step_size: float | None = None
    max_outer_iterations: int = 500
    stop_tolerance: float = 1e-6
    rng_seed: int = 0
    subspace_budget: int = 100
    projection: ProjectionConfig = FAST_CONFIG
    warm_start: bool = False

    def __post_init__(self):
        v = self.variant.lower()
        if v not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        object.__setattr__(self, "variant", v)
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be positive")
        if self.stop_tolerance < 0:
            raise ValueError("stop_tolerance must be non-negative")


@dataclass
class SolveTrace:
    """Objective, support and elapsed time per iterate; entry 0 is ``w = 0``."""

    objective_values: list = field(default_factory=list)
    supports: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    w: np.ndarray | None = None
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.objective_values) - 1

    def record(self, value, w, t):
        self.objective_values.append(float(value))
        self.supports.append((np.asarray(w) != 0).astype(np.int8))
        self.wall_times.append(float(t))

    def to_dict(self) -> dict:
        return {
            "objective": self.objective_values,
            "supports": [s.tolist() for s in self.supports],
            "wall_time": self.wall_times,
            "w": None if self.w is None else self.w.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
        }


class _Projector:
    """Projection onto one structure, warm-starting from the previous call."""

    def __init__(self, structure, config: ProjectionConfig, warm: bool):
        self.system = build_constraint_system(structure)
        self.config = config
        self.warm = warm
        self.state = None

    def __call__(self, z):
        res = project(z, self.system, self.config, warm_start=self.state if self.warm else None)
        self.state = res.state
        return res


def _step_size(objective: ObjectiveOracle, config: SolverConfig) -> float:
    step = config.step_size if config.step_size is not None else objective.default_step_size()
    if step is None:
        raise ValueError("this objective has no default step size; set step_size")
    return float(step)


def _converged(old: float, new: float, tol: float) -> bool:
    return abs(new - old) <= tol * max(abs(old), 1e-300)


def _run(objective: ObjectiveOracle, structure: TvcsStructure, config: SolverConfig,
         matching_pursuit: bool, stochastic: bool) -> SolveTrace:
    step = _step_size(objective, config)
    rng = np.random.default_rng(config.rng_seed)
    proj = _Projector(structure, config.projection, config.warm_start)
    wide = _Projector(structure.doubled(), config.projection, config.warm_start) if matching_pursuit else None
    grad = (lambda w: objective.stochastic_gradient(w, rng)) if stochastic else objective.gradient

    trace = SolveTrace()
    t0 = time.perf_counter()
    w = np.zeros(objective.dimension)
    f = objective.value(w)
    trace.record(f, w, 0.0)
    seen = {w.tobytes()}
    for _ in range(config.max_outer_iterations):
        g = grad(w)
        if matching_pursuit:
            gamma = wide(g).support.astype(bool) | (w != 0)
            z = objective.subspace_minimize(gamma, config.subspace_budget, w0=w, step=step)
            z = np.where(gamma, z, 0.0)
        else:
            z = w - step * g
        if objective.bounds is not None:
            z = np.clip(z, *objective.bounds)
        w = proj(z).projected
        fn = objective.value(w)
        trace.record(fn, w, time.perf_counter() - t0)
        done = _converged(f, fn, config.stop_tolerance)
        if not stochastic:
            key = w.tobytes()
            done = done or key in seen
            seen.add(key)
        f = fn
        if done:
            trace.converged = True
            break
    trace.w = w
    return trace


def iht(objective: ObjectiveOracle, structure: TvcsStructure, config: SolverConfig | None = None) -> SolveTrace:
    """Gradient step then projection, from ``w = 0``."""
    return _run(objective, structure, config or SolverConfig(), False, False)


def gradmp(objective: ObjectiveOracle, structure: TvcsStructure, config: SolverConfig | None = None) -> SolveTrace:
    """Gradient matching pursuit.

    Each iteration merges the current support with the support the
    gradient would take under doubled budgets, minimizes over the merged
    set, and projects the result back.
    """
    return _run(objective, structure, config or SolverConfig(variant="gradmp"), True, False)


def stochastic_variant(objective: ObjectiveOracle, structure: TvcsStructure,
                       config: SolverConfig | None = None) -> SolveTrace:
    """Same loops as :func:`iht` / :func:`gradmp` with sampled gradients."""
    config = config or SolverConfig(variant="stoiht")
    return _run(objective, structure, config, config.variant.endswith("gradmp"), True)


def solve(objective: ObjectiveOracle, structure: TvcsStructure, config: SolverConfig) -> SolveTrace:
    """Dispatch on ``config.variant``."""
    mp = config.variant.endswith("gradmp")
    return _run(objective, structure, config, mp, config.variant.startswith("sto"))
