"""Exact Euclidean projection onto a three-view cardinality set.

Keeping the ``k`` entries of ``v`` that maximize the retained energy
``sum v_i^2`` subject to the group budgets is an integer program whose
constraint matrix is totally unimodular, so its LP relaxation has an
integral optimum.  We find that optimum by projected gradient on a
penalty whose zeros are the primal-dual optimal pairs, round, and accept
the rounded support only when a weak-duality bound certifies it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .penalty import block_steps
from .structure import ConstraintSystem, TvcsStructure, build_constraint_system

log = logging.getLogger(__name__)

BRUTEFORCE_MAX_P = 24


@dataclass(frozen=True)
class ProjectionConfig:
    """Solver settings.

    Parameters
    ----------
    max_iterations : int
        Iteration cap; hitting it raises :class:`ProjectionNonConvergence`.
    binary_tolerance : float
        Rounding is attempted only once every ``x_i`` is within this
        distance of 0 or 1.  Must lie in (0, 0.5).
    gap_tolerance : float
        Accepted optimality gap, relative to ``sum(v^2)``.
    perturbation_scale : float
        Size of the uniform tie-breaking noise added to ``v^2`` (relative
        to ``max(v^2)``); 0 disables it.
    rng_seed : int
        Seed for the perturbation.
    step_size : float or None
        Fixed step ``gamma``; ``None`` derives it from the curvature bound.
    momentum : bool
        Use restarted momentum (the penalty stays monotone either way).
    dual_scaling : bool
        Diagonally rescale the group multipliers by their budgets.
    history_limit : int
        Number of penalty values kept in the returned iterate.
    rounding_interval : int
        If positive, the rounding certificate is also tried every this
        many iterations while ``x`` is still fractional.  The certificate
        is a weak-duality bound, so this never admits a worse support; it
        only stops the solver waiting for ``x`` to separate near-ties.
    rounding_start : int
        First iteration at which the periodic attempts above begin.  The
        default keeps them as a late fallback, so a run normally ends at
        a near-vertex ``x``; :data:`EAGER_CONFIG` starts them at once.
    greedy_completion : bool
        Round with repair and greedy completion (see
        :func:`certify_rounding`).  With plain round-half-up a coordinate
        of tiny weight can take millions of iterations to cross 0.5 even
        though the dual bound is already tight.
    dual_sweeps : int
        Passes of exact per-group minimization of the dual bound made on
        a copy of the multipliers at each certificate attempt.  The bound
        stays valid, so this only lets sound certificates pass sooner.
    """

    max_iterations: int = 10_000_000
    binary_tolerance: float = 0.1
    gap_tolerance: float = 1e-9
    perturbation_scale: float = 1e-9
    rng_seed: int = 0
    step_size: float | None = None
    momentum: bool = True
    dual_scaling: bool = True
    history_limit: int = 10_000
    rounding_interval: int = 1024
    rounding_start: int = 2_000_000
    greedy_completion: bool = True
    dual_sweeps: int = 0

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be positive")
        if not 0.0 < self.binary_tolerance < 0.5:
            raise ValueError("binary_tolerance must lie in (0, 0.5)")
        if not self.gap_tolerance >= 0.0:
            raise ValueError("gap_tolerance must be non-negative")
        if not self.perturbation_scale >= 0.0:
            raise ValueError("perturbation_scale must be non-negative")
        if self.step_size is not None and not self.step_size > 0.0:
            raise ValueError("step_size must be positive")
        if int(self.history_limit) < 0:
            raise ValueError("history_limit must be non-negative")
        if int(self.rounding_interval) < 0:
            raise ValueError("rounding_interval must be non-negative")
        if int(self.rounding_start) < 0:
            raise ValueError("rounding_start must be non-negative")
        if int(self.dual_sweeps) < 0:
            raise ValueError("dual_sweeps must be non-negative")


#: exact tolerance, but the certificate is tried every 16 iterations from
#: the start instead of waiting for ``x`` to reach a vertex
EAGER_CONFIG = ProjectionConfig(rounding_interval=16, rounding_start=0, dual_sweeps=2)

#: settings for inner loops of outer solvers, where a looser gap keeps
#: thousands of projections affordable
FAST_CONFIG = ProjectionConfig(binary_tolerance=0.45, gap_tolerance=1e-3, rounding_interval=16,
                               rounding_start=0, dual_sweeps=2)


@dataclass(frozen=True, eq=False)
class PrimalDualIterate:
    """State of the penalty descent.

    ``y`` stacks the group multipliers (one per constraint row) and the
    per-coordinate multipliers.
    """

    x: np.ndarray
    y: np.ndarray
    iteration: int = 0
    penalty_value: float = 0.0
    support: np.ndarray | None = None
    penalty_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_lengths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trajectory: np.ndarray | None = None
    dual_bound: float = float("nan")


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    support: np.ndarray
    projected: np.ndarray
    iterations_used: int
    final_gap: float
    contraction_ratio: float
    perturbed: bool
    objective: float = float("nan")
    state: PrimalDualIterate | None = None

    def to_dict(self) -> dict:
        return {
            "support": self.support.astype(int).tolist(),
            "projected": self.projected.tolist(),
            "iterations": int(self.iterations_used),
            "gap": float(self.final_gap),
            "contraction_ratio": float(self.contraction_ratio),
            "perturbed": bool(self.perturbed),
            "objective": float(self.objective),
        }


class ProjectionNonConvergence(RuntimeError):
    """The iteration cap was reached before a certified rounding.

    ``iterate`` is the last primal-dual state and ``penalty`` its value.
    """

    def __init__(self, iterate: PrimalDualIterate, message: str | None = None):
        self.iterate = iterate
        self.penalty = iterate.penalty_value
        super().__init__(message or
                         f"no certified rounding after {iterate.iteration} iterations "
                         f"(penalty {iterate.penalty_value:.3e})")


def squared_magnitudes(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v * v


def perturb_objective(v2, scale: float, rng) -> np.ndarray:
    """Add i.i.d. ``U(0, scale * max(max(v2), 1))`` noise to break ties."""
    v2 = np.asarray(v2, dtype=float)
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if scale == 0:
        return v2.copy()
    hi = scale * max(float(v2.max(initial=0.0)), 1.0)
    return v2 + rng.uniform(0.0, hi, size=v2.shape)


@dataclass(frozen=True)
class RoundingCertificate:
    accepted: bool
    support: np.ndarray
    primal_value: float
    dual_bound: float

    def __iter__(self):
        # unpacks as (accepted, support)
        return iter((self.accepted, self.support))

    @property
    def gap(self) -> float:
        return self.dual_bound - self.primal_value


def _as_system(structure) -> ConstraintSystem:
    if isinstance(structure, ConstraintSystem):
        return structure
    return build_constraint_system(structure)


def _completion_order(v2) -> np.ndarray:
    return np.argsort(-np.asarray(v2), kind="stable")


def certify_rounding(x, y, system: ConstraintSystem, v2, eps: float,
                     complete: bool = True, dual_sweeps: int = 0) -> RoundingCertificate:
    """Round ``x`` to a support and test it against a dual bound.

    The support is ``x >= 0.5``; an infeasible rounding is rejected.  With
    ``complete`` an overflowing rounding is instead trimmed (largest ``x``
    first) and then extended by every remaining coordinate that still
    fits, in decreasing ``v2`` order.  The bound
    ``s.yG + sum_i [v2_i - (A^T yG)_i]_+`` holds for any ``yG >= 0``, so
    acceptance (``v2.support >= bound - eps``) certifies an
    ``eps``-optimal support.  Only the first ``n_rows`` entries of ``y``
    are used; ``dual_sweeps`` passes of :func:`tvcs._kernels.tighten_dual`
    may lower the bound further, and with ``complete`` the tightened
    multipliers also propose a second support (greedy in decreasing
    reduced weight) that is kept if it scores higher.
    """
    system = _as_system(system)
    v2 = np.ascontiguousarray(v2, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    yG = np.ascontiguousarray(np.asarray(y, dtype=float)[:system.n_rows])
    s = system.s.astype(float)
    g1, g2 = system.view1_of, system.view2_of
    sup = np.zeros(system.p, dtype=np.int8)
    prim = _kernels.round_support(x, v2, s, g1, g2, _completion_order(v2), sup, np.empty(s.size),
                                  bool(complete))
    yG = np.maximum(yG, 0.0)
    ub = _kernels.dual_bound(yG, v2, s, g1, g2)
    if dual_sweeps > 0 and prim > -np.inf:
        ptr, idx = _rows(system)
        tight = np.empty(s.size)
        ub = min(ub, _kernels.tighten_dual(yG, v2, s, g1, g2, ptr, idx, int(dual_sweeps), tight))
        if complete:
            alt = np.zeros(system.p, dtype=np.int8)
            other = _kernels.reduced_greedy(tight, v2, s, g1, g2, alt, np.empty(s.size))
            if other > prim:
                prim, sup = other, alt
    return RoundingCertificate(bool(prim >= ub - eps), sup, float(prim), float(ub))


def _rows(system: ConstraintSystem):
    A = system.A
    return A.indptr.astype(np.int64), A.indices.astype(np.int64)


def _tail_ratio(steps: np.ndarray) -> float:
    """Per-iteration factor from a log-linear fit of recent step lengths."""
    steps = steps[steps > 0]
    if steps.size < 3:
        return float("nan")
    t = np.arange(steps.size)
    slope = np.polyfit(t, np.log(steps), 1)[0]
    return float(np.exp(slope))


def solve_feasibility(v2, system, config: ProjectionConfig | None = None,
                      warm_start: PrimalDualIterate | None = None,
                      certify_weights=None, record_trajectory: int = 0,
                      ring_size: int = 64) -> PrimalDualIterate:
    """Run the penalty descent from ``warm_start`` (default ``x = 0, y = 0``).

    Stops once every ``x_i`` is within ``binary_tolerance`` of {0, 1} and
    the rounding passes :func:`certify_rounding`.  ``gap_tolerance`` is
    taken relative to ``sum(certify_weights)``, which defaults to ``v2``.
    The first ``record_trajectory`` stacked iterates ``(x, yG, yI)`` are
    kept for analysis.

    Raises
    ------
    ProjectionNonConvergence
        When ``max_iterations`` is exhausted.
    """
    config = config or ProjectionConfig()
    system = _as_system(system)
    v2 = np.ascontiguousarray(v2, dtype=float)
    if v2.shape != (system.p,):
        raise ValueError(f"weights have shape {v2.shape}, expected ({system.p},)")
    if not np.all(np.isfinite(v2)) or np.any(v2 < 0):
        raise ValueError("weights must be finite and non-negative")
    v2c = v2 if certify_weights is None else np.ascontiguousarray(certify_weights, dtype=float)
    p, G = system.p, system.n_rows
    s = system.s.astype(float)
    g1 = np.ascontiguousarray(system.view1_of)
    g2 = np.ascontiguousarray(system.view2_of)

    if config.step_size is None:
        sx, sg, si, _ = block_steps(system, v2, config.dual_scaling)
    else:
        sx = np.full(p, config.step_size)
        sg = np.full(G, config.step_size)
        si = np.full(p, config.step_size)

    if warm_start is not None:
        if warm_start.x.shape != (p,) or warm_start.y.shape != (G + p,):
            raise ValueError("warm start does not match the constraint system")
        x = np.clip(warm_start.x, 0.0, 1.0).astype(float)
        yG = np.maximum(warm_start.y[:G], 0.0).astype(float)
        yI = np.maximum(warm_start.y[G:], 0.0).astype(float)
    else:
        x, yG, yI = np.zeros(p), np.zeros(G), np.zeros(p)

    hist = np.zeros(min(int(config.history_limit), int(config.max_iterations) + 1))
    traj = np.zeros((int(record_trajectory), 2 * p + G))
    ring = np.zeros(ring_size)
    eps = config.gap_tolerance * float(v2c.sum())
    ptr, idx = _rows(system)
    status, its, fval, nsteps, sup, ub = _kernels.run(
        v2, v2c, s, g1, g2, _completion_order(v2c), sx, sg, si, x, yG, yI,
        int(config.max_iterations), eps, float(config.binary_tolerance),
        bool(config.momentum), int(config.rounding_interval), int(config.rounding_start),
        bool(config.greedy_completion),
        ptr, idx, int(config.dual_sweeps), hist, traj, ring)

    k = min(nsteps, ring_size)
    order = (np.arange(nsteps - k, nsteps) % ring_size) if ring_size else np.zeros(0, dtype=int)
    state = PrimalDualIterate(
        x=x, y=np.concatenate([yG, yI]), iteration=int(its), penalty_value=float(fval),
        support=sup.astype(np.int8) if status == 1 else None,
        penalty_history=hist[:min(hist.size, its + 1)],
        step_lengths=ring[order],
        trajectory=traj[:min(traj.shape[0], its + 1)] if record_trajectory else None,
        dual_bound=float(ub),
    )
    if status != 1:
        raise ProjectionNonConvergence(state)
    return state


def project(v, structure, config: ProjectionConfig | None = None,
            warm_start: PrimalDualIterate | None = None) -> ProjectionResult:
    """Nearest point to ``v`` whose support satisfies every budget.

    ``structure`` may be a :class:`TvcsStructure` or a prebuilt
    :class:`ConstraintSystem`.  Internally the weights ``v^2`` are scaled
    to unit maximum; ``warm_start`` takes the ``state`` of an earlier
    result on the same structure.

    Raises
    ------
    ProjectionNonConvergence
        If the solver cannot certify a rounding within the iteration cap.
    """
    config = config or ProjectionConfig()
    system = _as_system(structure)
    v = np.asarray(v, dtype=float)
    if v.shape != (system.p,):
        raise ValueError(f"v has shape {v.shape}, expected ({system.p},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("v must be finite")
    v2 = squared_magnitudes(v)
    top = float(v2.max(initial=0.0))
    unit = v2 / top if top > 0 else v2
    rng = np.random.default_rng(config.rng_seed)
    driven = perturb_objective(unit, config.perturbation_scale, rng)
    state = solve_feasibility(driven, system, config, warm_start=warm_start, certify_weights=unit)
    support = state.support
    primal = float(unit @ support)
    gap = state.dual_bound - primal
    return ProjectionResult(
        support=support,
        projected=np.where(support == 1, v, 0.0),
        iterations_used=state.iteration,
        final_gap=float(gap * top) if top > 0 else 0.0,
        contraction_ratio=_tail_ratio(state.step_lengths),
        perturbed=config.perturbation_scale > 0,
        objective=float(v2 @ support),
        state=state,
    )


def project_bruteforce(v, structure: TvcsStructure | ConstraintSystem) -> ProjectionResult:
    """Exhaustive projection for small ``p``.

    Among optimal supports the one with the fewest coordinates wins,
    then the lexicographically smallest index list.

    Raises
    ------
    ValueError
        If ``p`` exceeds :data:`BRUTEFORCE_MAX_P`.
    """
    system = _as_system(structure)
    p = system.p
    if p > BRUTEFORCE_MAX_P:
        raise ValueError(f"brute force limited to p <= {BRUTEFORCE_MAX_P}, got {p}")
    v = np.asarray(v, dtype=float)
    v2 = squared_magnitudes(v)
    A = system.A.toarray().astype(np.int64)
    s = system.s
    bits = (1 << np.arange(p, dtype=np.int64))
    best = -1.0
    ties: list[int] = []
    tol = 1e-12 * max(float(v2.sum()), 1e-300)
    chunk = 1 << min(p, 16)
    for start in range(0, 1 << p, chunk):
        masks = np.arange(start, min(start + chunk, 1 << p), dtype=np.int64)
        X = ((masks[:, None] & bits[None, :]) != 0)
        feas = np.all(X.astype(np.int64) @ A.T <= s, axis=1)
        vals = np.where(feas, X @ v2, -np.inf)
        top = vals.max()
        if top > best + tol:
            best = float(top)
            ties = []
        if top >= best - tol:
            ties.extend(masks[vals >= best - tol].tolist())
    cand = [tuple(i for i in range(p) if m >> i & 1) for m in ties]
    chosen = min(cand, key=lambda c: (len(c), c))
    support = np.zeros(p, dtype=np.int8)
    support[list(chosen)] = 1
    return ProjectionResult(
        support=support,
        projected=np.where(support == 1, v, 0.0),
        iterations_used=0,
        final_gap=0.0,
        contraction_ratio=float("nan"),
        perturbed=False,
        objective=float(v2 @ support),
    )
