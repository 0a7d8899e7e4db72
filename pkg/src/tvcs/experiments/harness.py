"""Seeded multi-trial experiment runner.

Every trial draws its own random stream from ``(seed, trial)`` so trials
can run in any order or in parallel and still give identical tables.
"""

from __future__ import annotations

import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..objectives import (
    CrowdObjective,
    GrnObjective,
    LeastSquaresObjective,
    SquaredHingeObjective,
    exact_expected_accuracy,
    weights_to_matrix,
)
from ..projection import FAST_CONFIG, ProjectionConfig, project
from ..solvers import SolverConfig, solve
from ..structure import TvcsStructure
from . import generators as gen
from . import metrics

log = logging.getLogger(__name__)

KINDS = ("regression", "classification", "crowd", "grn")

DEFAULT_PARAMS = {
    "regression": dict(side=10, sample_sizes=[20, 40, 60, 80, 100], noise_sd=0.01,
                       methods=["tvcs", "rows", "columns", "overall"]),
    "classification": dict(side=10, sample_sizes=[50, 100, 200, 400], test_size=1000,
                           methods=["tvcs", "rows", "columns", "overall"]),
    "crowd": dict(workers=20, tasks=50, budget_ratios=[1.0, 2.0, 3.0], worker_capacity_factor=1.5,
                  task_capacity=None, train_samples=64, batch_size=16, holdout_samples=20000,
                  methods=["optimized", "random"]),
    "grn": dict(genes=30, time_points=50, degree=2, noise_fraction=0.1,
                methods=["tvcs", "thresholded", "unconstrained"]),
}

DEFAULT_SOLVER = {
    "regression": dict(variant="gradmp"),
    "classification": dict(variant="gradmp", subspace_budget=50),
    "crowd": dict(variant="stoiht", step_size=100.0, max_outer_iterations=30),
    "grn": dict(variant="gradmp", max_outer_iterations=100),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """What to run.

    ``params`` holds the kind-specific settings (see ``DEFAULT_PARAMS``),
    ``solver`` and ``projection`` override fields of :class:`SolverConfig`
    and :class:`ProjectionConfig`.
    """

    kind: str
    seed: int = 0
    trials: int = 30
    params: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    projection: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind: must be one of {KINDS}, got {self.kind!r}")
        if int(self.trials) < 1:
            raise ValueError("trials: must be at least 1")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValueError(f"params: unknown keys {sorted(unknown)} for kind {self.kind!r}")
        merged = {**DEFAULT_PARAMS[self.kind], **self.params}
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "solver", {**DEFAULT_SOLVER[self.kind], **self.solver})
        # build once so bad fields fail early
        self.solver_config()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"config: unknown fields {sorted(unknown)}")
        if "kind" not in d:
            raise ValueError("kind: missing")
        return cls(**d)

    def projection_config(self) -> ProjectionConfig:
        names = {f.name for f in fields(ProjectionConfig)}
        bad = set(self.projection) - names
        if bad:
            raise ValueError(f"projection: unknown fields {sorted(bad)}")
        return ProjectionConfig(**{**asdict(FAST_CONFIG), **self.projection})

    def solver_config(self, seed: int = 0) -> SolverConfig:
        names = {f.name for f in fields(SolverConfig)} - {"projection", "rng_seed"}
        bad = set(self.solver) - names
        if bad:
            raise ValueError(f"solver: unknown fields {sorted(bad)}")
        return SolverConfig(**self.solver, rng_seed=seed, projection=self.projection_config())

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list
    aggregate: list
    elapsed: float = 0.0


def trial_rng(seed: int, trial: int, stream: int = 0):
    return np.random.default_rng([int(seed), int(trial), int(stream)])


def degenerate(structure: TvcsStructure, method: str) -> TvcsStructure:
    """Baseline structures: the same groups with some constraints dropped."""
    if method == "tvcs":
        return structure
    if method == "rows":
        return structure.restricted(keep_view2=False, keep_overall=False)
    if method == "columns":
        return structure.restricted(keep_view1=False, keep_overall=False)
    if method == "overall":
        return structure.restricted(keep_view1=False, keep_view2=False)
    raise ValueError(f"unknown method {method!r}")


def _post_project(w, structure, config):
    return project(w, structure, config).projected


# ------------------------------------------------------------------ trials

def _regression_trial(cfg: ExperimentConfig, trial: int) -> list[dict]:
    P = cfg.params
    classify = cfg.kind == "classification"
    rng = trial_rng(cfg.seed, trial)
    pcfg = cfg.projection_config()
    structure = gen.gen_random_structure(int(P["side"]), rng)
    w_true = gen.gen_true_model(structure, rng, pcfg)
    sizes = sorted(int(n) for n in P["sample_sizes"])
    if classify:
        full = gen.gen_classification_data(w_true, sizes[-1], rng)
        test = gen.gen_classification_data(w_true, int(P["test_size"]), rng)
    else:
        full = gen.gen_regression_data(w_true, sizes[-1], float(P["noise_sd"]), rng)
    rows = []
    for n in sizes:
        data = full.head(n)
        obj = SquaredHingeObjective(data) if classify else LeastSquaresObjective(data)
        for method in P["methods"]:
            row = dict(trial=trial, point=n, method=method)
            t0 = time.perf_counter()
            try:
                trace = solve(obj, degenerate(structure, method), cfg.solver_config(cfg.seed))
                w = _post_project(trace.w, structure, pcfg)
                row.update(
                    selection_recall=metrics.selection_recall(w, w_true),
                    recovery_success=metrics.recovery_success(w, w_true),
                    objective=obj.value(w),
                    iterations=trace.iterations,
                    status="ok",
                )
                if classify:
                    row["classification_error"] = metrics.classification_error(w, test)
            except Exception as exc:  # recorded per trial, run continues
                log.warning("trial %d n=%d %s failed: %s", trial, n, method, exc)
                row["status"] = f"error: {exc}"
            row["seconds"] = time.perf_counter() - t0
            rows.append(row)
    return rows


def simulated_accuracy(model, X, n_sims: int, rng) -> float:
    """Monte-Carlo accuracy of the Bayesian prediction rule under ``X``."""
    X = np.asarray(X).reshape(model.n, model.m).astype(float)
    y = rng.random((n_sims, model.m)) < model.priors
    votes1 = model.sample_votes(rng, n_sims, 1)
    votes0 = model.sample_votes(rng, n_sims, 0)
    votes = np.where(y[:, None, :], votes1, votes0)
    score = np.einsum("kij,ij->kj", votes, X)
    pred = score >= model.thresholds
    return float(np.mean(pred == y))


def _crowd_trial(cfg: ExperimentConfig, trial: int) -> list[dict]:
    P = cfg.params
    rng = trial_rng(cfg.seed, trial)
    holdout = trial_rng(cfg.seed, trial, 1)
    n, m = int(P["workers"]), int(P["tasks"])
    model = gen.gen_crowd_model(n, m, rng)
    pcfg = cfg.projection_config()
    rows = []
    for ratio in P["budget_ratios"]:
        overall = int(round(float(ratio) * m))
        wcap = int(math.ceil(float(P["worker_capacity_factor"]) * overall / n))
        tcap = n if P["task_capacity"] is None else int(P["task_capacity"])
        structure = gen.crowd_structure(n, m, overall, wcap, tcap)
        obj = CrowdObjective(model, n_samples=int(P["train_samples"]), seed=int(rng.integers(2**63)),
                             batch_size=int(P["batch_size"]))
        for method in P["methods"]:
            row = dict(trial=trial, point=float(ratio), method=method)
            t0 = time.perf_counter()
            try:
                if method == "optimized":
                    trace = solve(obj, structure, cfg.solver_config(int(rng.integers(2**63))))
                    X, its = (trace.w != 0).astype(float), trace.iterations
                elif method == "random":
                    X, its = gen.random_feasible_assignment(structure, rng).astype(float), 0
                else:
                    raise ValueError(f"unknown method {method!r}")
                X = (_post_project(X, structure, pcfg) != 0).astype(float)
                row.update(
                    heldout_accuracy=simulated_accuracy(model, X, int(P["holdout_samples"]), holdout),
                    exact_accuracy=exact_expected_accuracy(model, X)[1],
                    smoothed_accuracy=obj.smoothed_accuracy(X),
                    assigned=int(X.sum()),
                    iterations=its,
                    status="ok",
                )
            except Exception as exc:
                log.warning("trial %d ratio=%s %s failed: %s", trial, ratio, method, exc)
                row["status"] = f"error: {exc}"
            row["seconds"] = time.perf_counter() - t0
            rows.append(row)
    return rows


def _grn_trial(cfg: ExperimentConfig, trial: int) -> list[dict]:
    P = cfg.params
    rng = trial_rng(cfg.seed, trial)
    N, k = int(P["genes"]), int(P["degree"])
    data, network = gen.gen_grn_series(N, int(P["time_points"]), k, float(P["noise_fraction"]), rng)
    truth = network != 0
    obj = GrnObjective(data)
    structure = gen.grn_structure(N, k)
    rows = []
    for method in P["methods"]:
        row = dict(trial=trial, point=float(P["noise_fraction"]), method=method)
        t0 = time.perf_counter()
        try:
            if method == "tvcs":
                trace = solve(obj, structure, cfg.solver_config(cfg.seed))
                w, its = trace.w, trace.iterations
            elif method == "unconstrained":
                w, its = obj.subspace_minimize(np.ones(obj.dimension)), 0
            elif method == "thresholded":
                # least squares cut down to the degree budgets
                w = _post_project(obj.subspace_minimize(np.ones(obj.dimension)), structure,
                                  cfg.projection_config())
                its = 0
            else:
                raise ValueError(f"unknown method {method!r}")
            counts, rep = metrics.confusion_and_metrics(weights_to_matrix(w, N), truth)
            row.update({k_: v for k_, v in rep.to_dict().items()
                        if k_ in ("SN", "SP", "ACC", "F_measure", "MCC", "AUC")})
            row.update(TP=counts.TP, FP=counts.FP, TN=counts.TN, FN=counts.FN,
                       iterations=its, status="ok")
        except Exception as exc:
            log.warning("trial %d %s failed: %s", trial, method, exc)
            row["status"] = f"error: {exc}"
        row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    return rows


_TRIALS = {"regression": _regression_trial, "classification": _regression_trial,
           "crowd": _crowd_trial, "grn": _grn_trial}


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and standard error of every numeric column per ``(point, method)``."""
    groups = defaultdict(list)
    order = []
    for r in rows:
        key = (r["point"], r["method"])
        if key not in groups:
            order.append(key)
        groups[key].append(r)
    out = []
    skip = {"trial", "point"}
    for key in sorted(order, key=lambda k: (k[0], order.index(k))):
        rs = groups[key]
        ok = [r for r in rs if r.get("status") == "ok"]
        rec = dict(point=key[0], method=key[1], trials=len(rs), ok=len(ok))
        cols = [c for c in (ok[0] if ok else {}) if c not in skip and c not in ("method", "status")]
        for c in cols:
            vals = np.array([float(r[c]) for r in ok if r.get(c) is not None], dtype=float)
            if vals.size == 0:
                continue
            rec[f"{c}_mean"] = float(vals.mean())
            rec[f"{c}_se"] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out.append(rec)
    return out


def run_experiment(config: ExperimentConfig | dict, threads: int = 1) -> ExperimentResult:
    """Run every trial and aggregate.

    A failing method inside a trial is recorded with ``status`` set to the
    error message; other trials and methods still run.
    """
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    fn = _TRIALS[config.kind]
    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda t: fn(config, t), range(config.trials)))
    else:
        parts = [fn(config, t) for t in range(config.trials)]
    rows = [r for part in parts for r in part]
    return ExperimentResult(config, rows, aggregate(rows), time.perf_counter() - t0)
