"""Command-line entry point: ``tvcs project | solve | experiment``.

Exit status is 0 on success, 2 for invalid input or configuration and 1
for runtime failures such as a projection that does not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .experiments.harness import ExperimentConfig, run_experiment
from .io import atomic_write_text, csv_text, to_json
from .objectives import (
    CrowdModel,
    CrowdObjective,
    GrnData,
    GrnObjective,
    LeastSquaresObjective,
    RegressionData,
    SquaredHingeObjective,
)
from .projection import EAGER_CONFIG, ProjectionConfig, ProjectionNonConvergence, project
from .solvers import VARIANTS, SolverConfig, solve
from .structure import StructureError, TvcsStructure, ensure_valid

log = logging.getLogger("tvcs")


class UsageError(Exception):
    """Bad input or configuration (exit status 2)."""


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    started: str
    finished: str = ""
    version: str = __version__
    outputs: list = field(default_factory=list)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _load_vector(path) -> np.ndarray:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
        if isinstance(data, dict):
            data = data.get("v")
        v = np.asarray(data, dtype=float)
    except json.JSONDecodeError:
        v = np.asarray(text.split(), dtype=float)
    if v.ndim != 1:
        raise UsageError(f"--in: expected a flat list of numbers in {path}")
    return v


def _load_structure(path) -> TvcsStructure:
    try:
        st = TvcsStructure.load(path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--structure: invalid JSON ({exc})") from exc
    ensure_valid(st)
    return st


def _diagnostics(exc: ProjectionNonConvergence, out_dir) -> Path:
    it = exc.iterate
    doc = {
        "error": str(exc),
        "iteration": it.iteration,
        "penalty": it.penalty_value,
        "x": it.x,
        "y": it.y,
        "penalty_history_tail": it.penalty_history[-100:],
    }
    base = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="tvcs-"))
    return atomic_write_text(base / "diagnostics.json", to_json(doc))


def cmd_project(args) -> int:
    v = _load_vector(args.inp)
    st = _load_structure(args.structure)
    if v.size != st.dimension:
        raise UsageError(f"--in: vector has {v.size} entries, structure has p={st.dimension}")
    try:
        # certificate tried every few iterations from the start
        cfg = replace(
            EAGER_CONFIG, max_iterations=args.max_iters, binary_tolerance=args.delta,
            gap_tolerance=args.eps, perturbation_scale=args.perturb, rng_seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        res = project(v, st, cfg)
    except ProjectionNonConvergence as exc:
        path = _diagnostics(exc, Path(args.out).parent if args.out else None)
        print(f"error: {exc}; diagnostics written to {path}", file=sys.stderr)
        return 1
    text = to_json(res.to_dict())
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _objective(args):
    kind = args.objective
    if args.data is None:
        raise UsageError("--data: required")
    if kind == "lsq":
        return LeastSquaresObjective(RegressionData.load(args.data))
    if kind == "hinge":
        return SquaredHingeObjective(RegressionData.load(args.data, classification=True))
    if kind == "grn":
        return GrnObjective(GrnData.load(args.data))
    model = CrowdModel.load(args.data, args.priors)
    return CrowdObjective(model, seed=args.seed)


def cmd_solve(args) -> int:
    st = _load_structure(args.structure)
    try:
        obj = _objective(args)
        if obj.dimension != st.dimension:
            raise UsageError(f"--structure: p={st.dimension} but the objective has {obj.dimension} variables")
        cfg = SolverConfig(variant=args.variant, step_size=args.gamma,
                           max_outer_iterations=args.iters, rng_seed=args.seed)
    except (ValueError, OSError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    started = _now()
    try:
        trace = solve(obj, st, cfg)
    except ProjectionNonConvergence as exc:
        path = _diagnostics(exc, args.out)
        print(f"error: {exc}; diagnostics written to {path}", file=sys.stderr)
        return 1
    rows = [dict(iteration=i, objective=f) for i, f in enumerate(trace.objective_values)]
    if not args.out:
        sys.stdout.write(to_json(trace.to_dict()))
        return 0
    out = Path(args.out)
    paths = [
        atomic_write_text(out / "trace.json", to_json(trace.to_dict())),
        atomic_write_text(out / "trace.csv", csv_text(rows, ["iteration", "objective"])),
    ]
    config = dict(objective=args.objective, data=str(args.data), structure=str(args.structure),
                  solver={k: v for k, v in asdict(cfg).items() if k != "projection"},
                  projection=asdict(cfg.projection))
    _write_manifest(out, "solve", config, args.seed, started, paths)
    return 0


def _write_manifest(out: Path, sub: str, config: dict, seed: int, started: str, paths) -> Path:
    man = RunManifest(sub, config, seed, started, _now(), outputs=[str(p) for p in paths])
    return atomic_write_text(out / "manifest.json", to_json(asdict(man)))


def cmd_experiment(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text()) if args.config else {}
        doc.setdefault("kind", args.kind)
        if doc["kind"] != args.kind:
            raise UsageError(f"--kind {args.kind} disagrees with config kind {doc['kind']!r}")
        cfg = ExperimentConfig.from_dict(doc)
    except (json.JSONDecodeError, ValueError, TypeError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    started = _now()
    result = run_experiment(cfg, threads=args.threads)
    out = Path(args.out)
    paths = [
        atomic_write_text(out / "trials.csv", csv_text(result.trials, _columns(result.trials))),
        atomic_write_text(out / "aggregate.csv", csv_text(result.aggregate, _columns(result.aggregate))),
    ]
    _write_manifest(out, "experiment", cfg.to_dict(), cfg.seed, started, paths)
    failed = sum(r.get("status") != "ok" for r in result.trials)
    if failed:
        log.warning("%d trial rows failed; see the status column", failed)
    return 0


def _columns(rows):
    cols = []
    for r in rows:
        for c in r:
            if c not in cols:
                cols.append(c)
    return cols


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvcs", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                    help="parallel experiment trials (default: all cores)")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="project a vector onto a structure")
    p.add_argument("--in", dest="inp", required=True, help="vector as JSON list or whitespace-separated text")
    p.add_argument("--structure", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=ProjectionConfig.max_iterations)
    p.add_argument("--delta", type=float, default=ProjectionConfig.binary_tolerance)
    p.add_argument("--eps", type=float, default=ProjectionConfig.gap_tolerance)
    p.add_argument("--perturb", type=float, default=ProjectionConfig.perturbation_scale)
    p.add_argument("--out", help="write the result here instead of stdout")
    p.set_defaults(func=cmd_project)

    s = sub.add_parser("solve", help="run IHT / GradMP on one objective")
    s.add_argument("--objective", choices=["lsq", "hinge", "grn", "crowd"], required=True)
    s.add_argument("--data", help="lsq/hinge: JSON or CSV samples; grn: series CSV; crowd: quality CSV")
    s.add_argument("--priors", help="crowd: JSON list of task priors")
    s.add_argument("--structure", required=True)
    s.add_argument("--variant", choices=VARIANTS, default="iht")
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="directory for trace.json, trace.csv and manifest.json")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("experiment", help="run a seeded multi-trial experiment")
    e.add_argument("--kind", choices=["regression", "classification", "crowd", "grn"], required=True)
    e.add_argument("--config", help="JSON experiment config")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)
    return ap


def parse_and_dispatch(argv=None) -> int:
    level = os.environ.get("TVCS_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except StructureError as exc:
        print(f"error: invalid structure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
