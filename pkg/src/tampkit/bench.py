"""Benchmark harness: offline artifact preparation, seeded trials over
the four planning modes, and table emission.

Metrics follow the decomposition framing: ``horizon`` is actions per
subproblem for decomposed modes (per leg for subgoal chasing, total
plan length for monolithic), ``objects`` is manipulable objects per
subproblem (the full movable count when nothing is reduced), ``time``
is the wall time of the planning call.  Means use the population
standard deviation.  Only relative times are meaningful; absolute
numbers are machine-specific.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .importance import FeatureSpec, GnnModel, build_dataset, train, transition_profiles
from .mining import SubgoalArtifact, build_database, prefixspan, select_target_sequence
from .pipeline import PipelineConfig, PipelineError, run_pipeline, validate_global
from .solver import SolverConfig, generate_demos, register_domain
from .tasks import TaskSpec, gen_instance, make_task

METHODS = ("monolithic", "subgoals", "subproblems", "parallel")
_METHOD_MODE = {
    "monolithic": "monolithic",
    "subgoals": "subgoals-sequential",
    "subproblems": "subproblems-sequential",
    "parallel": "parallel",
}


@dataclass(frozen=True)
class TrialResult:
    task: str
    method: str
    seed: int
    horizons: tuple[int, ...]
    object_counts: tuple[int, ...]
    wall_ms: float
    success: bool


@dataclass(frozen=True)
class BenchRow:
    task: str
    method: str
    metric: str
    mean: float
    std: float
    trials: int
    success_rate: float


@dataclass(frozen=True)
class BenchTable:
    rows: tuple[BenchRow, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["task", "method", "metric", "mean", "std", "trials", "success_rate"])
        for r in self.rows:
            writer.writerow(
                [r.task, r.method, r.metric, f"{r.mean:.6f}", f"{r.std:.6f}", r.trials, f"{r.success_rate:.4f}"]
            )
        return buf.getvalue()

    def to_markdown(self) -> str:
        """Three tables (horizon, objects, time), tasks as rows, methods
        as columns, mirroring the usual comparison layout."""
        by: dict[tuple[str, str, str], BenchRow] = {
            (r.task, r.method, r.metric): r for r in self.rows
        }
        tasks = sorted({r.task for r in self.rows})
        methods = [m for m in METHODS if any(r.method == m for r in self.rows)]
        out = []
        titles = {"horizon": "Planning horizon", "objects": "Objects per subproblem", "time": "Planning time [s]"}
        for metric in ("horizon", "objects", "time"):
            out.append(f"### {titles[metric]}")
            out.append("| task | " + " | ".join(methods) + " |")
            out.append("|---" * (len(methods) + 1) + "|")
            for t in tasks:
                cells = []
                for m in methods:
                    r = by.get((t, m, metric))
                    if r is None:
                        cells.append("-")
                    else:
                        mean, std = (r.mean, r.std)
                        if metric == "time":
                            mean, std = mean / 1000.0, std / 1000.0
                        cells.append(f"{mean:.2f} +- {std:.2f}")
                out.append(f"| {t} | " + " | ".join(cells) + " |")
            out.append("")
        return "\n".join(out)


@dataclass
class TaskArtifacts:
    """Everything the online phase needs, mined/trained offline."""

    task: TaskSpec
    subgoals: SubgoalArtifact
    model: GnnModel


def prepare_artifacts(
    task: TaskSpec | str,
    n_demos: int = 100,
    demo_seed: int = 0,
    min_support: float = 0.9,
    train_seed: int = 0,
    solver: SolverConfig | None = None,
) -> TaskArtifacts:
    """Offline phase: demos -> mined subgoals (+ completion profiles) ->
    trained importance model."""
    spec = make_task(task) if isinstance(task, str) else task
    register_domain(spec.domain)
    demos = generate_demos(spec, n_demos, demo_seed, solver)
    db = build_database(demos, spec.domain)
    patterns = prefixspan(db, min_support)
    sequence = select_target_sequence(patterns, spec.goal, db.table)
    profiles = transition_profiles(demos, sequence.subgoals, spec.world)
    artifact = SubgoalArtifact(sequence, min_support, tuple(profiles))
    fspec = FeatureSpec.for_domain(spec.domain, spec.world)
    dataset = build_dataset(demos, sequence.subgoals, fspec)
    model, _ = train(dataset, fspec, seed=train_seed)
    return TaskArtifacts(spec, artifact, model)


def run_trial(
    artifacts: TaskArtifacts,
    method: str,
    seed: int,
    cfg: PipelineConfig | None = None,
) -> TrialResult:
    task = artifacts.task
    problem, world = gen_instance(task, seed)
    base = cfg or PipelineConfig()
    run_cfg = replace(base, mode=_METHOD_MODE[method], seed=seed)
    n_movables = len(task.movables)
    t0 = time.monotonic()
    try:
        result = run_pipeline(
            problem, world, task.domain, run_cfg,
            subgoals=artifacts.subgoals, model=artifacts.model,
        )
    except PipelineError:
        return TrialResult(task.name, method, seed, (), (), (time.monotonic() - t0) * 1000.0, False)
    wall_ms = (time.monotonic() - t0) * 1000.0
    ok = bool(validate_global(result.plan, problem, world))
    horizons = tuple(result.plan.stats.get("horizons", ()))
    if method in ("subproblems", "parallel") and not result.fell_back:
        counts = tuple(result.plan.stats.get("subproblem_movables", ()))
    else:
        counts = tuple(n_movables for _ in horizons)
    return TrialResult(task.name, method, seed, horizons, counts, wall_ms, ok)


def _eval_seed_stream(eval_seed: int, trials: int) -> list[int]:
    return [(eval_seed * 1_000_003 + i) % (2**31) for i in range(trials)]


def run_bench(
    tasks: Sequence[str],
    methods: Sequence[str],
    trials: int = 100,
    demo_seed: int = 0,
    eval_seed: int = 5,
    cfg: PipelineConfig | None = None,
    artifacts_cache: Mapping[str, TaskArtifacts] | None = None,
) -> tuple[BenchTable, list[TrialResult]]:
    """Run the comparison grid and aggregate mean/std per metric.

    Trial failures are recorded (success_rate), never fatal.
    """
    rows: list[BenchRow] = []
    results: list[TrialResult] = []
    for tname in tasks:
        artifacts = (artifacts_cache or {}).get(tname) or prepare_artifacts(
            tname, demo_seed=demo_seed
        )
        for method in methods:
            if method not in METHODS:
                raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
            trial_results = [
                run_trial(artifacts, method, s, cfg)
                for s in _eval_seed_stream(eval_seed, trials)
            ]
            results.extend(trial_results)
            rows.extend(_aggregate(tname, method, trial_results))
    return BenchTable(tuple(rows)), results


def _aggregate(task: str, method: str, trial_results: Sequence[TrialResult]) -> list[BenchRow]:
    ok = [t for t in trial_results if t.success]
    rate = len(ok) / len(trial_results) if trial_results else 0.0
    horizons = np.array([h for t in ok for h in t.horizons], dtype=float)
    counts = np.array([c for t in ok for c in t.object_counts], dtype=float)
    times = np.array([t.wall_ms for t in ok], dtype=float)
    rows = []
    for metric, data in (("horizon", horizons), ("objects", counts), ("time", times)):
        if len(data):
            mean, std = float(data.mean()), float(data.std())
        else:
            mean = std = float("nan")
        rows.append(BenchRow(task, method, metric, mean, std, len(trial_results), rate))
    return rows


def write_outputs(table: BenchTable, results: Iterable[TrialResult], out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "bench.csv")
    md_path = os.path.join(out_dir, "bench.md")
    trials_path = os.path.join(out_dir, "trials.json")
    with open(csv_path, "w") as fh:
        fh.write(table.to_csv())
    with open(md_path, "w") as fh:
        fh.write(table.to_markdown())
    with open(trials_path, "w") as fh:
        json.dump(
            [
                {
                    "task": t.task,
                    "method": t.method,
                    "seed": t.seed,
                    "horizons": list(t.horizons),
                    "object_counts": list(t.object_counts),
                    "wall_ms": t.wall_ms,
                    "success": t.success,
                }
                for t in results
            ],
            fh,
            indent=1,
        )
    return {"csv": csv_path, "markdown": md_path, "trials": trials_path}
