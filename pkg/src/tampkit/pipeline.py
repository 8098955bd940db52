"""End-to-end planning: decomposition, concurrent subproblem solving,
fallbacks, and motion-level concatenation of the subplans.

Four modes: ``monolithic`` solves the whole problem in one search;
``subgoals-sequential`` chases each mined subgoal over the full object
set; ``subproblems-sequential`` solves the decomposed subproblems one
after another; ``parallel`` solves the same subproblems concurrently.
The last two share subproblem construction, so their skeletons are
identical for identical seeds.  When a subproblem fails, the run falls
back (optionally after one retry with a squared importance threshold)
to subgoal chasing and finally to a monolithic solve.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np

from .decompose import Subproblem, generate_subproblems
from .dmp import DmpModel, Trajectory, min_jerk, modulate_via, rollout, train_dmp
from .geometry import WorldModel
from .mining import SubgoalArtifact
from .pddl import Domain, GroundAction, ProblemSpec
from .importance import GnnModel, predict
from .scene import Atom, Pose
from .solver import Plan, SolveError, SolverConfig, register_domain, solve, validate

MODES = ("monolithic", "subgoals-sequential", "subproblems-sequential", "parallel")


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "parallel"
    gamma: float = 0.8
    min_support: float = 0.9
    demo_seed: int = 0
    eval_seed: int = 5
    seed: int = 0
    gamma_square_retry: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    max_workers: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.min_support <= 1.0:
            raise ValueError("min_support must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")


class PipelineError(RuntimeError):
    """All solve paths exhausted; carries the per-path failures."""

    def __init__(self, failures: Sequence[str]):
        super().__init__("; ".join(failures))
        self.failures = tuple(failures)


class ParallelFailure(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"subproblem {index} failed: {cause}")
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class GlobalPlan:
    skeleton: tuple[GroundAction, ...]
    key_poses: tuple[Pose, ...]
    trajectories: tuple[Trajectory, ...] = field(compare=False, default=())
    subplans: tuple[Plan, ...] = field(compare=False, default=())
    mode_used: str = "parallel"
    fell_back: bool = False
    stats: Mapping = field(default_factory=dict, compare=False)

    @property
    def horizon(self) -> int:
        return len(self.skeleton)

    def to_json(self) -> dict:
        return {
            "mode": self.mode_used,
            "fell_back": self.fell_back,
            "skeleton": [
                {"action": ga.name, "args": list(ga.args), "key_pose": kp.to_json()}
                for ga, kp in zip(self.skeleton, self.key_poses)
            ],
            "trajectories": [
                {"t": [round(float(t), 9) for t in tr.times.tolist()],
                 "q": [[round(float(v), 9) for v in row] for row in tr.positions.tolist()]}
                for tr in self.trajectories
            ],
            "stats": dict(self.stats),
        }


def _worker_count(n_tasks: int, cfg: PipelineConfig) -> int:
    cap = cfg.max_workers or int(os.environ.get("TAMPKIT_MAX_WORKERS", "0")) or (os.cpu_count() or 1)
    return max(1, min(n_tasks, cap))


def _subproblem_cfg(cfg: PipelineConfig, index: int) -> SolverConfig:
    return replace(cfg.solver, seed=(cfg.seed * 1009 + index) % (2**31))


def parallel_tamp(
    subproblems: Sequence[Subproblem],
    cfg: PipelineConfig,
) -> tuple[list[Plan], dict]:
    """Solve all subproblems concurrently; gather results in index order.

    The first failure cancels outstanding work and raises
    ParallelFailure with the failing index.
    """
    t0 = time.monotonic()
    if not subproblems:
        return [], {"wall_ms": 0.0, "solve_ms": []}
    workers = _worker_count(len(subproblems), cfg)
    futures = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for sp in subproblems:
            futures.append(pool.submit(solve, sp.problem(), sp.world, _subproblem_cfg(cfg, sp.index)))
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        failed = next((f for f in futures if f.done() and f.exception() is not None), None)
        if failed is not None:
            for f in pending:
                f.cancel()
            index = futures.index(failed) + 1
            raise ParallelFailure(index, failed.exception())  # type: ignore[arg-type]
        plans = [f.result() for f in futures]  # index order, not completion order
    wall = (time.monotonic() - t0) * 1000.0
    return plans, {"wall_ms": wall, "solve_ms": [p.stats.get("time_ms", 0.0) for p in plans]}


def solve_subproblems_sequentially(
    subproblems: Sequence[Subproblem],
    cfg: PipelineConfig,
) -> tuple[list[Plan], dict]:
    t0 = time.monotonic()
    plans = []
    for sp in subproblems:
        try:
            plans.append(solve(sp.problem(), sp.world, _subproblem_cfg(cfg, sp.index)))
        except SolveError as exc:
            raise ParallelFailure(sp.index, exc) from exc
    wall = (time.monotonic() - t0) * 1000.0
    return plans, {"wall_ms": wall, "solve_ms": [p.stats.get("time_ms", 0.0) for p in plans]}


class SequentialFailure(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"subgoal {index} unreachable: {cause}")
        self.index = index
        self.cause = cause


def sequential_tamp(
    problem: ProblemSpec,
    world: WorldModel,
    subgoals: Sequence[frozenset[Atom]],
    cfg: PipelineConfig,
) -> list[Plan]:
    """Reach each subgoal in turn over the full object set (no merging,
    no reduction); each leg starts from the previous leg's actual end."""
    current = problem.init
    plans = []
    for z, goal in enumerate(subgoals, start=1):
        leg = ProblemSpec(
            name=f"{problem.name}-leg{z}",
            domain=problem.domain,
            objects=dict(problem.objects),
            init=current,
            goal=frozenset(goal),
        )
        try:
            plan = solve(leg, world, _subproblem_cfg(cfg, z))
        except SolveError as exc:
            raise SequentialFailure(z, exc) from exc
        plans.append(plan)
        if plan.trace:
            current = plan.trace[-1]
    return plans


# ---------------------------------------------------------------------------
# Motion concatenation.


@lru_cache(maxsize=8)
def default_dmp_registry(domain_name: str, schemas: tuple[str, ...]) -> Mapping[str, DmpModel]:
    """One reach-style movement primitive per action schema, trained from
    a synthetic minimum-jerk demonstration."""
    registry = {}
    for name in schemas:
        demo = min_jerk([0.0, -0.3, 0.25, 0.0], [0.25, 0.15, 0.05, 0.0], duration=1.0)
        registry[name] = train_dmp(demo)
    return registry


def concatenate(
    subplans: Sequence[Plan],
    dmp_registry: Mapping[str, DmpModel],
    world: WorldModel,
    start_pose: Pose | None = None,
) -> GlobalPlan:
    """Append skeletons and generate one motion per action, each a DMP
    rollout from the previous end pose to the action's key pose through
    a pre-grasp via point above the target."""
    skeleton: list[GroundAction] = []
    key_poses: list[Pose] = []
    for plan in subplans:
        skeleton.extend(plan.skeleton)
        key_poses.extend(plan.key_poses)
    cursor = np.array(
        (start_pose or Pose(0.0, -0.45, 0.30, 0.0)).to_json(), dtype=float
    )
    trajectories: list[Trajectory] = []
    for ga, kp in zip(skeleton, key_poses):
        model = dmp_registry.get(ga.name)
        if model is None:
            raise KeyError(f"no movement primitive for action schema {ga.name!r}")
        target = np.array(kp.to_json(), dtype=float)
        via = target + np.array([0.0, 0.0, world.lift, 0.0])
        tr = modulate_via(model, via, 0.8, new_start=cursor, new_goal=target, duration=1.0)
        trajectories.append(tr)
        cursor = tr.positions[-1].copy()
    return GlobalPlan(
        skeleton=tuple(skeleton),
        key_poses=tuple(key_poses),
        trajectories=tuple(trajectories),
        subplans=tuple(subplans),
    )


# ---------------------------------------------------------------------------
# The full pipeline.


@dataclass(frozen=True)
class PipelineResult:
    plan: GlobalPlan
    mode_used: str
    fell_back: bool
    subproblems: tuple[Subproblem, ...] = ()

    @property
    def exit_code(self) -> int:
        return 2 if self.fell_back else 0


def make_predictor(model: GnnModel) -> Callable:
    return lambda state, subgoal, gamma: predict(model, state, subgoal, gamma)


def run_pipeline(
    problem: ProblemSpec,
    world: WorldModel,
    domain: Domain,
    cfg: PipelineConfig,
    subgoals: SubgoalArtifact | None = None,
    model: GnnModel | None = None,
    dmp_registry: Mapping[str, DmpModel] | None = None,
    fail_injector: Callable[[int], None] | None = None,
) -> PipelineResult:
    """Plan from the problem's initial scene to its goal.

    Fallback order in parallel mode: optional one-shot retry with the
    importance threshold squared, then subgoal chasing, then a
    monolithic solve.  ``fail_injector`` (tests only) is called with
    each subproblem index before solving and may raise to simulate
    failures.
    """
    register_domain(domain)
    t0 = time.monotonic()
    if dmp_registry is None:
        dmp_registry = default_dmp_registry(domain.name, tuple(sorted(domain.actions)))
    failures: list[str] = []
    mode = cfg.mode
    fell_back = False
    subproblem_list: tuple[Subproblem, ...] = ()

    def finish(subplans: Sequence[Plan], mode_used: str, extra_stats: dict) -> PipelineResult:
        gp = concatenate(subplans, dmp_registry, world)
        stats = {
            "total_ms": (time.monotonic() - t0) * 1000.0,
            "horizons": [p.horizon for p in subplans],
            **extra_stats,
        }
        gp = replace(gp, mode_used=mode_used, fell_back=fell_back, stats=stats)
        return PipelineResult(gp, mode_used, fell_back, subproblem_list)

    if mode == "monolithic":
        plan = solve(problem, world, replace(cfg.solver, seed=cfg.seed))
        return finish([plan], mode, {})

    if subgoals is None:
        raise ValueError(f"mode {mode!r} needs mined subgoals")

    if mode == "subgoals-sequential":
        plans = sequential_tamp(problem, world, subgoals.sequence.subgoals, cfg)
        return finish(plans, mode, {})

    if model is None:
        raise ValueError(f"mode {mode!r} needs a trained importance model")
    predictor = make_predictor(model)

    def decompose_with(gamma: float) -> tuple[Subproblem, ...]:
        return tuple(
            generate_subproblems(
                problem.init,
                subgoals.sequence.subgoals,
                predictor,
                gamma,
                cfg.seed,
                world,
                problem.objects,
                subgoals.profiles,
                domain_name=domain.name,
            )
        )

    def attempt(gamma: float) -> PipelineResult | None:
        nonlocal subproblem_list
        try:
            sps = decompose_with(gamma)
        except Exception as exc:  # decomposition infeasibility
            failures.append(f"decomposition(gamma={gamma:g}): {exc}")
            return None
        subproblem_list = sps
        if fail_injector is not None:
            wrapped = _inject(fail_injector, sps, cfg)
            runner = wrapped
        elif mode == "parallel":
            runner = lambda: parallel_tamp(sps, cfg)
        else:
            runner = lambda: solve_subproblems_sequentially(sps, cfg)
        try:
            plans, timing = runner()
        except ParallelFailure as exc:
            failures.append(f"subproblems(gamma={gamma:g}): {exc}")
            return None
        counts = [sp.n_movables for sp in sps]
        return finish(plans, mode, {"subproblem_movables": counts, **timing})

    result = attempt(cfg.gamma)
    if result is not None:
        return result
    if cfg.gamma_square_retry:
        result = attempt(cfg.gamma**2)
        if result is not None:
            return result

    fell_back = True
    try:
        plans = sequential_tamp(problem, world, subgoals.sequence.subgoals, cfg)
        return finish(plans, "subgoals-sequential", {})
    except SequentialFailure as exc:
        failures.append(str(exc))
    try:
        plan = solve(problem, world, replace(cfg.solver, seed=cfg.seed))
        return finish([plan], "monolithic", {})
    except SolveError as exc:
        failures.append(f"monolithic: {exc}")
    raise PipelineError(failures)


def _inject(fail_injector, sps, cfg):
    def run():
        for sp in sps:
            try:
                fail_injector(sp.index)
            except Exception as exc:
                raise ParallelFailure(sp.index, exc) from exc
        if cfg.mode == "parallel":
            return parallel_tamp(sps, cfg)
        return solve_subproblems_sequentially(sps, cfg)

    return run


def validate_global(
    result_plan: GlobalPlan,
    problem: ProblemSpec,
    world: WorldModel,
):
    """Replay the concatenated plan against the full, unreduced world."""
    flat = Plan(skeleton=result_plan.skeleton, key_poses=result_plan.key_poses)
    return validate(flat, problem, world)
