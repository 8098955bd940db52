"""Command-line entry point.

Subcommands mirror the pipeline stages: gen-demos, mine, train,
decompose, plan, bench, validate.  Options can come from a JSON config
file (--config) and are overridden by explicit flags.  Exit codes:
0 success, 2 solved only after falling back, 3 unsolved, 64 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from . import bench as bench_mod
from . import importance as importance_mod
from . import mining as mining_mod
from . import scene as scene_mod
from .decompose import generate_subproblems, save_subproblems
from .pddl import parse_problem
from .pipeline import PipelineConfig, PipelineError, make_predictor, run_pipeline, validate_global
from .solver import SolverConfig, generate_demos, register_domain
from .tasks import TASK_NAMES, gen_instance, make_task

EX_USAGE = 64
EX_FELL_BACK = 2
EX_UNSOLVED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EX_USAGE)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise SystemExit(EX_USAGE)
    return cfg


def _opt(args, cfg: dict, name: str, default):
    """Flag beats config file beats default."""
    val = getattr(args, name.replace("-", "_"), None)
    if val is not None:
        return val
    if name in cfg:
        return cfg[name]
    return default


def _emit(args, payload: dict, text: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, sort_keys=True))
    elif text:
        print(text)


def _task_or_die(name: str):
    try:
        return make_task(name)
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        raise SystemExit(EX_USAGE)


def _load_instance(args, task):
    if getattr(args, "problem", None):
        with open(args.problem) as fh:
            problem = parse_problem(fh.read(), task.domain)
        return problem, task.world
    seed = getattr(args, "instance_seed", None)
    if seed is None:
        sys.stderr.write("error: need --problem FILE or --instance-seed N\n")
        raise SystemExit(EX_USAGE)
    return gen_instance(task, seed)


def cmd_gen_demos(args) -> int:
    cfg = _load_config(args.config)
    task = _task_or_die(_opt(args, cfg, "task", "block6"))
    n = int(_opt(args, cfg, "n", 100))
    seed = int(_opt(args, cfg, "seed", 0))
    t0 = time.monotonic()
    demos = generate_demos(task, n, seed)
    scene_mod.save_demos(demos, args.out)
    dt = time.monotonic() - t0
    _emit(args, {"demos": len(demos), "out": args.out, "seconds": dt},
          f"wrote {len(demos)} demos to {args.out} ({dt:.1f}s)")
    return 0


def cmd_mine(args) -> int:
    cfg = _load_config(args.config)
    task = _task_or_die(_opt(args, cfg, "task", "block6"))
    min_support = float(_opt(args, cfg, "min-support", 0.9))
    if not 0.0 < min_support <= 1.0:
        sys.stderr.write("error: --min-support must lie in (0, 1]\n")
        return EX_USAGE
    demos = scene_mod.load_demos(args.demos, task.domain.predicate_kinds)
    db = mining_mod.build_database(demos, task.domain)
    patterns = mining_mod.prefixspan(db, min_support)
    sequence = mining_mod.select_target_sequence(patterns, task.goal, db.table)
    profiles = importance_mod.transition_profiles(demos, sequence.subgoals, task.world)
    artifact = mining_mod.SubgoalArtifact(sequence, min_support, tuple(profiles))
    mining_mod.save_subgoals(artifact, args.out)
    _emit(args, {"subgoals": len(sequence), "support": sequence.support, "out": args.out},
          f"mined {len(sequence)} subgoals (support {sequence.support}) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    task = _task_or_die(_opt(args, cfg, "task", "block6"))
    seed = int(_opt(args, cfg, "seed", 0))
    epochs = int(_opt(args, cfg, "epochs", 1000))
    demos = scene_mod.load_demos(args.demos, task.domain.predicate_kinds)
    artifact = mining_mod.load_subgoals(args.subgoals)
    fspec = importance_mod.FeatureSpec.for_domain(task.domain, task.world)
    dataset = importance_mod.build_dataset(demos, artifact.sequence.subgoals, fspec)
    model, losses = importance_mod.train(dataset, fspec, seed=seed, epochs=epochs)
    importance_mod.save_model(model, args.out)
    _emit(args, {"samples": len(dataset), "final_loss": losses[-1], "out": args.out},
          f"trained on {len(dataset)} samples, final loss {losses[-1]:.4f} -> {args.out}")
    return 0


def cmd_decompose(args) -> int:
    cfg = _load_config(args.config)
    task = _task_or_die(_opt(args, cfg, "task", "block6"))
    gamma = float(_opt(args, cfg, "gamma", 0.8))
    seed = int(_opt(args, cfg, "seed", 0))
    register_domain(task.domain)
    problem, world = _load_instance(args, task)
    artifact = mining_mod.load_subgoals(args.subgoals)
    model = importance_mod.load_model(args.model)
    sps = generate_subproblems(
        problem.init, artifact.sequence.subgoals, make_predictor(model), gamma, seed,
        world, problem.objects, artifact.profiles, domain_name=task.domain.name,
    )
    save_subproblems(sps, args.out)
    _emit(args, {"subproblems": len(sps), "out": args.out},
          f"wrote {len(sps)} subproblems -> {args.out}")
    return 0


def cmd_plan(args) -> int:
    cfg = _load_config(args.config)
    task = _task_or_die(_opt(args, cfg, "task", "block6"))
    mode = _opt(args, cfg, "mode", "parallel")
    gamma = float(_opt(args, cfg, "gamma", 0.8))
    seed = int(_opt(args, cfg, "seed", 0))
    register_domain(task.domain)
    if getattr(args, "subproblem", None):
        return _replay_subproblems(args, task, seed)
    problem, world = _load_instance(args, task)
    subgoals = mining_mod.load_subgoals(args.subgoals) if args.subgoals else None
    model = importance_mod.load_model(args.model) if args.model else None
    try:
        pipe_cfg = PipelineConfig(mode=mode, gamma=gamma, seed=seed,
                                  gamma_square_retry=bool(_opt(args, cfg, "gamma-square-retry", False)))
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EX_USAGE
    try:
        result = run_pipeline(problem, world, task.domain, pipe_cfg, subgoals=subgoals, model=model)
    except PipelineError as exc:
        _emit(args, {"solved": False, "failures": list(exc.failures)}, f"unsolved: {exc}")
        return EX_UNSOLVED
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EX_USAGE
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result.plan.to_json(), fh, indent=1, sort_keys=True)
    _emit(
        args,
        {"solved": True, "mode_used": result.mode_used, "fell_back": result.fell_back,
         "horizon": result.plan.horizon, "out": args.out},
        f"solved via {result.mode_used} (fell_back={result.fell_back}), "
        f"{result.plan.horizon} actions -> {args.out or '(not saved)'}",
    )
    return EX_FELL_BACK if result.fell_back else 0


def _replay_subproblems(args, task, seed: int) -> int:
    """Solve subproblems from a decomposition dump directly."""
    from .decompose import load_subproblem
    from .solver import SolveError, SolverConfig, solve, validate

    with open(args.subproblem) as fh:
        dumps = json.load(fh)
    index = getattr(args, "index", None)
    if index is not None:
        dumps = [d for d in dumps if d["index"] == index]
        if not dumps:
            sys.stderr.write(f"error: no subproblem with index {index}\n")
            return EX_USAGE
    plans = []
    for data in dumps:
        sp = load_subproblem(data, task.world, task.domain)
        try:
            plan = solve(sp.problem(), sp.world, SolverConfig(seed=(seed * 1009 + sp.index) % (2**31)))
        except SolveError as exc:
            _emit(args, {"solved": False, "index": sp.index, "reason": str(exc)},
                  f"subproblem {sp.index} unsolved: {exc}")
            return EX_UNSOLVED
        if not validate(plan, sp.problem(), sp.world):
            _emit(args, {"solved": False, "index": sp.index}, f"subproblem {sp.index} plan invalid")
            return EX_UNSOLVED
        plans.append((sp.index, plan))
    payload = {
        "solved": True,
        "subplans": [
            {"index": i, **plan.to_json()} for i, plan in plans
        ],
    }
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
    horizons = [p.horizon for _, p in plans]
    _emit(args, payload, f"solved {len(plans)} subproblems, horizons {horizons}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    tasks = args.tasks.split(",") if args.tasks else list(TASK_NAMES)
    methods = list(bench_mod.METHODS) if args.methods in (None, "all") else args.methods.split(",")
    for t in tasks:
        _task_or_die(t)
    trials = int(_opt(args, cfg, "trials", 100))
    demo_seed = int(_opt(args, cfg, "demo-seed", 0))
    eval_seed = int(_opt(args, cfg, "eval-seed", 5))
    table, results = bench_mod.run_bench(tasks, methods, trials, demo_seed, eval_seed)
    paths = bench_mod.write_outputs(table, results, args.out_dir)
    _emit(args, {"rows": len(table.rows), **paths}, table.to_markdown())
    return 0


def cmd_validate(args) -> int:
    cfg = _load_config(args.config)
    task = _task_or_die(_opt(args, cfg, "task", "block6"))
    register_domain(task.domain)
    problem, world = _load_instance(args, task)
    with open(args.plan) as fh:
        data = json.load(fh)
    from .pddl import ground
    from .pipeline import GlobalPlan
    from .scene import Pose

    index = {}
    for ga in ground(task.domain, problem.objects):
        index[(ga.name, tuple(ga.args))] = ga
    skeleton, key_poses = [], []
    for step in data["skeleton"]:
        key = (step["action"], tuple(step["args"]))
        if key not in index:
            _emit(args, {"valid": False, "reason": f"unknown action {key}"}, f"invalid: unknown action {key}")
            return 1
        skeleton.append(index[key])
        key_poses.append(Pose.from_json(step["key_pose"]))
    gp = GlobalPlan(skeleton=tuple(skeleton), key_poses=tuple(key_poses))
    v = validate_global(gp, problem, world)
    _emit(args, {"valid": bool(v), "reason": v.reason, "failed_step": v.failed_step},
          "valid" if v else f"invalid at step {v.failed_step}: {v.reason}")
    return 0 if v else 1


def build_parser() -> _Parser:
    parser = _Parser(prog="tampkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("gen-demos", help="solve randomized instances and record traces")
    p.add_argument("--task", default=None, choices=TASK_NAMES)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("mine", help="mine the subgoal sequence from demos")
    p.add_argument("--task", default=None, choices=TASK_NAMES)
    p.add_argument("--demos", required=True)
    p.add_argument("--min-support", type=float, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", help="train the importance scorer")
    p.add_argument("--task", default=None, choices=TASK_NAMES)
    p.add_argument("--demos", required=True)
    p.add_argument("--subgoals", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decompose", help="emit the subproblem list for one instance")
    p.add_argument("--task", default=None, choices=TASK_NAMES)
    p.add_argument("--problem", help="problem file (alternative to --instance-seed)")
    p.add_argument("--instance-seed", type=int, default=None)
    p.add_argument("--subgoals", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("plan", help="plan one instance end to end")
    p.add_argument("--task", default=None, choices=TASK_NAMES)
    p.add_argument("--problem")
    p.add_argument("--instance-seed", type=int, default=None)
    p.add_argument("--subproblem", help="replay a decomposition dump instead of a full instance")
    p.add_argument("--index", type=int, default=None, help="solve only this dumped subproblem")
    p.add_argument("--mode", default=None,
                   choices=("monolithic", "subgoals-sequential", "subproblems-sequential", "parallel"))
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--subgoals")
    p.add_argument("--model")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="run the benchmark grid")
    p.add_argument("--tasks", help="comma-separated; default all")
    p.add_argument("--methods", help="comma-separated or 'all'")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--demo-seed", type=int, default=None)
    p.add_argument("--eval-seed", type=int, default=None)
    p.add_argument("--out-dir", default="bench_out")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="re-check a saved plan")
    p.add_argument("--task", default=None, choices=TASK_NAMES)
    p.add_argument("--problem")
    p.add_argument("--instance-seed", type=int, default=None)
    p.add_argument("--plan", required=True)
    common(p)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EX_USAGE
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EX_USAGE


if __name__ == "__main__":
    sys.exit(main())
