"""Sample-then-plan TAMP solver.

A plan is found in two phases: grounded A* search over the symbolic
state space (goal-count heuristic by default), then a geometric binding
pass that walks the skeleton and assigns key poses (grasp targets,
sampled table placements, stack poses, region slots).  If binding fails,
the skeleton is banned and the search is rerun with a perturbed
expansion order, up to a retry budget.

The same binding simulation generates demonstration traces and backs
plan validation, but validation re-derives feasibility checks from the
world model instead of trusting recorded poses.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import (
    Footprint,
    PlacementError,
    WorldModel,
    collides,
    region_slot_pose,
    region_stack_pose,
    sample_placement,
    stack_pose,
)
from .pddl import ContractViolation, Domain, GroundAction, ProblemSpec, apply_action, applicable, ground
from .scene import Atom, Demonstration, Pose, WorldState

GRASP_PRED = "inhand"


@dataclass(frozen=True)
class SolverConfig:
    heuristic: str = "goal_count"  # goal_count | hadd | zero
    seed: int = 0
    max_expansions: int = 3_000_000
    timeout_s: float | None = None
    max_skeleton_retries: int = 20
    weight: float = 1.0


class SolveError(RuntimeError):
    """Search failure; ``kind`` is symbolic, binding, or timeout."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class Plan:
    """An executable plan: action skeleton plus per-step key poses."""

    skeleton: tuple[GroundAction, ...]
    key_poses: tuple[Pose, ...]
    stats: Mapping[str, float] = field(default_factory=dict, compare=False)
    trace: tuple[WorldState, ...] = field(default=(), compare=False)

    @property
    def horizon(self) -> int:
        return len(self.skeleton)

    def to_json(self) -> dict:
        return {
            "skeleton": [
                {"action": ga.name, "args": list(ga.args), "key_pose": kp.to_json()}
                for ga, kp in zip(self.skeleton, self.key_poses)
            ],
            "stats": {
                "horizon": self.horizon,
                "expansions": self.stats.get("expansions", 0),
                "time_ms": self.stats.get("time_ms", 0.0),
            },
        }


# ---------------------------------------------------------------------------
# Symbolic search over interned atoms.


class _Space:
    """Atom interning plus int-encoded ground actions for fast search."""

    def __init__(self, actions: Sequence[GroundAction], init: Iterable[Atom], goal: Iterable[Atom]):
        self._ids: dict[Atom, int] = {}
        self.actions = actions
        self.enc: list[tuple[frozenset[int], frozenset[int], frozenset[int], frozenset[int]]] = []
        for ga in actions:
            self.enc.append(
                (
                    frozenset(self._intern(a) for a in ga.pre_pos),
                    frozenset(self._intern(a) for a in ga.pre_neg),
                    frozenset(self._intern(a) for a in ga.add),
                    frozenset(self._intern(a) for a in ga.delete),
                )
            )
        self.init = frozenset(self._intern(a) for a in init)
        self.goal = frozenset(self._intern(a) for a in goal)

    def _intern(self, a: Atom) -> int:
        if a not in self._ids:
            self._ids[a] = len(self._ids)
        return self._ids[a]


def _hadd(state: frozenset[int], space: _Space) -> float:
    """Additive delete-relaxation heuristic."""
    cost: dict[int, float] = {a: 0.0 for a in state}
    changed = True
    while changed:
        changed = False
        for pre_pos, _, add, _ in space.enc:
            if not all(p in cost for p in pre_pos):
                continue
            c = 1.0 + sum(cost[p] for p in pre_pos)
            for a in add:
                if cost.get(a, float("inf")) > c:
                    cost[a] = c
                    changed = True
    total = 0.0
    for g in space.goal:
        if g not in cost:
            return float("inf")
        total += cost[g]
    return total


def _search(
    space: _Space,
    cfg: SolverConfig,
    order: Sequence[int],
    banned: set[tuple[int, ...]],
    deadline: float | None,
) -> tuple[list[int], int]:
    """A* over interned states; returns (action index path, expansions)."""
    goal = space.goal
    use_hadd = cfg.heuristic == "hadd"

    def h(state: frozenset[int]) -> float:
        if cfg.heuristic == "zero":
            return 0.0
        if use_hadd:
            return _hadd(state, space)
        return float(len(goal - state))

    counter = itertools.count()
    parents: dict[frozenset[int], tuple[frozenset[int], int] | None] = {space.init: None}
    g_best: dict[frozenset[int], int] = {space.init: 0}
    open_heap: list[tuple[float, int, int, frozenset[int]]] = []
    heapq.heappush(open_heap, (cfg.weight * h(space.init), 0, next(counter), space.init))
    expansions = 0
    closed: set[frozenset[int]] = set()

    while open_heap:
        # Ties on f prefer deeper nodes, then insertion order: detours
        # (uncovering buried objects) happen as late as possible, which
        # both speeds up plateaus and keeps demonstrations lazily ordered.
        _, neg_g, _, state = heapq.heappop(open_heap)
        g = -neg_g
        if state in closed:
            continue
        closed.add(state)
        if goal <= state:
            path: list[int] = []
            cur = state
            while parents[cur] is not None:
                prev, ai = parents[cur]  # type: ignore[misc]
                path.append(ai)
                cur = prev
            path.reverse()
            if tuple(path) not in banned:
                return path, expansions
            closed.discard(state)  # allow an alternative route to this goal state
        expansions += 1
        if expansions > cfg.max_expansions:
            raise SolveError("symbolic", f"expansion budget exhausted ({cfg.max_expansions})")
        if deadline is not None and expansions % 256 == 0 and time.monotonic() > deadline:
            raise SolveError("timeout", "search timeout")
        for ai in order:
            pre_pos, pre_neg, add, dele = space.enc[ai]
            if not pre_pos <= state or pre_neg & state:
                continue
            nxt = (state - dele) | add
            ng = g + 1
            if g_best.get(nxt, 1 << 30) <= ng:
                continue
            g_best[nxt] = ng
            parents[nxt] = (state, ai)
            heapq.heappush(open_heap, (ng + cfg.weight * h(nxt), -ng, next(counter), nxt))
    raise SolveError("symbolic", "search space exhausted without reaching the goal")


# ---------------------------------------------------------------------------
# Geometric binding.


class BindingError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class _GeomSim:
    """Tracks poses, the held object, and region occupancy along a skeleton."""

    def __init__(
        self,
        world: WorldModel,
        state: WorldState,
        rng: np.random.Generator | None,
        targets: Mapping[str, Pose] | None = None,
    ):
        self.world = world
        self.rng = rng
        self.targets = dict(targets or {})
        self.poses: dict[str, Pose] = dict(state.poses)
        self.held: str | None = None
        self.occupancy: dict[str, int] = {name: 0 for name in world.regions}
        region_preds = {
            p for p, kind in world.support_preds.items() if kind in ("region", "ladder")
        }
        for a in state.binary:
            if a.predicate in region_preds and a.args[1] in self.occupancy:
                self.occupancy[a.args[1]] += 1
        for o in state.movables:
            if Atom(GRASP_PRED, (o,)) in state.unary.get(o, frozenset()):
                self.held = o

    def _boxes(self, exclude: str) -> list[tuple[str, Pose, Footprint]]:
        out = []
        for o, fp in self.world.footprints.items():
            if o != exclude and o != self.held and o in self.poses:
                out.append((o, self.poses[o], fp))
        return out

    def step(self, index: int, ga: GroundAction) -> Pose:
        """Advance the simulation by one action; returns its key pose."""
        world = self.world
        support = None
        for a in ga.add:
            if a.predicate in world.support_preds:
                support = a
                break
        if support is not None:
            obj, target = support.args
            fp = world.footprint(obj)
            kind = world.support_preds[support.predicate]
            if kind == "table":
                if obj in self.targets:
                    pose = self.targets[obj]
                    if collides(pose, fp, world, extra=self._boxes(obj)):
                        raise BindingError(index, f"assigned pose for {obj} is blocked")
                elif self.rng is None:
                    raise BindingError(index, "placement sampling requires an rng")
                else:
                    try:
                        pose = sample_placement(obj, world, self.rng, extra=self._boxes(obj))
                    except PlacementError as exc:
                        raise BindingError(index, str(exc)) from exc
            elif kind == "stack":
                pose = stack_pose(self.poses[target], world.footprint(target), fp)
                if collides(pose, fp, world, extra=self._boxes(obj), ignore=frozenset({target})):
                    raise BindingError(index, f"stack pose for {obj} on {target} collides")
            elif kind == "region":
                pose = region_slot_pose(world.regions[target], fp, self.occupancy[target])
                self.occupancy[target] += 1
            elif kind == "ladder":
                pose = region_stack_pose(world.regions[target], fp, self.occupancy[target])
                self.occupancy[target] += 1
            else:
                raise BindingError(index, f"unknown support kind {kind!r}")
            self.poses[obj] = pose
            if self.held == obj:
                self.held = None
            return pose

        for a in ga.delete:
            if a.predicate in world.support_preds and world.support_preds[a.predicate] in ("region", "ladder"):
                if a.args[1] in self.occupancy:
                    self.occupancy[a.args[1]] = max(0, self.occupancy[a.args[1]] - 1)

        grasped = next((a.args[0] for a in ga.add if a.predicate == GRASP_PRED), None)
        if grasped is not None:
            grasp_target = self.poses[grasped]
            self.poses[grasped] = replace(grasp_target, z=grasp_target.z + world.lift)
            self.held = grasped
            return grasp_target

        waypoint = world.action_waypoints.get(ga.name)
        if waypoint is not None:
            region = world.regions[waypoint]
            dip = Pose(region.pose.x, region.pose.y, region.surface_z + world.lift, 0.0)
            if self.held is not None:
                self.poses[self.held] = dip
            return dip

        # Actions with no motion target of their own (open/close): hover
        # over the first argument's location.
        anchor = ga.args[0]
        if anchor in world.regions:
            region = world.regions[anchor]
            return Pose(region.pose.x, region.pose.y, region.surface_z + world.lift, 0.0)
        pose = self.poses.get(anchor, Pose(0.0, 0.0, world.lift, 0.0))
        return replace(pose, z=pose.z + world.lift)


def _bind(
    skeleton: Sequence[GroundAction],
    problem: ProblemSpec,
    world: WorldModel,
    rng: np.random.Generator,
) -> tuple[tuple[Pose, ...], tuple[WorldState, ...]]:
    """Assign key poses along the skeleton; also returns the state trace."""
    sim = _GeomSim(world, problem.init, rng, targets=problem.target_poses)
    state = problem.init
    trace = [state]
    key_poses = []
    for i, ga in enumerate(skeleton):
        key_poses.append(sim.step(i, ga))
        state = apply_action(state, ga)
        state = state.replace_atoms(state.atoms(), dict(sim.poses))
        trace.append(state)
    return tuple(key_poses), tuple(trace)


def solve(problem: ProblemSpec, world: WorldModel, cfg: SolverConfig = SolverConfig()) -> Plan:
    """Plan from the problem's init to its goal, with geometric bindings."""
    t0 = time.monotonic()
    deadline = t0 + cfg.timeout_s if cfg.timeout_s else None
    actions = ground_for(problem)
    space = _Space(actions, problem.init.atoms(), problem.goal)
    banned: set[tuple[int, ...]] = set()
    # Try goal-achieving actions first: ties then favor building over
    # rearranging, which keeps teardown lazy (blocks are uncovered just
    # before they are needed rather than all up front).
    order = sorted(
        range(len(actions)),
        key=lambda i: (0 if space.enc[i][2] & space.goal else 1, i),
    )
    total_expansions = 0
    last_binding: BindingError | None = None
    for retry in range(cfg.max_skeleton_retries):
        if retry > 0:
            np.random.default_rng(np.random.SeedSequence([cfg.seed, retry])).shuffle(order)
        path, expansions = _search(space, cfg, order, banned, deadline)
        total_expansions += expansions
        skeleton = tuple(actions[i] for i in path)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7, retry]))
        try:
            key_poses, trace = _bind(skeleton, problem, world, rng)
        except BindingError as exc:
            banned.add(tuple(path))
            last_binding = exc
            continue
        stats = {
            "expansions": total_expansions,
            "time_ms": (time.monotonic() - t0) * 1000.0,
            "retries": retry,
        }
        return Plan(skeleton=skeleton, key_poses=key_poses, stats=stats, trace=trace)
    raise SolveError(
        "binding",
        f"geometric binding failed for {cfg.max_skeleton_retries} skeletons: {last_binding}",
    )


def ground_for(problem: ProblemSpec, domain: Domain | None = None) -> list[GroundAction]:
    dom = domain or _domain_registry.get(problem.domain)
    if dom is None:
        raise SolveError("symbolic", f"domain {problem.domain!r} not registered")
    return ground(dom, problem.objects)


# solve() and worker processes need the Domain behind a ProblemSpec; a tiny
# registry avoids threading it through every call site.
_domain_registry: dict[str, Domain] = {}


def register_domain(domain: Domain) -> None:
    _domain_registry[domain.name] = domain


@dataclass(frozen=True)
class Validation:
    ok: bool
    reason: str | None = None
    failed_step: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def validate(plan: Plan, problem: ProblemSpec, world: WorldModel) -> Validation:
    """Replay the plan symbolically and geometrically from the problem init."""
    state = problem.init
    sim = _GeomSim(world, problem.init, None)
    for i, (ga, kp) in enumerate(zip(plan.skeleton, plan.key_poses)):
        if not applicable(state, ga):
            return Validation(False, f"precondition failure at {ga.signature}", i)
        support = next((a for a in ga.add if a.predicate in world.support_preds), None)
        if support is not None:
            obj, target = support.args
            fp = world.footprint(obj)
            kind = world.support_preds[support.predicate]
            if kind == "table":
                if not world.in_bounds(kp, fp):
                    return Validation(False, f"{obj} placed out of bounds", i)
                if collides(kp, fp, world, extra=sim._boxes(obj)):
                    return Validation(False, f"placement of {obj} collides", i)
            elif kind == "stack":
                expect = stack_pose(sim.poses[target], world.footprint(target), fp)
                if max(abs(expect.x - kp.x), abs(expect.y - kp.y), abs(expect.z - kp.z)) > 1e-6:
                    return Validation(False, f"stack pose of {obj} on {target} is off", i)
            elif kind in ("region", "ladder"):
                region = world.regions[target]
                if abs(kp.x - region.pose.x) > region.footprint.dx + 1e-9 or abs(
                    kp.y - region.pose.y
                ) > region.footprint.dy + 1e-9:
                    return Validation(False, f"{obj} outside region {target}", i)
            sim.poses[obj] = kp
            if sim.held == obj:
                sim.held = None
        else:
            grasped = next((a.args[0] for a in ga.add if a.predicate == GRASP_PRED), None)
            if grasped is not None:
                cur = sim.poses[grasped]
                if max(abs(cur.x - kp.x), abs(cur.y - kp.y), abs(cur.z - kp.z)) > 1e-6:
                    return Validation(False, f"grasp pose of {grasped} is stale", i)
                sim.poses[grasped] = replace(cur, z=cur.z + world.lift)
                sim.held = grasped
            for a in ga.delete:
                if a.predicate in world.support_preds and world.support_preds[a.predicate] in (
                    "region",
                    "ladder",
                ):
                    if a.args[1] in sim.occupancy:
                        sim.occupancy[a.args[1]] = max(0, sim.occupancy[a.args[1]] - 1)
        try:
            state = apply_action(state, ga)
        except ContractViolation as exc:
            return Validation(False, str(exc), i)
    if not state.holds(problem.goal):
        return Validation(False, "goal does not hold at the end of the plan", len(plan.skeleton))
    return Validation(True)


def generate_demos(
    task,
    n: int,
    seed: int,
    cfg: SolverConfig | None = None,
) -> list[Demonstration]:
    """Solve ``n`` randomized instances of ``task`` and record full traces.

    Each demo step is the world state after one executed action (the
    first step is the initial state).  Instances whose initial state
    already satisfies the goal are redrawn from follow-up seeds.
    """
    from .tasks import TaskSpec, gen_instance, make_task

    if n < 1:
        raise ValueError("need n >= 1 demonstrations")
    spec: TaskSpec = make_task(task) if isinstance(task, str) else task
    register_domain(spec.domain)
    demos: list[Demonstration] = []
    attempt = 0
    while len(demos) < n:
        instance_seed = (seed * 1_000_003 + attempt) % (2**31)
        attempt += 1
        problem, world = gen_instance(spec, instance_seed)
        run_cfg = replace(cfg or SolverConfig(), seed=instance_seed)
        try:
            plan = solve(problem, world, run_cfg)
        except SolveError as exc:
            raise SolveError(exc.kind, f"demo instance seed {instance_seed}: {exc}") from exc
        if plan.horizon == 0:
            continue
        demos.append(Demonstration(len(demos), plan.trace))
    return demos
