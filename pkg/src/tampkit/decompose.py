"""Parallelly solvable subproblem generation.

For each subgoal transition the current scene is split three ways:
important objects (the predictor says their state changes, or the
subgoal demands it) stay manipulable; every other movable is merged
into the world as a virtual base obstacle and vanishes from the
symbolic state; support atoms that rested an important object on a
now-merged one are rewritten onto the virtual base.  Important objects
not named by the subgoal get deterministic completions: if the
transition structurally forces them to move they are isolated on the
table at a pose drawn from an rng keyed by (seed, transition, object),
otherwise they are pinned where they stand.  Chaining the completed
goal of each subproblem with the untouched remainder of the scene
yields the next initial state without running any solver, which is
what makes the subproblems independently solvable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .geometry import (
    PlacementError,
    WorldModel,
    merge_into_base,
    region_slot_pose,
    region_stack_pose,
    sample_placement,
    stack_pose,
)
from .pddl import ProblemSpec
from .scene import STATIC, Atom, Pose, WorldState
from .solver import GRASP_PRED

Predictor = Callable[[WorldState, frozenset[Atom], float], frozenset[str]]


class DecompositionError(RuntimeError):
    def __init__(self, index: int, obj: str, message: str):
        super().__init__(f"subproblem {index}, object {obj!r}: {message}")
        self.index = index
        self.obj = obj


@dataclass(frozen=True)
class ObjectOutcome:
    """Deterministic end state of one important object: the real atoms it
    owns afterwards and (when it moves) its assigned pose."""

    atoms: frozenset[Atom]
    pose: Pose | None
    moved: bool


@dataclass(frozen=True)
class Subproblem:
    index: int
    domain: str
    init: WorldState
    goal_atoms: frozenset[Atom]
    goal_poses: Mapping[str, Pose]
    important: frozenset[str]
    merged: frozenset[str]
    world: WorldModel
    objects: Mapping[str, str]
    outcomes: Mapping[str, ObjectOutcome] = field(default_factory=dict, compare=False)
    fixture_outcomes: Mapping[str, frozenset[Atom]] = field(default_factory=dict, compare=False)

    def problem(self) -> ProblemSpec:
        return ProblemSpec(
            name=f"subproblem-{self.index}",
            domain=self.domain,
            objects=dict(self.objects),
            init=self.init,
            goal=self.goal_atoms,
            target_poses=dict(self.goal_poses),
        )

    @property
    def n_movables(self) -> int:
        return len(self.important)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "domain": self.domain,
            "init": [a.to_json() for a in sorted(self.init.atoms())],
            "goal": [a.to_json() for a in sorted(self.goal_atoms)],
            "poses": {o: self.init.poses[o].to_json() for o in sorted(self.init.objects)},
            "goal_poses": {o: p.to_json() for o, p in sorted(self.goal_poses.items())},
            "important": sorted(self.important),
            "merged": sorted(self.merged),
            "merged_poses": {o: p.to_json() for o, p, _ in self.world.obstacles},
            "objects": dict(sorted(self.objects.items())),
            "statics": sorted(
                a.predicate for a in self.init.atoms() if a.kind == STATIC
            ),
        }


def _stable_key(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=4).digest(), "big")


def _support_atom(state: WorldState, obj: str, support_preds: Mapping[str, str]) -> Atom | None:
    for a in state.binary:
        if a.is_fluent and a.predicate in support_preds and a.args[0] == obj:
            return a
    return None


def _table_pred(world: WorldModel) -> str | None:
    for p, kind in world.support_preds.items():
        if kind == "table":
            return p
    return None


def generate_subproblems(
    initial: WorldState,
    subgoals: Sequence[frozenset[Atom]],
    predictor: Predictor,
    gamma: float,
    seed: int,
    world: WorldModel,
    objects: Mapping[str, str],
    profiles: Sequence[Mapping] = (),
    domain_name: str = "",
) -> list[Subproblem]:
    """Emit all subproblems up front; no solver is consulted.

    ``predictor`` maps (scene, subgoal atoms, gamma) to the predicted
    important set; structurally forced movers the predictor missed are
    promoted to important so the subproblem stays solvable.
    """
    if not subgoals:
        raise ValueError("need at least one subgoal")
    current = initial
    out: list[Subproblem] = []
    arm = world.arm_obj
    arm_atoms = frozenset(a for a in initial.unary.get(arm, frozenset()) if a.is_fluent)

    for z, subgoal in enumerate(subgoals, start=1):
        profile = profiles[z - 1] if z - 1 < len(profiles) else {}
        sp, current = _build_subproblem(
            z, current, subgoal, predictor, gamma, seed, world, objects, profile,
            arm, arm_atoms, domain_name,
        )
        out.append(sp)
    return out


def _build_subproblem(
    z: int,
    current: WorldState,
    subgoal: frozenset[Atom],
    predictor: Predictor,
    gamma: float,
    seed: int,
    world: WorldModel,
    objects: Mapping[str, str],
    profile: Mapping,
    arm: str,
    arm_atoms: frozenset[Atom],
    domain_name: str,
) -> tuple[Subproblem, WorldState]:
    movables = current.movables
    support_preds = world.support_preds
    stack_preds = {p for p, k in support_preds.items() if k == "stack"}
    table_pred = _table_pred(world)
    atoms_now = current.atoms()

    predicted = frozenset(predictor(current, subgoal, gamma))
    unsat_named: set[str] = set()
    for a in subgoal:
        if a not in atoms_now:
            unsat_named.update(a.args)
    named = {arg for a in subgoal for arg in a.args}

    held = {
        o for o in movables if Atom(GRASP_PRED, (o,)) in current.unary.get(o, frozenset())
    }
    important = (set(predicted) | unsat_named | held) & set(current.objects)
    important_movables = set(important) & movables

    # Structurally forced movers: named objects whose goal support differs,
    # everything stacked above them, and whatever occupies a receiving
    # surface or a surface the subgoal wants clear.
    cur_support = {o: _support_atom(current, o, support_preds) for o in movables}

    def on_top_of(base: str) -> list[str]:
        return [
            o
            for o in movables
            if cur_support.get(o) is not None
            and cur_support[o].predicate in stack_preds
            and cur_support[o].args[1] == base
        ]

    movers: set[str] = set(held)
    goal_support: dict[str, Atom] = {}
    for a in subgoal:
        if a.arity == 2 and a.predicate in support_preds and a.args[0] in movables:
            goal_support[a.args[0]] = a
    for x, ga in goal_support.items():
        if cur_support.get(x) != ga:
            movers.add(x)
        if ga.predicate in stack_preds:
            for w in on_top_of(ga.args[1]):
                if w != x:
                    movers.add(w)
    if world.clear_pred:
        for a in subgoal:
            if a.predicate == world.clear_pred and a not in atoms_now:
                movers.update(on_top_of(a.args[0]))
    changed = True
    while changed:
        changed = False
        for o in movables:
            sup = cur_support.get(o)
            if o not in movers and sup is not None and sup.predicate in stack_preds and sup.args[1] in movers:
                movers.add(o)
                changed = True
    movers &= movables
    important_movables |= movers  # predictor misses must not break solvability
    for x in sorted(movers):
        sup = cur_support.get(x)
        if sup is not None and sup.args[1] in movables:
            # Leaving a support changes the support's own atoms, and a
            # merged support under a departing object would corrupt the
            # rewritten state.
            important_movables.add(sup.args[1])
    merged = movables - important_movables

    # Universe: important movables, all fixtures, plus context objects
    # linked through static relations (one hop).  Context objects stay
    # merged geometrically but keep their atoms: preconditions such as a
    # cooking-order dependency on the previous ingredient must remain
    # checkable inside the subproblem.
    universe = set(important_movables) | current.fixtures
    for a in atoms_now:
        if a.kind == STATIC and a.args[0] in important_movables:
            universe.update(a.args)
    context = universe & merged

    def rewrite(a: Atom) -> Atom | None:
        if a.arity == 2 and a.predicate in stack_preds and a.args[1] in merged and a.args[1] not in context:
            if table_pred is None:
                return None
            return Atom(table_pred, (a.args[0], world.table_obj))
        return a

    merged_poses = {o: current.poses[o] for o in merged}
    sub_world = merge_into_base(world, merged, merged_poses, held=frozenset(held))

    # Goal atoms visible to the solver: subgoal atoms owned by important
    # objects (support onto merged objects lands on the virtual base),
    # plus completions computed below.
    goal_atoms: set[Atom] = set()
    for a in sorted(subgoal):
        if a.args[0] in important_movables:
            ra = rewrite(a)
            if ra is not None:
                goal_atoms.add(ra)

    # Deterministic outcomes and assigned poses.
    outcomes: dict[str, ObjectOutcome] = {}
    goal_poses: dict[str, Pose] = {}
    support_profile: Mapping[str, str] = profile.get("support_kind", {})

    def footprint_boxes(skip: str) -> list:
        boxes = []
        for o in sorted(important_movables):
            if o == skip:
                continue
            pose = goal_poses.get(o, current.poses[o])
            boxes.append((o, pose, world.footprint(o)))
        return boxes

    def occupancy(region: str) -> int:
        n = 0
        for o in movables:
            sup = cur_support.get(o)
            if sup is not None and sup.args[1] == region and support_preds.get(sup.predicate) in ("region", "ladder"):
                n += 1
        return n

    resolving: set[str] = set()

    def resolve_pose(x: str) -> Pose:
        if x in goal_poses:
            return goal_poses[x]
        if x not in important_movables:
            return current.poses[x]
        if x in resolving:
            raise DecompositionError(z, x, "cyclic goal support")
        resolving.add(x)
        ga = goal_support.get(x)
        if ga is None or cur_support.get(x) == ga:
            pose = current.poses[x]
            if x in movers and ga is None:
                pose = _isolation_pose(x)
        else:
            kind = support_preds[ga.predicate]
            target = ga.args[1]
            if kind == "stack":
                base_pose = resolve_pose(target)
                pose = stack_pose(base_pose, world.footprint(target), world.footprint(x))
            elif kind == "table":
                pose = _sample_table(x)
            elif kind == "region":
                pose = region_slot_pose(world.regions[target], world.footprint(x), occupancy(target))
            else:  # ladder
                pose = region_stack_pose(world.regions[target], world.footprint(x), occupancy(target))
        resolving.discard(x)
        goal_poses[x] = pose
        return pose

    def _sample_table(x: str) -> Pose:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), z, _stable_key(x)]))
        try:
            return sample_placement(x, sub_world, rng, extra=footprint_boxes(x))
        except PlacementError as exc:
            raise DecompositionError(z, x, str(exc)) from exc

    def _isolation_pose(x: str) -> Pose:
        kind = support_profile.get(x, "table")
        if table_pred is not None and (kind == table_pred or support_preds.get(kind) in (None, "table")):
            return _sample_table(x)
        return current.poses[x]

    for x in sorted(important_movables, key=lambda o: (_depth_in_goal(o, goal_support), o)):
        resolve_pose(x)

    for x in sorted(important_movables):
        own_goal = {a for a in subgoal if a.args[0] == x}
        if x in goal_support:
            real_atoms = frozenset(own_goal)
            moved = cur_support.get(x) != goal_support[x]
        elif x in movers:
            # Isolated as its own subgraph on the base.
            if table_pred is None:
                raise DecompositionError(z, x, "no table support predicate to isolate onto")
            iso = Atom(table_pred, (x, world.table_obj))
            keep_unary = frozenset(
                a for a in current.unary.get(x, frozenset()) if a.is_fluent and a.predicate != GRASP_PRED
            )
            real_atoms = frozenset({iso}) | keep_unary | frozenset(own_goal)
            goal_atoms.add(iso)
            if world.clear_pred:
                goal_atoms.add(Atom(world.clear_pred, (x,)))
            moved = True
        else:
            # Pinned: keep the current support and unary state.
            sup = cur_support.get(x)
            keep_unary = frozenset(a for a in current.unary.get(x, frozenset()) if a.is_fluent)
            real_atoms = (frozenset({sup}) if sup else frozenset()) | keep_unary | frozenset(own_goal)
            if sup is not None:
                pinned = rewrite(sup)
                if pinned is not None:
                    goal_atoms.add(pinned)
            moved = False
        outcomes[x] = ObjectOutcome(real_atoms, goal_poses.get(x), moved)

    fixture_outcomes: dict[str, frozenset[Atom]] = {arm: arm_atoms}
    unary_profile: Mapping[str, frozenset[str]] = profile.get("unary_state", {})
    for fx in sorted(set(important) & current.fixtures):
        if fx == arm:
            continue
        preds = unary_profile.get(fx)
        if preds is not None:
            fixture_outcomes[fx] = frozenset(Atom(p, (fx,)) for p in sorted(preds))
            goal_atoms.update(fixture_outcomes[fx])

    sub_init, sub_objects = _restrict(current, universe, merged, rewrite, objects)
    sp = Subproblem(
        index=z,
        domain=domain_name,
        init=sub_init,
        goal_atoms=frozenset(goal_atoms),
        goal_poses=goal_poses,
        important=frozenset(important_movables),
        merged=frozenset(merged),
        world=sub_world,
        objects=sub_objects,
        outcomes=outcomes,
        fixture_outcomes=fixture_outcomes,
    )
    return sp, chain_states(sp, current, world)


def _depth_in_goal(obj: str, goal_support: Mapping[str, Atom]) -> int:
    """Stack depth in the goal configuration; supports resolve bottom-up."""
    depth = 0
    seen = set()
    cur = obj
    while cur in goal_support and cur not in seen:
        seen.add(cur)
        cur = goal_support[cur].args[1]
        depth += 1
    return -depth  # deeper targets resolve first when sorted ascending


def _restrict(
    current: WorldState,
    universe: set[str],
    merged: frozenset[str] | set[str],
    rewrite,
    objects: Mapping[str, str],
) -> tuple[WorldState, dict[str, str]]:
    hidden = set(merged) - universe  # merged objects that are not context
    atoms: list[Atom] = []
    for a in sorted(current.atoms()):
        if a.args[0] not in universe:
            continue
        if any(arg in hidden for arg in a.args):
            ra = rewrite(a)
            if ra is None or any(arg in hidden for arg in ra.args):
                continue
            atoms.append(ra)
        elif all(arg in universe for arg in a.args):
            atoms.append(a)
    poses = {o: current.poses[o] for o in universe}
    fixtures = current.fixtures & universe
    state = WorldState.from_atoms(universe, atoms, poses, fixtures)
    return state, {o: objects[o] for o in sorted(universe)}


def chain_states(sp: Subproblem, prev: WorldState, world: WorldModel) -> WorldState:
    """Deterministic full successor state: outcomes for important objects,
    untouched atoms for everything else, derived predicates recomputed."""
    atoms: list[Atom] = []
    poses = dict(prev.poses)
    clear_pred = world.clear_pred
    for a in sorted(prev.atoms()):
        owner = a.args[0]
        if a.kind == STATIC:
            atoms.append(a)
            continue
        if clear_pred and a.predicate == clear_pred:
            continue  # re-derived below
        if owner in sp.outcomes or owner in sp.fixture_outcomes:
            continue
        atoms.append(a)
    for obj, outcome in sorted(sp.outcomes.items()):
        for a in sorted(outcome.atoms):
            if not (clear_pred and a.predicate == clear_pred):
                atoms.append(a)
        if outcome.pose is not None:
            poses[obj] = outcome.pose
    for fx, fx_atoms in sorted(sp.fixture_outcomes.items()):
        atoms.extend(sorted(fx_atoms))

    if clear_pred:
        stack_preds = {p for p, k in world.support_preds.items() if k == "stack"}
        covered = {a.args[1] for a in atoms if a.arity == 2 and a.predicate in stack_preds}
        grasped = {a.args[0] for a in atoms if a.predicate == GRASP_PRED}
        for o in sorted(prev.movables):
            if o not in covered and o not in grasped:
                atoms.append(Atom(clear_pred, (o,)))
    return WorldState.from_atoms(prev.objects, atoms, poses, prev.fixtures)


def save_subproblems(subproblems: Sequence[Subproblem], path: str) -> None:
    with open(path, "w") as fh:
        json.dump([sp.to_json() for sp in subproblems], fh, indent=1, sort_keys=True)


def load_subproblem(data: Mapping, base_world: WorldModel, domain) -> Subproblem:
    """Rebuild a dumped subproblem well enough to solve and validate it.

    Chaining metadata (outcomes) is not persisted; replayed subproblems
    are standalone planning problems.
    """
    objects = dict(data["objects"])
    fixtures = {o for o, t in objects.items() if t not in domain.movable_types}
    poses = {o: Pose(*v) for o, v in data["poses"].items()}
    atoms = [
        Atom(p[0], tuple(p[1:]), domain.predicate_kind(p[0])) for p in data["init"]
    ]
    init = WorldState.from_atoms(objects, atoms, poses, fixtures)
    goal = frozenset(Atom(p[0], tuple(p[1:]), domain.predicate_kind(p[0])) for p in data["goal"])
    merged = frozenset(data["merged"])
    merged_poses = {o: Pose(*v) for o, v in data.get("merged_poses", {}).items() if o in merged}
    world = merge_into_base(base_world, merged_poses.keys(), merged_poses)
    return Subproblem(
        index=int(data["index"]),
        domain=data.get("domain", domain.name),
        init=init,
        goal_atoms=goal,
        goal_poses={o: Pose(*v) for o, v in data.get("goal_poses", {}).items()},
        important=frozenset(data["important"]),
        merged=merged,
        world=world,
        objects=objects,
    )
