"""Benchmark task definitions and randomized instance generation.

Six tasks: block4/6/8 (stack all blocks into one fixed tower) and
cook3/4/5 (wash, cut, and cook every ingredient in a fixed order).
Instances share the task goal and differ only in the randomized
initial configuration, which is fully determined by the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Mapping

import numpy as np

from .geometry import (
    Footprint,
    Region,
    WorldModel,
    region_slot_pose,
    sample_placement,
    stack_pose,
)
from .pddl import Domain, ProblemSpec, parse_domain
from .scene import Atom, Pose, WorldState

BLOCK_TASKS = ("block4", "block6", "block8")
COOK_TASKS = ("cook3", "cook4", "cook5")
TASK_NAMES = BLOCK_TASKS + COOK_TASKS

_BLOCK_NAMES = ("a", "b", "c", "d", "e", "f", "g", "h")
_INGREDIENTS = ("green", "purple", "red", "pink", "yellow")

_TABLE = (-0.5, 0.5, -0.3, 0.3)
_BLOCK_FP = Footprint(0.025, 0.025, 0.025)
_INGREDIENT_FP = Footprint(0.02, 0.02, 0.02)
_ARM_POSE = Pose(0.0, -0.45, 0.30, 0.0)
_TABLE_POSE = Pose(0.0, 0.0, 0.0, 0.0)

# Probability that the next shuffled block starts a fresh stack instead of
# landing on the previous one; around one third keeps initial stacks two
# to three blocks tall, which keeps demonstrations diverse between
# consecutive subgoals.
_NEW_STACK_P = 0.30
# Probability that the two blocks ending up at the tower top start out
# stacked together as their own pile (the "stacked together" flavor of
# initial configurations).
_PAIR_P = 0.2
# Probability that a pile is ordered with earlier-needed blocks nearer
# its top (components packed roughly in usage order).
_SORT_P = 0.5


def _load_domain(fname: str) -> tuple[Domain, str]:
    text = resources.files("tampkit.data").joinpath(fname).read_text()
    return parse_domain(text), text


@dataclass(frozen=True)
class TaskSpec:
    """A benchmark family: domain, object universe, shared goal, geometry."""

    name: str
    domain: Domain
    domain_text: str
    objects: Mapping[str, str]
    goal: frozenset[Atom]
    world: WorldModel

    @property
    def movables(self) -> frozenset[str]:
        return frozenset(
            o for o, t in self.objects.items() if t in self.domain.movable_types
        )

    @property
    def fixtures(self) -> frozenset[str]:
        return frozenset(self.objects) - self.movables


def _block_task(n: int) -> TaskSpec:
    domain, text = _load_domain("blocks_domain.pddl")
    blocks = _BLOCK_NAMES[:n]
    objects = {b: "block" for b in blocks}
    objects["table"] = "table"
    objects["arm"] = "arm"
    # Goal tower: a on b on ... on the last block, which sits on the table.
    goal = {domain.make_atom("clear", blocks[0])}
    for top, below in zip(blocks, blocks[1:]):
        goal.add(domain.make_atom("onblock", top, below))
    goal.add(domain.make_atom("ontable", blocks[-1], "table"))
    world = WorldModel(
        table=_TABLE,
        footprints={b: _BLOCK_FP for b in blocks},
        regions={},
        support_preds={"ontable": "table", "onblock": "stack"},
        clear_pred="clear",
    )
    return TaskSpec(f"block{n}", domain, text, objects, frozenset(goal), world)


def _cook_task(n: int) -> TaskSpec:
    domain, text = _load_domain("kitchen_domain.pddl")
    ingredients = _INGREDIENTS[:n]
    boxes = tuple(f"box{i + 1}" for i in range(n))
    objects: dict[str, str] = {i: "ingredient" for i in ingredients}
    objects.update({b: "box" for b in boxes})
    objects.update({"sink": "sink", "board": "board", "pot": "pot",
                    "table": "table", "arm": "arm"})
    goal = frozenset(domain.make_atom("cooked", i) for i in ingredients)
    regions = {}
    for k, b in enumerate(boxes):
        regions[b] = Region(b, Pose(-0.40 + 0.16 * k, 0.22, 0.01, 0.0),
                            Footprint(0.05, 0.05, 0.01))
    regions["sink"] = Region("sink", Pose(-0.35, -0.20, 0.01, 0.0), Footprint(0.06, 0.06, 0.01))
    regions["board"] = Region("board", Pose(-0.12, -0.20, 0.01, 0.0), Footprint(0.06, 0.06, 0.01))
    regions["pot"] = Region("pot", Pose(0.30, -0.18, 0.02, 0.0), Footprint(0.06, 0.06, 0.02))
    world = WorldModel(
        table=_TABLE,
        footprints={i: _INGREDIENT_FP for i in ingredients},
        regions=regions,
        support_preds={"inbox": "region", "inpot": "ladder"},
        clear_pred=None,
        action_waypoints={"wash": "sink", "cut": "board"},
    )
    return TaskSpec(f"cook{n}", domain, text, objects, frozenset(goal), world)


_TASKS = {
    "block4": lambda: _block_task(4),
    "block6": lambda: _block_task(6),
    "block8": lambda: _block_task(8),
    "cook3": lambda: _cook_task(3),
    "cook4": lambda: _cook_task(4),
    "cook5": lambda: _cook_task(5),
}


def make_task(name: str) -> TaskSpec:
    try:
        return _TASKS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown task {name!r}; choose from {TASK_NAMES}") from None


def _goal_chain(task: TaskSpec) -> list[str]:
    """Goal tower from bottom block to top block."""
    above = {a.args[1]: a.args[0] for a in task.goal if a.predicate == "onblock"}
    bottom = next(a.args[0] for a in task.goal if a.predicate == "ontable")
    chain = [bottom]
    while chain[-1] in above:
        chain.append(above[chain[-1]])
    return chain


def _gen_block_instance(task: TaskSpec, rng: np.random.Generator) -> WorldState:
    domain = task.domain
    blocks = sorted(task.movables)
    chain = _goal_chain(task)
    order = list(blocks)
    rng.shuffle(order)
    fixed_pair: list[str] | None = None
    if rng.random() < _PAIR_P:
        fixed_pair = [chain[-1], chain[-2]] if rng.random() < 0.5 else [chain[-2], chain[-1]]
        order = [b for b in order if b not in fixed_pair]
    stacks: list[list[str]] = []
    for b in order:
        # Never pre-build a table-grounded suffix of the goal tower (f,
        # then e-on-f, ...): such a prefab would survive the whole solve
        # and the demonstration would skip early subgoal scenes.  Other
        # coincidental goal adjacencies are fine; they are dismantled.
        top = stacks[-1] if stacks else None
        extends_suffix = bool(top) and top == chain[: len(top)] and b == chain[len(top)]
        if not stacks or rng.random() < _NEW_STACK_P or extends_suffix:
            stacks.append([b])
        else:
            stacks[-1].append(b)
    if fixed_pair is not None:
        stacks.append(fixed_pair)
    need = {b: i for i, b in enumerate(chain)}  # lower index = needed earlier
    for stack in stacks:
        if len(stack) > 2 and rng.random() < _SORT_P:
            stack.sort(key=lambda b: -need[b])  # later-needed at the bottom

    atoms: list[Atom] = [domain.make_atom("handempty", "arm")]
    poses: dict[str, Pose] = {"table": _TABLE_POSE, "arm": _ARM_POSE}
    placed: list = []
    for stack in stacks:
        base_pose = sample_placement(stack[0], task.world, rng, extra=placed)
        poses[stack[0]] = base_pose
        placed.append((stack[0], base_pose, _BLOCK_FP))
        atoms.append(domain.make_atom("ontable", stack[0], "table"))
        for below, above in zip(stack, stack[1:]):
            poses[above] = stack_pose(poses[below], _BLOCK_FP, _BLOCK_FP)
            atoms.append(domain.make_atom("onblock", above, below))
        atoms.append(domain.make_atom("clear", stack[-1]))
    for b in blocks:
        atoms.append(domain.make_atom("graspable", b))
    return WorldState.from_atoms(task.objects.keys(), atoms, poses, task.fixtures)


def _gen_cook_instance(task: TaskSpec, rng: np.random.Generator) -> WorldState:
    domain = task.domain
    ingredients = [i for i in _INGREDIENTS if i in task.movables]
    boxes = sorted(b for b in task.objects if task.objects[b] == "box")
    atoms: list[Atom] = [domain.make_atom("handempty", "arm")]
    poses: dict[str, Pose] = {"table": _TABLE_POSE, "arm": _ARM_POSE}
    for fixture, region in task.world.regions.items():
        poses[fixture] = region.pose

    occupancy: dict[str, int] = {b: 0 for b in boxes}
    for ing in ingredients:
        box = boxes[int(rng.integers(len(boxes)))]
        atoms.append(domain.make_atom("inbox", ing, box))
        poses[ing] = region_slot_pose(task.world.regions[box], _INGREDIENT_FP, occupancy[box])
        occupancy[box] += 1
        if rng.random() < 0.5:
            atoms.append(domain.make_atom("washed", ing))
        if rng.random() < 0.5:
            atoms.append(domain.make_atom("cut", ing))
    for box in boxes:
        if rng.random() < 0.5:
            atoms.append(domain.make_atom("opened", box))

    atoms.append(domain.make_atom("cookfirst", ingredients[0]))
    for prev, nxt in zip(ingredients, ingredients[1:]):
        atoms.append(domain.make_atom("cookorder", nxt, prev))
    return WorldState.from_atoms(task.objects.keys(), atoms, poses, task.fixtures)


def gen_instance(task: TaskSpec | str, seed: int) -> tuple[ProblemSpec, WorldModel]:
    """Build a randomized instance of ``task`` from ``seed``.

    Identical seeds produce identical instances, including all poses.
    """
    if isinstance(task, str):
        task = make_task(task)
    rng = np.random.default_rng(np.random.SeedSequence([_task_key(task.name), int(seed)]))
    if task.name in BLOCK_TASKS:
        init = _gen_block_instance(task, rng)
    else:
        init = _gen_cook_instance(task, rng)
    problem = ProblemSpec(
        name=f"{task.name}-{seed}",
        domain=task.domain.name,
        objects=dict(task.objects),
        init=init,
        goal=task.goal,
    )
    return problem, task.world


def _task_key(name: str) -> int:
    return int.from_bytes(name.encode(), "big") % (2**31)
