"""Symbolic scene representation: atoms, world states, and their
decomposition into connected subgraphs used as pattern-mining items.

A world state couples a closed-world set of ground atoms (arity 1 or 2)
with one pose per object.  Base fixtures (table, sink, boxes, the arm)
are never graph nodes: a binary atom tying a movable object to a fixture
becomes an attribute of the movable node instead of an edge, so separate
stacks stay separate components.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence

FLUENT = "fluent"
STATIC = "static"


class SceneError(ValueError):
    """Raised for malformed states or unknown predicates."""


@dataclass(frozen=True, order=True)
class Atom:
    """A ground atom, e.g. ``(onblock e f)``.

    ``kind`` mirrors the predicate's domain declaration and is excluded
    from equality: two mentions of the same fact are the same atom.
    """

    predicate: str
    args: tuple[str, ...]
    kind: str = field(default=FLUENT, compare=False)

    def __post_init__(self) -> None:
        if not 1 <= len(self.args) <= 2:
            raise SceneError(f"atom arity must be 1 or 2: {self.predicate}/{len(self.args)}")

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def is_fluent(self) -> bool:
        return self.kind == FLUENT

    def __str__(self) -> str:
        return f"({self.predicate} {' '.join(self.args)})"

    def to_json(self) -> list[str]:
        return [self.predicate, *self.args]


def atom(predicate: str, *args: str, kind: str = FLUENT) -> Atom:
    """Convenience constructor: ``atom("onblock", "e", "f")``."""
    return Atom(predicate, tuple(args), kind)


@dataclass(frozen=True, order=True)
class Pose:
    """Object pose: position in meters, yaw in radians."""

    x: float
    y: float
    z: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        for v in (self.x, self.y, self.z, self.yaw):
            if not math.isfinite(v):
                raise SceneError(f"non-finite pose component in {self!r}")
        if self.z < 0.0:
            raise SceneError(f"pose below ground: z={self.z}")

    def to_json(self) -> list[float]:
        return [self.x, self.y, self.z, self.yaw]

    @staticmethod
    def from_json(v: Sequence[float]) -> "Pose":
        x, y, z, yaw = v
        return Pose(float(x), float(y), float(z), float(yaw))


@dataclass(frozen=True)
class WorldState:
    """Closed-world symbolic state plus one pose per object.

    ``fixtures`` names the objects that belong to the base environment
    (table, arm, sink, boxes, ...); they carry poses and atoms but are
    excluded from scene-graph nodes.
    """

    objects: frozenset[str]
    unary: Mapping[str, frozenset[Atom]]
    binary: frozenset[Atom]
    poses: Mapping[str, Pose]
    fixtures: frozenset[str] = frozenset()

    @staticmethod
    def from_atoms(
        objects: Iterable[str],
        atoms: Iterable[Atom],
        poses: Mapping[str, Pose],
        fixtures: Iterable[str] = (),
    ) -> "WorldState":
        objs = frozenset(objects)
        fix = frozenset(fixtures)
        unary: dict[str, set[Atom]] = {}
        binary: set[Atom] = set()
        for a in atoms:
            for arg in a.args:
                if arg not in objs:
                    raise SceneError(f"atom {a} references unknown object {arg!r}")
            if a.arity == 1:
                unary.setdefault(a.args[0], set()).add(a)
            else:
                binary.add(a)
        missing = objs - set(poses)
        if missing:
            raise SceneError(f"objects without a pose: {sorted(missing)}")
        return WorldState(
            objects=objs,
            unary={o: frozenset(s) for o, s in unary.items()},
            binary=frozenset(binary),
            poses=dict(poses),
            fixtures=fix,
        )

    def atoms(self) -> frozenset[Atom]:
        out: set[Atom] = set(self.binary)
        for s in self.unary.values():
            out |= s
        return frozenset(out)

    @property
    def movables(self) -> frozenset[str]:
        return self.objects - self.fixtures

    def atoms_of(self, obj: str) -> frozenset[Atom]:
        """All atoms mentioning ``obj`` in any argument position."""
        out = set(self.unary.get(obj, frozenset()))
        out |= {a for a in self.binary if obj in a.args}
        return frozenset(out)

    def holds(self, goal: Iterable[Atom]) -> bool:
        return set(goal) <= self.atoms()

    def key(self) -> tuple:
        """Canonical comparison key (atoms, poses, objects, fixtures)."""
        return (
            tuple(sorted(self.objects)),
            tuple(sorted(self.atoms())),
            tuple(sorted((o, p) for o, p in self.poses.items())),
            tuple(sorted(self.fixtures)),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def replace_atoms(self, atoms: Iterable[Atom], poses: Mapping[str, Pose] | None = None) -> "WorldState":
        return WorldState.from_atoms(self.objects, atoms, poses or self.poses, self.fixtures)


@dataclass(frozen=True)
class Subgraph:
    """One connected component of a scene graph: its nodes and the fluent
    atoms restricted to them (fixture relations included as attributes).
    Geometric state is deliberately absent, so two subgraphs differing
    only in poses encode to the same item.
    """

    nodes: frozenset[str]
    atoms: frozenset[Atom]

    @cached_property
    def canonical(self) -> str:
        nodes = ",".join(sorted(self.nodes))
        atoms = ";".join(str(a) for a in sorted(self.atoms))
        return f"[{nodes}]{atoms}"

    @cached_property
    def canonical_id(self) -> int:
        digest = hashlib.blake2b(self.canonical.encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big")

    def __str__(self) -> str:
        return self.canonical


class ItemTable:
    """Run-global registry mapping canonical subgraph ids to subgraphs.

    Ids are content-derived (stable across runs and registration order);
    register-or-get is thread safe so parallel workers can share one table.
    """

    def __init__(self) -> None:
        self._by_id: dict[int, Subgraph] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._by_id

    def register(self, sub: Subgraph) -> int:
        item_id = sub.canonical_id
        with self._lock:
            self._by_id.setdefault(item_id, sub)
        return item_id

    def decode(self, item_id: int) -> Subgraph:
        return self._by_id[item_id]

    def items(self) -> Iterator[tuple[int, Subgraph]]:
        return iter(self._by_id.items())


def canonical_encode(sub: Subgraph, table: ItemTable) -> int:
    """Register ``sub`` (idempotently) and return its item id."""
    return table.register(sub)


def decompose_subgraphs(state: WorldState) -> frozenset[Subgraph]:
    """Split a state into connected components under binary fluent edges.

    Edges exist only between two movable objects; a binary fluent with a
    fixture argument (e.g. ``(ontable f table)``) stays as an attribute
    of the movable component.  Static atoms never appear in subgraphs.
    """
    movables = sorted(state.movables)
    parent = {o: o for o in movables}

    def find(o: str) -> str:
        while parent[o] != o:
            parent[o] = parent[parent[o]]
            o = parent[o]
        return o

    def union(a: str, b: str) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    movable_set = state.movables
    for a in state.binary:
        if not a.is_fluent:
            continue
        x, y = a.args
        if x in movable_set and y in movable_set:
            union(x, y)

    groups: dict[str, set[str]] = {}
    for o in movables:
        groups.setdefault(find(o), set()).add(o)

    subgraphs = []
    for nodes in groups.values():
        atoms: set[Atom] = set()
        for o in nodes:
            atoms |= {u for u in state.unary.get(o, frozenset()) if u.is_fluent}
        atoms |= {
            b
            for b in state.binary
            if b.is_fluent and any(arg in nodes for arg in b.args)
        }
        subgraphs.append(Subgraph(frozenset(nodes), frozenset(atoms)))
    return frozenset(subgraphs)


def fluent_filter(state: WorldState, domain) -> WorldState:
    """Return a copy of ``state`` with static atoms removed.

    Poses are retained; they are only dropped later, inside canonical
    encoding.  ``domain`` must declare every predicate appearing in the
    state, otherwise the offending predicate is reported.
    """
    kept = []
    for a in state.atoms():
        kind = domain.predicate_kind(a.predicate)
        if kind == FLUENT:
            kept.append(Atom(a.predicate, a.args, FLUENT))
    return state.replace_atoms(kept)


@dataclass(frozen=True)
class Demonstration:
    """A solved trajectory: one WorldState per executed action, plus init."""

    id: int
    steps: tuple[WorldState, ...]

    def __post_init__(self) -> None:
        if len(self.steps) < 2:
            raise SceneError(f"demonstration {self.id} has fewer than 2 steps")

    def __len__(self) -> int:
        return len(self.steps)


def _step_to_json(state: WorldState) -> dict:
    return {
        "atoms": [a.to_json() for a in sorted(state.atoms())],
        "poses": {o: state.poses[o].to_json() for o in sorted(state.objects)},
    }


def save_demos(demos: Iterable[Demonstration], path: str) -> None:
    """Write demonstrations as JSON Lines, one demo per line."""
    with open(path, "w") as fh:
        for demo in demos:
            line = {
                "id": demo.id,
                "fixtures": sorted(demo.steps[0].fixtures),
                "steps": [_step_to_json(s) for s in demo.steps],
            }
            fh.write(json.dumps(line, separators=(",", ":")) + "\n")


def load_demos(path: str, kind_of: Mapping[str, str] | None = None) -> list[Demonstration]:
    """Read demonstrations back; ``kind_of`` restores fluent/static marks."""
    kinds = kind_of or {}
    demos = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            fixtures = rec.get("fixtures", [])
            steps = []
            for step in rec["steps"]:
                poses = {o: Pose.from_json(v) for o, v in step["poses"].items()}
                atoms = [
                    Atom(p[0], tuple(p[1:]), kinds.get(p[0], FLUENT))
                    for p in step["atoms"]
                ]
                steps.append(
                    WorldState.from_atoms(poses.keys(), atoms, poses, fixtures)
                )
            demos.append(Demonstration(rec["id"], tuple(steps)))
    return demos
