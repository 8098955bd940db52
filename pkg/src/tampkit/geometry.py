"""Tabletop geometry: axis-aligned box footprints, collision tests,
feasible-placement sampling, stacking poses, and virtual-base merging.

Everything is 2.5-D: objects are upright boxes, yaw is carried along for
trajectories but ignored for collision.  Touching faces do not collide.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .scene import Pose


class GeometryError(ValueError):
    pass


class PlacementError(GeometryError):
    """No collision-free placement found within the attempt budget."""

    def __init__(self, obj: str, attempts: int):
        super().__init__(f"no feasible placement for {obj!r} after {attempts} attempts")
        self.obj = obj
        self.attempts = attempts


@dataclass(frozen=True)
class Footprint:
    """Half-extents of an upright box, in meters."""

    dx: float
    dy: float
    dz: float

    def __post_init__(self) -> None:
        if min(self.dx, self.dy, self.dz) <= 0.0:
            raise GeometryError(f"footprint half-extents must be positive: {self}")


@dataclass(frozen=True)
class Region:
    """A fixture with geometry (box tray, sink, cutting board, pot)."""

    name: str
    pose: Pose
    footprint: Footprint

    @property
    def surface_z(self) -> float:
        return self.pose.z + self.footprint.dz


_FACE_EPS = 1e-9


def _overlap(lo1: float, hi1: float, lo2: float, hi2: float) -> bool:
    # Shared faces are zero-measure, not a collision; the epsilon keeps
    # exactly-stacked boxes from colliding through float round-off.
    return lo1 < hi2 - _FACE_EPS and lo2 < hi1 - _FACE_EPS


def boxes_collide(p1: Pose, f1: Footprint, p2: Pose, f2: Footprint) -> bool:
    return (
        _overlap(p1.x - f1.dx, p1.x + f1.dx, p2.x - f2.dx, p2.x + f2.dx)
        and _overlap(p1.y - f1.dy, p1.y + f1.dy, p2.y - f2.dy, p2.y + f2.dy)
        and _overlap(p1.z - f1.dz, p1.z + f1.dz, p2.z - f2.dz, p2.z + f2.dz)
    )


@dataclass(frozen=True)
class WorldModel:
    """Static geometric model of the workspace.

    ``obstacles`` holds the virtual base: boxes of objects merged into
    the environment and therefore no longer manipulable.  The semantic
    fields (support predicates, waypoint regions, special object names)
    let the solver and the decomposer derive poses from symbolic atoms
    without per-domain code.
    """

    table: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    footprints: Mapping[str, Footprint]
    regions: Mapping[str, Region] = field(default_factory=dict)
    obstacles: tuple[tuple[str, Pose, Footprint], ...] = ()
    table_obj: str = "table"
    arm_obj: str = "arm"
    support_preds: Mapping[str, str] = field(default_factory=dict)
    clear_pred: str | None = None
    action_waypoints: Mapping[str, str] = field(default_factory=dict)
    lift: float = 0.10

    def footprint(self, obj: str) -> Footprint:
        try:
            return self.footprints[obj]
        except KeyError:
            raise GeometryError(f"no footprint declared for {obj!r}") from None

    @property
    def movable_names(self) -> frozenset[str]:
        return frozenset(self.footprints)

    def in_bounds(self, pose: Pose, fp: Footprint) -> bool:
        xmin, xmax, ymin, ymax = self.table
        return (
            xmin <= pose.x - fp.dx
            and pose.x + fp.dx <= xmax
            and ymin <= pose.y - fp.dy
            and pose.y + fp.dy <= ymax
        )

    def solid_boxes(self) -> list[tuple[str, Pose, Footprint]]:
        out = [(r.name, r.pose, r.footprint) for r in self.regions.values()]
        out.extend(self.obstacles)
        return out


def collides(
    pose: Pose,
    footprint: Footprint,
    world: WorldModel,
    extra: Iterable[tuple[str, Pose, Footprint]] = (),
    ignore: frozenset[str] = frozenset(),
) -> bool:
    """True iff the box overlaps any obstacle/region or leaves the table."""
    if not world.in_bounds(pose, footprint):
        return True
    for name, p, f in list(world.solid_boxes()) + list(extra):
        if name in ignore:
            continue
        if boxes_collide(pose, footprint, p, f):
            return True
    return False


def sample_placement(
    obj: str,
    world: WorldModel,
    rng: np.random.Generator,
    extra: Sequence[tuple[str, Pose, Footprint]] = (),
    max_attempts: int = 100,
) -> Pose:
    """Rejection-sample a collision-free table pose for ``obj``.

    Deterministic given the generator state; raises PlacementError with
    the attempt count when the free area is exhausted.
    """
    fp = world.footprint(obj)
    xmin, xmax, ymin, ymax = world.table
    if xmax - xmin < 2 * fp.dx or ymax - ymin < 2 * fp.dy:
        raise PlacementError(obj, 0)
    for _ in range(max_attempts):
        x = rng.uniform(xmin + fp.dx, xmax - fp.dx)
        y = rng.uniform(ymin + fp.dy, ymax - fp.dy)
        pose = Pose(float(x), float(y), fp.dz, 0.0)
        if not collides(pose, fp, world, extra=extra):
            return pose
    raise PlacementError(obj, max_attempts)


def merge_into_base(
    world: WorldModel,
    objects: Iterable[str],
    poses: Mapping[str, Pose],
    held: frozenset[str] = frozenset(),
) -> WorldModel:
    """Fold the given objects into the static environment.

    The returned world treats their boxes as immovable obstacles; merging
    nothing returns an equal world, merging a held object is an error.
    """
    objs = sorted(set(objects))
    if not objs:
        return world
    added = []
    for o in objs:
        if o in held:
            raise GeometryError(f"cannot merge in-hand object {o!r} into the base")
        added.append((o, poses[o], world.footprint(o)))
    remaining = {k: v for k, v in world.footprints.items() if k not in set(objs)}
    return replace(world, obstacles=world.obstacles + tuple(added), footprints=remaining)


def stack_pose(base_pose: Pose, base_fp: Footprint, top_fp: Footprint) -> Pose:
    """Pose of a box resting centered on top of another (center convention)."""
    return Pose(base_pose.x, base_pose.y, base_pose.z + base_fp.dz + top_fp.dz, base_pose.yaw)


_BOX_SLOTS = ((-0.022, 0.0), (0.022, 0.0), (0.0, -0.022), (0.0, 0.022))


def region_slot_pose(region: Region, fp: Footprint, index: int) -> Pose:
    """Resting pose for the ``index``-th occupant of a tray-like region."""
    ox, oy = _BOX_SLOTS[index % len(_BOX_SLOTS)]
    return Pose(region.pose.x + ox, region.pose.y + oy, region.surface_z + fp.dz, 0.0)


def region_stack_pose(region: Region, fp: Footprint, index: int) -> Pose:
    """Resting pose for the ``index``-th object piled inside a pot-like region."""
    return Pose(region.pose.x, region.pose.y, region.surface_z + fp.dz * (2 * index + 1), 0.0)
