"""Frequent-pattern mining of subgoal sequences from demonstrations.

Demonstrations become a database of itemset sequences: every stable
world state is fluent-filtered, decomposed into connected subgraphs,
and each subgraph is encoded as one integer item.  PrefixSpan then
enumerates every sequential pattern (order-preserving, one database
element per pattern element, element containment) whose support meets
the min-support fraction, and the target subgoal sequence is the
pattern maximizing the summed, min-max-normalized reward of sequence
length, total item count, and distinct item count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .scene import (
    Atom,
    Demonstration,
    ItemTable,
    WorldState,
    canonical_encode,
    decompose_subgraphs,
    fluent_filter,
)

Element = frozenset[int]
ItemSequence = tuple[Element, ...]


@dataclass(frozen=True)
class SequenceDatabase:
    sequences: tuple[ItemSequence, ...]
    table: ItemTable

    def __len__(self) -> int:
        return len(self.sequences)


@dataclass(frozen=True)
class FrequentPattern:
    elements: tuple[Element, ...]
    support: int

    def __len__(self) -> int:
        return len(self.elements)


def _is_stable(state: WorldState) -> bool:
    """A state is stable when every movable rests on something.

    Mid-grasp snapshots leave the held object without any binary fluent
    atom; those states are skipped when building the mining database so
    patterns describe scenes, not transient manipulation moments.
    """
    supported = {a.args[0] for a in state.binary if a.is_fluent}
    supported |= {a.args[1] for a in state.binary if a.is_fluent}
    return all(o in supported for o in state.movables)


def build_database(
    demos: Iterable[Demonstration],
    domain,
    table: ItemTable | None = None,
    collapse: bool = True,
    stable_only: bool = True,
) -> SequenceDatabase:
    """Encode demonstrations as itemset sequences over subgraph items.

    Consecutive duplicate elements are collapsed by default (a scene
    persisting over several steps contributes one element); disable for
    ablations.
    """
    table = table if table is not None else ItemTable()
    sequences: list[ItemSequence] = []
    demos = list(demos)
    if not demos:
        raise ValueError("need at least one demonstration")
    for demo in demos:
        seq: list[Element] = []
        for state in demo.steps:
            filtered = fluent_filter(state, domain)
            if stable_only and not _is_stable(filtered):
                continue
            element = frozenset(
                canonical_encode(sub, table) for sub in decompose_subgraphs(filtered)
            )
            if collapse and seq and seq[-1] == element:
                continue
            seq.append(element)
        sequences.append(tuple(seq))
    return SequenceDatabase(tuple(sequences), table)


def _min_count(min_support: float, n: int) -> int:
    if not 0.0 < min_support <= 1.0:
        raise ValueError(f"min_support must be in (0, 1], got {min_support}")
    return max(1, math.ceil(min_support * n - 1e-9))


def prefixspan(db: SequenceDatabase | Sequence[ItemSequence], min_support: float) -> list[FrequentPattern]:
    """All frequent sequential patterns with itemset elements.

    Support counts each sequence at most once.  The recursion keeps, per
    sequence, every element index at which the pattern's last element
    can be matched, so set-valued elements are handled exactly.
    """
    sequences = db.sequences if isinstance(db, SequenceDatabase) else tuple(db)
    n = len(sequences)
    threshold = _min_count(min_support, n)
    out: list[FrequentPattern] = []

    # Projection: list of (sequence index, tuple of match positions for the
    # pattern's last element).
    def expand(pattern: list[Element], proj: list[tuple[int, tuple[int, ...]]]) -> None:
        s_candidates: dict[int, int] = {}
        i_candidates: dict[int, int] = {}
        last = pattern[-1] if pattern else frozenset()
        last_max = max(last) if last else None
        for seq_idx, positions in proj:
            seq = sequences[seq_idx]
            first = positions[0] if pattern else -1
            seen_s: set[int] = set()
            for e in range(first + 1, len(seq)):
                seen_s |= seq[e]
            for item in seen_s:
                s_candidates[item] = s_candidates.get(item, 0) + 1
            if pattern and last_max is not None:
                seen_i: set[int] = set()
                for e in positions:
                    seen_i |= {i for i in seq[e] if i > last_max}
                for item in seen_i:
                    i_candidates[item] = i_candidates.get(item, 0) + 1

        for item, count in sorted(s_candidates.items()):
            if count < threshold:
                continue
            new_pattern = pattern + [frozenset({item})]
            new_proj = []
            for seq_idx, positions in proj:
                seq = sequences[seq_idx]
                first = positions[0] if pattern else -1
                hits = tuple(e for e in range(first + 1, len(seq)) if item in seq[e])
                if hits:
                    new_proj.append((seq_idx, hits))
            out.append(FrequentPattern(tuple(new_pattern), len(new_proj)))
            expand(new_pattern, new_proj)

        for item, count in sorted(i_candidates.items()):
            if count < threshold:
                continue
            new_last = last | {item}
            new_pattern = pattern[:-1] + [new_last]
            new_proj = []
            for seq_idx, positions in proj:
                hits = tuple(e for e in positions if item in sequences[seq_idx][e])
                if hits:
                    new_proj.append((seq_idx, hits))
            if len(new_proj) >= threshold:
                out.append(FrequentPattern(tuple(new_pattern), len(new_proj)))
                expand(new_pattern, new_proj)

    root = [(i, ()) for i in range(n)]
    expand([], root)
    return out


@dataclass(frozen=True)
class SubgoalSequence:
    """The selected subgoal chain, decoded to atom sets."""

    subgoals: tuple[frozenset[Atom], ...]
    support: int
    rewards: Mapping[str, float] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.subgoals)


def _decode(pattern: FrequentPattern, table: ItemTable) -> tuple[frozenset[Atom], ...]:
    subgoals = []
    for element in pattern.elements:
        atoms: set[Atom] = set()
        for item in element:
            atoms |= table.decode(item).atoms
        subgoals.append(frozenset(atoms))
    return tuple(subgoals)


def select_target_sequence(
    patterns: Sequence[FrequentPattern],
    task_goal: Iterable[Atom],
    table: ItemTable,
) -> SubgoalSequence:
    """Pick the maximal-information pattern and decode it to subgoals.

    The three reward components (length, total items, distinct items)
    are min-max normalized over the candidate set and weighted equally;
    ties break toward the lexicographically smallest canonical encoding.
    If the winner's final element does not entail the task goal, the
    goal is appended as the last subgoal.
    """
    if not patterns:
        raise ValueError("no frequent patterns to select from")

    def raw(p: FrequentPattern) -> tuple[float, float, float]:
        return (
            float(len(p.elements)),
            float(sum(len(e) for e in p.elements)),
            float(len(set().union(*p.elements))),
        )

    values = [raw(p) for p in patterns]
    lows = [min(v[k] for v in values) for k in range(3)]
    highs = [max(v[k] for v in values) for k in range(3)]

    def norm(v: tuple[float, float, float]) -> tuple[float, float, float]:
        return tuple(
            (v[k] - lows[k]) / (highs[k] - lows[k]) if highs[k] > lows[k] else 0.0
            for k in range(3)
        )

    def tie_key(p: FrequentPattern) -> tuple:
        return tuple(
            tuple(sorted(table.decode(i).canonical for i in e)) for e in p.elements
        )

    best = None
    best_score = None
    for p, v in zip(patterns, values):
        nl, nq, nv = norm(v)
        score = nl + nq + nv
        if best is None or score > best_score + 1e-12 or (
            abs(score - best_score) <= 1e-12 and tie_key(p) < tie_key(best)
        ):
            best, best_score = p, score
    assert best is not None

    subgoals = list(_decode(best, table))
    goal = frozenset(task_goal)
    if not goal <= subgoals[-1]:
        subgoals.append(goal)
    bl, bq, bv = raw(best)
    nl, nq, nv = norm((bl, bq, bv))
    rewards = {
        "length": bl,
        "total_items": bq,
        "distinct_items": bv,
        "norm_length": nl,
        "norm_total_items": nq,
        "norm_distinct_items": nv,
        "total": nl + nq + nv,
    }
    return SubgoalSequence(tuple(subgoals), best.support, rewards)


# ---------------------------------------------------------------------------
# Artifact I/O: mined subgoals plus per-transition completion profiles.


@dataclass(frozen=True)
class SubgoalArtifact:
    """Everything the online decomposer needs from the offline mining."""

    sequence: SubgoalSequence
    min_support: float
    profiles: tuple[Mapping, ...] = ()

    def to_json(self) -> dict:
        return {
            "min_support": self.min_support,
            "support": self.sequence.support,
            "rewards": dict(self.sequence.rewards),
            "subgoals": [
                [a.to_json() for a in sorted(g)] for g in self.sequence.subgoals
            ],
            "profiles": [
                {
                    "support_kind": dict(p.get("support_kind", {})),
                    "unary_state": {o: sorted(s) for o, s in p.get("unary_state", {}).items()},
                }
                for p in self.profiles
            ],
        }

    @staticmethod
    def from_json(data: dict) -> "SubgoalArtifact":
        subgoals = tuple(
            frozenset(Atom(a[0], tuple(a[1:])) for a in g) for g in data["subgoals"]
        )
        profiles = tuple(
            {
                "support_kind": dict(p.get("support_kind", {})),
                "unary_state": {o: frozenset(s) for o, s in p.get("unary_state", {}).items()},
            }
            for p in data.get("profiles", [])
        )
        seq = SubgoalSequence(subgoals, int(data.get("support", 0)), data.get("rewards", {}))
        return SubgoalArtifact(seq, float(data.get("min_support", 0.9)), profiles)


def save_subgoals(artifact: SubgoalArtifact, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(artifact.to_json(), fh, indent=1, sort_keys=True)


def load_subgoals(path: str) -> SubgoalArtifact:
    with open(path) as fh:
        return SubgoalArtifact.from_json(json.load(fh))
