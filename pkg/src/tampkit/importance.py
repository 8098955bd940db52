"""Per-transition object importance: oracle labels from demonstrations
and a small message-passing network that predicts them online.

A training sample is one subgoal transition: the scene at the moment
subgoal i holds, the atoms of subgoal i+1, and a 0/1 label per object
marking whether any of its atoms or its pose changed anywhere inside
the segment.  The network is deliberately tiny (3 edge-conditioned
message-passing layers, width 16) and written directly in numpy with
hand-derived gradients so they can be verified by finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import WorldModel
from .pddl import Domain
from .scene import Atom, Demonstration, WorldState

POSE_TOL = 1e-6


class SegmentationError(ValueError):
    def __init__(self, demo_id: int, subgoal_index: int):
        super().__init__(
            f"demonstration {demo_id} never satisfies subgoal {subgoal_index}"
        )
        self.demo_id = demo_id
        self.subgoal_index = subgoal_index


@dataclass(frozen=True)
class Segment:
    """One subgoal transition inside a demonstration."""

    demo_id: int
    start: int
    end: int
    from_subgoal: int  # index of the subgoal satisfied at ``start`` (-1 = init)
    to_subgoal: int
    states: tuple[WorldState, ...]

    def __len__(self) -> int:
        return self.end - self.start


def segment_demos(
    demos: Iterable[Demonstration],
    subgoals: Sequence[frozenset[Atom]],
) -> list[Segment]:
    """Split demos at the first step satisfying each successive subgoal.

    Zero-length segments (a subgoal already satisfied at the previous
    boundary) are dropped.  A demo that never satisfies some subgoal
    raises SegmentationError naming it.
    """
    segments: list[Segment] = []
    for demo in demos:
        boundary = 0
        for i, goal in enumerate(subgoals):
            nxt = None
            for j in range(boundary, len(demo.steps)):
                if demo.steps[j].holds(goal):
                    nxt = j
                    break
            if nxt is None:
                raise SegmentationError(demo.id, i)
            if nxt > boundary:
                segments.append(
                    Segment(
                        demo_id=demo.id,
                        start=boundary,
                        end=nxt,
                        from_subgoal=i - 1,
                        to_subgoal=i,
                        states=tuple(demo.steps[boundary : nxt + 1]),
                    )
                )
            boundary = nxt
    return segments


def label_important(segment: Segment) -> frozenset[str]:
    """Objects whose atoms or pose differ from the segment start at any
    step, including changes that are later undone."""
    start = segment.states[0]
    important: set[str] = set()
    for state in segment.states[1:]:
        for obj in state.objects:
            if obj in important:
                continue
            if state.atoms_of(obj) != start.atoms_of(obj):
                important.add(obj)
                continue
            p, q = state.poses[obj], start.poses[obj]
            if max(abs(p.x - q.x), abs(p.y - q.y), abs(p.z - q.z)) > POSE_TOL:
                important.add(obj)
    return frozenset(important)


def transition_profiles(
    demos: Iterable[Demonstration],
    subgoals: Sequence[frozenset[Atom]],
    world: WorldModel,
) -> list[dict]:
    """Majority resulting state of important-but-unnamed objects, per
    transition: which support predicate movables end under, and which
    unary fluents hold on fixtures.  Consumed by subproblem generation
    to pin deterministic outcomes."""
    support_counts: list[dict[str, dict[str, int]]] = [dict() for _ in subgoals]
    unary_counts: list[dict[str, dict[str, int]]] = [dict() for _ in subgoals]
    totals: list[dict[str, int]] = [dict() for _ in subgoals]

    for seg in segment_demos(demos, subgoals):
        z = seg.to_subgoal
        named = {a for g in [subgoals[z]] for atom_ in g for a in atom_.args}
        end = seg.states[-1]
        for obj in label_important(seg):
            if obj in named:
                continue
            totals[z][obj] = totals[z].get(obj, 0) + 1
            if obj in end.movables:
                support = next(
                    (a.predicate for a in end.binary if a.is_fluent and a.args[0] == obj),
                    None,
                )
                if support is not None:
                    d = support_counts[z].setdefault(obj, {})
                    d[support] = d.get(support, 0) + 1
            else:
                d = unary_counts[z].setdefault(obj, {})
                for a in end.unary.get(obj, frozenset()):
                    if a.is_fluent:
                        d[a.predicate] = d.get(a.predicate, 0) + 1

    profiles = []
    for z in range(len(subgoals)):
        support_kind = {}
        for obj, counts in support_counts[z].items():
            pred, cnt = max(counts.items(), key=lambda kv: (kv[1], kv[0]))
            support_kind[obj] = pred
        unary_state = {}
        for obj, counts in unary_counts[z].items():
            n = totals[z].get(obj, 0)
            unary_state[obj] = frozenset(p for p, c in counts.items() if 2 * c > n)
        profiles.append({"support_kind": support_kind, "unary_state": unary_state})
    return profiles


# ---------------------------------------------------------------------------
# Graph encoding.


@dataclass(frozen=True)
class FeatureSpec:
    """Fixed per-domain feature layout for graph encoding."""

    unary_preds: tuple[str, ...]
    binary_preds: tuple[str, ...]
    table: tuple[float, float, float, float]

    @property
    def node_dim(self) -> int:
        # current one-hots + pose + goal one-hots + fixture flag + named flag
        return 2 * len(self.unary_preds) + 3 + 2

    @property
    def edge_dim(self) -> int:
        # forward/reverse per predicate, current and goal channels,
        # plus transitive reachability flags for both channels
        return 4 * len(self.binary_preds) + 4

    @staticmethod
    def for_domain(domain: Domain, world: WorldModel) -> "FeatureSpec":
        unary = tuple(
            sorted(p for p, args in domain.predicates.items() if len(args) == 1 and domain.kinds[p] == "fluent")
        )
        binary = tuple(
            sorted(p for p, args in domain.predicates.items() if len(args) == 2 and domain.kinds[p] == "fluent")
        )
        return FeatureSpec(unary, binary, world.table)

    def to_json(self) -> dict:
        return {
            "unary_preds": list(self.unary_preds),
            "binary_preds": list(self.binary_preds),
            "table": list(self.table),
        }

    @staticmethod
    def from_json(d: dict) -> "FeatureSpec":
        return FeatureSpec(tuple(d["unary_preds"]), tuple(d["binary_preds"]), tuple(d["table"]))


@dataclass
class GraphSample:
    nodes: tuple[str, ...]
    x: np.ndarray  # (N, node_dim)
    src: np.ndarray  # (M,)
    dst: np.ndarray  # (M,)
    e: np.ndarray  # (M, edge_dim)
    labels: np.ndarray | None = None  # (N,)


def _closure(pairs: set[tuple[str, str]]) -> set[tuple[str, str]]:
    """Transitive closure of a sparse relation."""
    adj: dict[str, set[str]] = {}
    for u, v in pairs:
        adj.setdefault(u, set()).add(v)
    out: set[tuple[str, str]] = set()
    for start in adj:
        stack = list(adj[start])
        seen: set[str] = set()
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            out.add((start, v))
            stack.extend(adj.get(v, ()))
    return out


def encode_sample(
    state: WorldState,
    subgoal: Iterable[Atom],
    spec: FeatureSpec,
    labels: frozenset[str] | None = None,
) -> GraphSample:
    """Two-channel single-graph encoding of (current scene, subgoal)."""
    goal = frozenset(subgoal)
    for a in goal:
        if (a.arity == 1 and a.predicate not in spec.unary_preds) and (
            a.predicate not in spec.binary_preds
        ):
            if a.predicate not in spec.unary_preds + spec.binary_preds:
                raise ValueError(f"feature layout mismatch: unknown predicate {a.predicate}")
    nodes = tuple(sorted(state.objects))
    index = {o: i for i, o in enumerate(nodes)}
    uidx = {p: i for i, p in enumerate(spec.unary_preds)}
    bidx = {p: i for i, p in enumerate(spec.binary_preds)}
    xmin, xmax, ymin, ymax = spec.table
    named = {a for atom_ in goal for a in atom_.args}

    x = np.zeros((len(nodes), spec.node_dim))
    nu = len(spec.unary_preds)
    for o, i in index.items():
        for a in state.unary.get(o, frozenset()):
            if a.is_fluent and a.predicate in uidx:
                x[i, uidx[a.predicate]] = 1.0
        p = state.poses[o]
        x[i, nu + 0] = (p.x - xmin) / (xmax - xmin) * 2 - 1
        x[i, nu + 1] = (p.y - ymin) / (ymax - ymin) * 2 - 1
        x[i, nu + 2] = p.z / 0.3
        for a in goal:
            if a.arity == 1 and a.args[0] == o and a.predicate in uidx:
                x[i, nu + 3 + uidx[a.predicate]] = 1.0
        x[i, 2 * nu + 3] = 1.0 if o in state.fixtures else 0.0
        x[i, 2 * nu + 4] = 1.0 if o in named else 0.0

    nb = len(spec.binary_preds)
    feats: dict[tuple[int, int], np.ndarray] = {}

    def feat(u: str, v: str) -> np.ndarray:
        key = (index[u], index[v])
        if key not in feats:
            feats[key] = np.zeros(spec.edge_dim)
        return feats[key]

    cur_pairs: set[tuple[str, str]] = set()
    for a in state.binary:
        if not a.is_fluent or a.predicate not in bidx:
            continue
        u, v = a.args
        feat(u, v)[bidx[a.predicate]] = 1.0
        feat(v, u)[nb + bidx[a.predicate]] = 1.0
        cur_pairs.add((u, v))
    goal_pairs: set[tuple[str, str]] = set()
    for a in goal:
        if a.arity != 2 or a.predicate not in bidx:
            continue
        u, v = a.args
        feat(u, v)[2 * nb + bidx[a.predicate]] = 1.0
        feat(v, u)[3 * nb + bidx[a.predicate]] = 1.0
        goal_pairs.add((u, v))
    for u, v in _closure(cur_pairs):
        feat(u, v)[4 * nb + 0] = 1.0
        feat(v, u)[4 * nb + 1] = 1.0
    for u, v in _closure(goal_pairs):
        feat(u, v)[4 * nb + 2] = 1.0
        feat(v, u)[4 * nb + 3] = 1.0

    if feats:
        keys = sorted(feats)
        src = np.array([k[0] for k in keys], dtype=np.int64)
        dst = np.array([k[1] for k in keys], dtype=np.int64)
        e = np.stack([feats[k] for k in keys])
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
        e = np.zeros((0, spec.edge_dim))

    y = None
    if labels is not None:
        y = np.array([1.0 if o in labels else 0.0 for o in nodes])
    return GraphSample(nodes, x, src, dst, e, y)


def batch_samples(samples: Sequence[GraphSample]) -> GraphSample:
    """Stack disjoint graphs into one big graph for full-batch training."""
    xs, srcs, dsts, es, ys, names = [], [], [], [], [], []
    offset = 0
    for s in samples:
        xs.append(s.x)
        srcs.append(s.src + offset)
        dsts.append(s.dst + offset)
        es.append(s.e)
        names.extend(s.nodes)
        if s.labels is not None:
            ys.append(s.labels)
        offset += len(s.nodes)
    return GraphSample(
        tuple(names),
        np.concatenate(xs),
        np.concatenate(srcs),
        np.concatenate(dsts),
        np.concatenate(es),
        np.concatenate(ys) if ys else None,
    )


# ---------------------------------------------------------------------------
# The network.


class TrainingError(RuntimeError):
    pass


@dataclass
class GnnModel:
    """Edge-conditioned message passing with sum aggregation.

    h^{k+1} = tanh(h^k Ws_k + sum_{(u->v)} [h^k_u ; e_uv] Wm_k + b_k)
    score_v = sigmoid(h^K w + b)

    The smooth nonlinearity keeps central finite differences valid at
    every parameter, which the gradient-check harness relies on.
    """

    spec: FeatureSpec
    params: dict[str, np.ndarray]
    layers: int = 3
    width: int = 16
    meta: dict = field(default_factory=dict)

    @staticmethod
    def init(spec: FeatureSpec, layers: int = 3, width: int = 16, seed: int = 0) -> "GnnModel":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        params: dict[str, np.ndarray] = {}
        in_dim = spec.node_dim
        for k in range(layers):
            params[f"Ws{k}"] = rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, width))
            params[f"Wm{k}"] = rng.normal(
                0.0, 1.0 / np.sqrt(in_dim + spec.edge_dim), (in_dim + spec.edge_dim, width)
            )
            params[f"b{k}"] = np.zeros(width)
            in_dim = width
        params["w_out"] = rng.normal(0.0, 1.0 / np.sqrt(width), (width,))
        params["b_out"] = np.zeros(1)
        return GnnModel(spec, params, layers, width)

    def _forward(self, g: GraphSample, keep: bool = False):
        h = g.x
        cache = []
        for k in range(self.layers):
            s = h @ self.params[f"Ws{k}"] + self.params[f"b{k}"]
            if len(g.src):
                msg_in = np.concatenate([h[g.src], g.e], axis=1)
                msg = msg_in @ self.params[f"Wm{k}"]
                agg = np.zeros_like(s)
                np.add.at(agg, g.dst, msg)
            else:
                msg_in = None
                agg = np.zeros_like(s)
            z = s + agg
            h_next = np.tanh(z)
            if keep:
                cache.append((h, msg_in, z))
            h = h_next
        logits = h @ self.params["w_out"] + self.params["b_out"][0]
        if keep:
            cache.append(h)
        return (logits, cache) if keep else (logits, None)

    def scores(self, g: GraphSample) -> np.ndarray:
        logits, _ = self._forward(g)
        return 1.0 / (1.0 + np.exp(-logits))

    def loss_and_grads(self, g: GraphSample) -> tuple[float, dict[str, np.ndarray]]:
        assert g.labels is not None
        logits, cache = self._forward(g, keep=True)
        y = g.labels
        n = len(y)
        p = 1.0 / (1.0 + np.exp(-logits))
        eps = 1e-12
        loss = float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))

        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        h_last = cache[-1]
        dlogits = (p - y) / n
        grads["w_out"] = h_last.T @ dlogits
        grads["b_out"] = np.array([dlogits.sum()])
        dh = np.outer(dlogits, self.params["w_out"])
        for k in range(self.layers - 1, -1, -1):
            h_in, msg_in, z = cache[k]
            dz = dh * (1.0 - np.tanh(z) ** 2)
            grads[f"Ws{k}"] = h_in.T @ dz
            grads[f"b{k}"] = dz.sum(axis=0)
            dh = dz @ self.params[f"Ws{k}"].T
            if msg_in is not None:
                dmsg = dz[g.dst]
                grads[f"Wm{k}"] = msg_in.T @ dmsg
                dmsg_in = dmsg @ self.params[f"Wm{k}"].T
                np.add.at(dh, g.src, dmsg_in[:, : h_in.shape[1]])
        return loss, grads

    def to_json(self) -> dict:
        return {
            "version": 1,
            "layers": self.layers,
            "width": self.width,
            "feature_spec": self.spec.to_json(),
            "params": {k: v.tolist() for k, v in sorted(self.params.items())},
            "meta": self.meta,
        }

    @staticmethod
    def from_json(data: dict) -> "GnnModel":
        return GnnModel(
            spec=FeatureSpec.from_json(data["feature_spec"]),
            params={k: np.asarray(v, dtype=float) for k, v in data["params"].items()},
            layers=int(data["layers"]),
            width=int(data["width"]),
            meta=data.get("meta", {}),
        )


def save_dataset(samples: Sequence[GraphSample], path: str) -> None:
    """Write labeled graphs as JSON Lines, one sample per line."""
    with open(path, "w") as fh:
        for s in samples:
            rec = {
                "nodes": list(s.nodes),
                "x": s.x.tolist(),
                "src": s.src.tolist(),
                "dst": s.dst.tolist(),
                "e": s.e.tolist(),
                "edge_dim": int(s.e.shape[1]),
                "labels": s.labels.tolist() if s.labels is not None else None,
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_dataset(path: str) -> list[GraphSample]:
    samples = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            e = np.asarray(rec["e"], dtype=float)
            if e.size == 0:
                e = np.zeros((0, int(rec["edge_dim"])))
            samples.append(
                GraphSample(
                    tuple(rec["nodes"]),
                    np.asarray(rec["x"], dtype=float),
                    np.asarray(rec["src"], dtype=np.int64),
                    np.asarray(rec["dst"], dtype=np.int64),
                    e,
                    np.asarray(rec["labels"], dtype=float) if rec["labels"] is not None else None,
                )
            )
    return samples


def save_model(model: GnnModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh, sort_keys=True)


def load_model(path: str) -> GnnModel:
    with open(path) as fh:
        return GnnModel.from_json(json.load(fh))


def build_dataset(
    demos: Iterable[Demonstration],
    subgoals: Sequence[frozenset[Atom]],
    spec: FeatureSpec,
) -> list[GraphSample]:
    """One labeled graph per nonempty subgoal transition."""
    samples = []
    for seg in segment_demos(demos, subgoals):
        labels = label_important(seg)
        samples.append(
            encode_sample(seg.states[0], subgoals[seg.to_subgoal], spec, labels)
        )
    return samples


def train(
    dataset: Sequence[GraphSample],
    spec: FeatureSpec,
    seed: int = 0,
    epochs: int = 1000,
    step: float = 1e-3,
    layers: int = 3,
    width: int = 16,
) -> tuple[GnnModel, list[float]]:
    """Full-batch Adam on binary cross-entropy over node labels."""
    if not dataset:
        raise TrainingError("empty dataset")
    model = GnnModel.init(spec, layers, width, seed)
    batch = batch_samples(dataset)
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(v_) for k, v_ in model.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    losses = []
    for epoch in range(epochs):
        loss, grads = model.loss_and_grads(batch)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        losses.append(loss)
        t = epoch + 1
        for k in model.params:
            m[k] = beta1 * m[k] + (1 - beta1) * grads[k]
            v[k] = beta2 * v[k] + (1 - beta2) * grads[k] ** 2
            mhat = m[k] / (1 - beta1**t)
            vhat = v[k] / (1 - beta2**t)
            model.params[k] = model.params[k] - step * mhat / (np.sqrt(vhat) + eps)
    model.meta = {"epochs": epochs, "step": step, "seed": seed, "final_loss": losses[-1]}
    return model, losses


def predict(
    model: GnnModel,
    current: WorldState,
    subgoal: Iterable[Atom],
    gamma: float,
) -> frozenset[str]:
    """Objects scoring above ``gamma``, plus subgoal-named objects whose
    subgoal atoms do not hold yet (they must change by definition)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie strictly inside (0, 1)")
    goal = frozenset(subgoal)
    g = encode_sample(current, goal, model.spec)
    s = model.scores(g)
    out = {o for o, sc in zip(g.nodes, s) if sc > gamma}
    atoms = current.atoms()
    for a in goal:
        if a not in atoms:
            out.update(a.args)
    return frozenset(out)


def scores_by_object(model: GnnModel, current: WorldState, subgoal: Iterable[Atom]) -> dict[str, float]:
    g = encode_sample(current, frozenset(subgoal), model.spec)
    return {o: float(s) for o, s in zip(g.nodes, model.scores(g))}


def oracle_predict(
    current: WorldState,
    subgoal: Iterable[Atom],
    problem_objects: Mapping[str, str],
    domain: Domain,
    cfg=None,
) -> frozenset[str]:
    """Importance via a reduced symbolic solve: objects touched by a plan
    from ``current`` to the subgoal.  Rule-based stand-in for the learned
    scorer and the cross-check used in tests."""
    from .pddl import ProblemSpec
    from .solver import SolverConfig, _Space, _search, ground_for, register_domain

    goal = frozenset(subgoal)
    if current.holds(goal):
        return frozenset()
    register_domain(domain)
    problem = ProblemSpec("oracle", domain.name, dict(problem_objects), current, goal)
    actions = ground_for(problem, domain)
    space = _Space(actions, current.atoms(), goal)
    order = sorted(range(len(actions)), key=lambda i: (0 if space.enc[i][2] & space.goal else 1, i))
    path, _ = _search(space, cfg or SolverConfig(), order, set(), None)
    touched: set[str] = set()
    for idx in path:
        ga = actions[idx]
        for a in ga.add | ga.delete:
            touched.update(a.args)
    return frozenset(touched)
