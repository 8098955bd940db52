"""Parser and grounding for a STRIPS-style subset of PDDL.

Supported: typed parameters, conjunctive preconditions with negation,
add/delete effects.  Extensions over vanilla PDDL, needed downstream:
a ``(:static ...)`` section marking never-changing predicates, a
``(:movable ...)`` section naming manipulable object types, and a
``(:poses ...)`` section in problem files carrying object poses.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .scene import FLUENT, STATIC, Atom, Pose, SceneError, WorldState


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{message} (line {line}, col {col})" if line else message)
        self.line = line
        self.col = col


class Symbol(str):
    """A token that remembers where it came from."""

    line: int
    col: int

    def __new__(cls, text: str, line: int, col: int) -> "Symbol":
        s = super().__new__(cls, text)
        s.line = line
        s.col = col
        return s


def _tokenize(text: str) -> list[Symbol]:
    tokens: list[Symbol] = []
    line, col = 1, 1
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
            continue
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            col += 1
            i += 1
            continue
        if ch in "()":
            tokens.append(Symbol(ch, line, col))
            col += 1
            i += 1
            continue
        start = i
        start_col = col
        while i < len(text) and not text[i].isspace() and text[i] not in "();":
            i += 1
            col += 1
        tokens.append(Symbol(text[start:i].lower(), line, start_col))
    return tokens


def _read(tokens: list[Symbol]) -> list:
    """Parse a token stream into one nested list."""

    def read_form(pos: int):
        tok = tokens[pos]
        if tok == "(":
            items = []
            pos += 1
            while pos < len(tokens) and tokens[pos] != ")":
                item, pos = read_form(pos)
                items.append(item)
            if pos >= len(tokens):
                raise ParseError("unbalanced parenthesis", tok.line, tok.col)
            return items, pos + 1
        if tok == ")":
            raise ParseError("unexpected ')'", tok.line, tok.col)
        return tok, pos + 1

    if not tokens:
        raise ParseError("empty input")
    form, pos = read_form(0)
    if pos != len(tokens):
        extra = tokens[pos]
        raise ParseError("trailing content after top-level form", extra.line, extra.col)
    return form


def _where(form) -> tuple[int, int]:
    if isinstance(form, Symbol):
        return form.line, form.col
    for item in form:
        return _where(item)
    return 0, 0


def _parse_typed_list(forms: Sequence) -> list[tuple[str, str]]:
    """Parse ``a b - t1 c - t2`` into [(a,t1),(b,t1),(c,t2)]."""
    out: list[tuple[str, str]] = []
    pending: list[str] = []
    it = iter(forms)
    for tok in it:
        if tok == "-":
            try:
                typ = next(it)
            except StopIteration:
                raise ParseError("dangling '-' in typed list", *_where(forms))
            out.extend((name, str(typ)) for name in pending)
            pending = []
        else:
            pending.append(str(tok))
    if pending:
        line, col = _where(forms)
        raise ParseError(f"untyped names in typed list: {pending}", line, col)
    return out


@dataclass(frozen=True)
class SchemaAtom:
    """An atom template over schema parameters."""

    predicate: str
    args: tuple[str, ...]

    def bind(self, binding: Mapping[str, str], kind: str) -> Atom:
        return Atom(self.predicate, tuple(binding[a] for a in self.args), kind)

    def __str__(self) -> str:
        return f"({self.predicate} {' '.join(self.args)})"


@dataclass(frozen=True)
class ActionSchema:
    name: str
    parameters: tuple[tuple[str, str], ...]
    pre_pos: frozenset[SchemaAtom]
    pre_neg: frozenset[SchemaAtom]
    add_effects: frozenset[SchemaAtom]
    del_effects: frozenset[SchemaAtom]

    def __post_init__(self) -> None:
        params = {v for v, _ in self.parameters}
        for eff in self.add_effects | self.del_effects:
            for a in eff.args:
                if a not in params:
                    raise ParseError(
                        f"effect variable {a} not in parameters of action {self.name}"
                    )
        if self.add_effects & self.del_effects:
            raise ParseError(f"action {self.name} adds and deletes the same atom")


@dataclass(frozen=True)
class Domain:
    name: str
    types: frozenset[str]
    predicates: Mapping[str, tuple[str, ...]]
    kinds: Mapping[str, str]
    movable_types: frozenset[str]
    actions: Mapping[str, ActionSchema]

    def predicate_kind(self, name: str) -> str:
        try:
            return self.kinds[name]
        except KeyError:
            raise SceneError(f"unknown predicate: {name}") from None

    @property
    def predicate_kinds(self) -> Mapping[str, str]:
        return self.kinds

    def make_atom(self, predicate: str, *args: str) -> Atom:
        return Atom(predicate, tuple(args), self.predicate_kind(predicate))


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    domain: str
    objects: Mapping[str, str]
    init: WorldState
    goal: frozenset[Atom]
    # Poses the plan must realize for specific objects (decomposed
    # subproblems pin their interface placements here).
    target_poses: Mapping[str, Pose] = field(default_factory=dict)


@dataclass(frozen=True)
class GroundAction:
    name: str
    args: tuple[str, ...]
    pre_pos: frozenset[Atom]
    pre_neg: frozenset[Atom]
    add: frozenset[Atom]
    delete: frozenset[Atom]

    @property
    def signature(self) -> str:
        return f"({self.name} {' '.join(self.args)})"

    def __str__(self) -> str:
        return self.signature


def _parse_schema_atoms(form, predicates, arity_check=True) -> tuple[list[SchemaAtom], list[SchemaAtom]]:
    """Parse a precondition/effect body into (positive, negated) templates."""
    pos: list[SchemaAtom] = []
    neg: list[SchemaAtom] = []
    items = form[1:] if form and form[0] == "and" else [form]
    for item in items:
        if not isinstance(item, list) or not item:
            raise ParseError("expected an atom form", *_where(item if item else form))
        negated = item[0] == "not"
        body = item[1] if negated else item
        if not isinstance(body, list) or not body:
            raise ParseError("malformed atom", *_where(item))
        pred = str(body[0])
        args = tuple(str(x) for x in body[1:])
        if pred not in predicates:
            raise ParseError(f"unknown predicate: {pred}", *_where(body))
        if arity_check and len(args) != len(predicates[pred]):
            raise ParseError(
                f"arity mismatch for {pred}: expected {len(predicates[pred])}, got {len(args)}",
                *_where(body),
            )
        (neg if negated else pos).append(SchemaAtom(pred, args))
    return pos, neg


def parse_domain(text: str) -> Domain:
    form = _read(_tokenize(text))
    if not isinstance(form, list) or len(form) < 2 or form[0] != "define":
        raise ParseError("expected (define (domain ...) ...)", *_where(form))
    head = form[1]
    if not isinstance(head, list) or head[0] != "domain" or len(head) != 2:
        raise ParseError("expected (domain <name>)", *_where(head))
    name = str(head[1])

    types: set[str] = set()
    predicates: dict[str, tuple[str, ...]] = {}
    statics: set[str] = set()
    movable: set[str] = set()
    actions: dict[str, ActionSchema] = {}

    for section in form[2:]:
        if not isinstance(section, list) or not section:
            raise ParseError("malformed domain section", *_where(section))
        tag = str(section[0])
        if tag == ":types":
            types |= {str(t) for t in section[1:]}
        elif tag == ":predicates":
            for decl in section[1:]:
                pred = str(decl[0])
                params = _parse_typed_list(decl[1:])
                if not 1 <= len(params) <= 2:
                    raise ParseError(f"predicate {pred} must have arity 1 or 2", *_where(decl))
                if pred in predicates:
                    raise ParseError(f"duplicate predicate: {pred}", *_where(decl))
                for _, t in params:
                    if t not in types:
                        raise ParseError(f"unknown type {t} in predicate {pred}", *_where(decl))
                predicates[pred] = tuple(t for _, t in params)
        elif tag == ":static":
            statics |= {str(p) for p in section[1:]}
        elif tag == ":movable":
            movable |= {str(t) for t in section[1:]}
        elif tag == ":action":
            schema = _parse_action(section, predicates, types)
            if schema.name in actions:
                raise ParseError(f"duplicate action: {schema.name}", *_where(section))
            actions[schema.name] = schema
        else:
            raise ParseError(f"unknown domain section {tag}", *_where(section))

    for p in statics:
        if p not in predicates:
            raise ParseError(f"(:static) names unknown predicate: {p}")
    for t in movable:
        if t not in types:
            raise ParseError(f"(:movable) names unknown type: {t}")
    kinds = {p: (STATIC if p in statics else FLUENT) for p in predicates}
    return Domain(
        name=name,
        types=frozenset(types),
        predicates=predicates,
        kinds=kinds,
        movable_types=frozenset(movable),
        actions=actions,
    )


def _parse_action(section, predicates, types) -> ActionSchema:
    name = str(section[1])
    fields: dict[str, object] = {}
    i = 2
    while i < len(section):
        key = str(section[i])
        if not key.startswith(":") or i + 1 >= len(section):
            raise ParseError(f"malformed action {name}", *_where(section))
        fields[key] = section[i + 1]
        i += 2
    params = _parse_typed_list(fields.get(":parameters", []))
    for v, t in params:
        if not v.startswith("?"):
            raise ParseError(f"parameter {v} of {name} must start with '?'")
        if t not in types:
            raise ParseError(f"unknown type {t} in action {name}")
    pre_pos, pre_neg = _parse_schema_atoms(fields.get(":precondition", ["and"]), predicates)
    add, add_neg = _parse_schema_atoms(fields.get(":effect", ["and"]), predicates)
    return ActionSchema(
        name=name,
        parameters=tuple(params),
        pre_pos=frozenset(pre_pos),
        pre_neg=frozenset(pre_neg),
        add_effects=frozenset(add),
        del_effects=frozenset(add_neg),
    )


def parse_problem(text: str, domain: Domain) -> ProblemSpec:
    form = _read(_tokenize(text))
    if not isinstance(form, list) or len(form) < 2 or form[0] != "define":
        raise ParseError("expected (define (problem ...) ...)", *_where(form))
    head = form[1]
    if not isinstance(head, list) or head[0] != "problem" or len(head) != 2:
        raise ParseError("expected (problem <name>)", *_where(head))
    name = str(head[1])

    objects: dict[str, str] = {}
    init_atoms: list[Atom] = []
    poses: dict[str, Pose] = {}
    goal: list[Atom] = []

    def ground_atom(body) -> Atom:
        pred = str(body[0])
        args = tuple(str(x) for x in body[1:])
        if pred not in domain.predicates:
            raise ParseError(f"unknown predicate: {pred}", *_where(body))
        want = domain.predicates[pred]
        if len(args) != len(want):
            raise ParseError(
                f"arity mismatch for {pred}: expected {len(want)}, got {len(args)}",
                *_where(body),
            )
        for arg, t in zip(args, want):
            if arg not in objects:
                raise ParseError(f"unknown object {arg}", *_where(body))
            if objects[arg] != t:
                raise ParseError(
                    f"object {arg} has type {objects[arg]}, predicate {pred} wants {t}",
                    *_where(body),
                )
        return domain.make_atom(pred, *args)

    for section in form[2:]:
        tag = str(section[0])
        if tag == ":domain":
            if str(section[1]) != domain.name:
                raise ParseError(
                    f"problem targets domain {section[1]}, parsed domain is {domain.name}",
                    *_where(section),
                )
        elif tag == ":objects":
            for obj, t in _parse_typed_list(section[1:]):
                if t not in domain.types:
                    raise ParseError(f"unknown type {t} for object {obj}", *_where(section))
                if obj in objects:
                    raise ParseError(f"duplicate object {obj}", *_where(section))
                objects[obj] = t
        elif tag == ":init":
            for body in section[1:]:
                init_atoms.append(ground_atom(body))
        elif tag == ":poses":
            for body in section[1:]:
                obj = str(body[0])
                if obj not in objects:
                    raise ParseError(f"pose for unknown object {obj}", *_where(body))
                vals = [float(str(v)) for v in body[1:]]
                if len(vals) != 4:
                    raise ParseError(f"pose of {obj} needs 4 numbers", *_where(body))
                poses[obj] = Pose(*vals)
        elif tag == ":goal":
            body = section[1]
            items = body[1:] if body and body[0] == "and" else [body]
            for item in items:
                goal.append(ground_atom(item))
        else:
            raise ParseError(f"unknown problem section {tag}", *_where(section))

    fixtures = {o for o, t in objects.items() if t not in domain.movable_types}
    for obj in objects:
        poses.setdefault(obj, Pose(0.0, 0.0, 0.0, 0.0))
    init = WorldState.from_atoms(objects.keys(), init_atoms, poses, fixtures)
    return ProblemSpec(name=name, domain=domain.name, objects=objects, init=init, goal=frozenset(goal))


def problem_to_text(problem: ProblemSpec) -> str:
    """Serialize a problem back to the documented file format."""
    lines = [f"(define (problem {problem.name})", f"  (:domain {problem.domain})"]
    objs = " ".join(f"{o} - {t}" for o, t in sorted(problem.objects.items()))
    lines.append(f"  (:objects {objs})")
    lines.append("  (:init")
    for a in sorted(problem.init.atoms()):
        lines.append(f"    {a}")
    lines.append("  )")
    lines.append("  (:poses")
    for o in sorted(problem.objects):
        p = problem.init.poses[o]
        lines.append(f"    ({o} {p.x:.6f} {p.y:.6f} {p.z:.6f} {p.yaw:.6f})")
    lines.append("  )")
    goal = " ".join(str(a) for a in sorted(problem.goal))
    lines.append(f"  (:goal (and {goal}))")
    lines.append(")")
    return "\n".join(lines) + "\n"


def ground(domain: Domain, objects: Mapping[str, str]) -> list[GroundAction]:
    """Enumerate all type-consistent ground actions.

    Two parameters of the same type never bind to the same object, so
    ``stack(?x ?y)`` over two blocks yields two actions, not four.
    """
    by_type: dict[str, list[str]] = {}
    for obj, t in sorted(objects.items()):
        by_type.setdefault(t, []).append(obj)

    out: list[GroundAction] = []
    for schema in domain.actions.values():
        pools = [by_type.get(t, []) for _, t in schema.parameters]
        names = [v for v, _ in schema.parameters]
        types = [t for _, t in schema.parameters]
        for combo in itertools.product(*pools):
            clash = False
            for i in range(len(combo)):
                for j in range(i + 1, len(combo)):
                    if types[i] == types[j] and combo[i] == combo[j]:
                        clash = True
                        break
                if clash:
                    break
            if clash:
                continue
            binding = dict(zip(names, combo))
            out.append(
                GroundAction(
                    name=schema.name,
                    args=tuple(combo),
                    pre_pos=frozenset(a.bind(binding, domain.predicate_kind(a.predicate)) for a in schema.pre_pos),
                    pre_neg=frozenset(a.bind(binding, domain.predicate_kind(a.predicate)) for a in schema.pre_neg),
                    add=frozenset(a.bind(binding, FLUENT) for a in schema.add_effects),
                    delete=frozenset(a.bind(binding, FLUENT) for a in schema.del_effects),
                )
            )
    return out


class ContractViolation(RuntimeError):
    """Applying an action whose preconditions do not hold."""


def _atoms_of(state) -> frozenset[Atom]:
    return state.atoms() if isinstance(state, WorldState) else frozenset(state)


def applicable(state, ga: GroundAction) -> bool:
    atoms = _atoms_of(state)
    return ga.pre_pos <= atoms and not (ga.pre_neg & atoms)


def apply_action(state, ga: GroundAction):
    """Successor state under closed-world add/delete semantics."""
    if not applicable(state, ga):
        raise ContractViolation(f"action {ga.signature} not applicable")
    if isinstance(state, WorldState):
        atoms = (state.atoms() - ga.delete) | ga.add
        return state.replace_atoms(atoms)
    return (frozenset(state) - ga.delete) | ga.add


def holds(state, goal_atoms: Iterable[Atom]) -> bool:
    return frozenset(goal_atoms) <= _atoms_of(state)
