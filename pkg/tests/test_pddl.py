import numpy as np
import pytest

from oracles import replay_reference
from tampkit.pddl import (
    ContractViolation,
    ParseError,
    apply_action,
    applicable,
    ground,
    holds,
    parse_domain,
    parse_problem,
    problem_to_text,
)
from tampkit.scene import atom
from tampkit.tasks import gen_instance, make_task

BLOCKS = make_task("block4").domain_text


def test_blocks_domain_has_four_schemas():
    domain = parse_domain(BLOCKS)
    assert set(domain.actions) == {"pick", "place", "stack", "unstack"}
    assert domain.kinds["graspable"] == "static"
    assert domain.kinds["onblock"] == "fluent"
    assert domain.movable_types == {"block"}


def test_kitchen_domain_parses():
    domain = parse_domain(make_task("cook3").domain_text)
    assert set(domain.actions) == {"open", "close", "pick", "wash", "cut", "cook", "cookafter"}
    assert domain.kinds["cookorder"] == "static"


PROBLEM_EMPTY = """
(define (problem empty)
  (:domain blocks)
  (:objects)
  (:init)
  (:goal (and)))
"""


def test_empty_objects_parse_ok():
    domain = parse_domain(BLOCKS)
    problem = parse_problem(PROBLEM_EMPTY, domain)
    assert problem.objects == {}
    assert problem.goal == frozenset()


def test_arity_error_carries_position():
    domain = parse_domain(BLOCKS)
    text = """
(define (problem bad)
  (:domain blocks)
  (:objects a - block table - table)
  (:init (onblock a))
  (:goal (and)))
"""
    with pytest.raises(ParseError, match="arity") as err:
        parse_problem(text, domain)
    assert err.value.line > 0


def test_unknown_predicate_and_type_errors():
    domain = parse_domain(BLOCKS)
    with pytest.raises(ParseError, match="unknown predicate"):
        parse_problem(
            "(define (problem p) (:domain blocks) (:objects a - block) (:init (wat a)) (:goal (and)))",
            domain,
        )
    with pytest.raises(ParseError, match="unknown type"):
        parse_problem(
            "(define (problem p) (:domain blocks) (:objects a - widget) (:init) (:goal (and)))",
            domain,
        )


def test_syntax_error_reports_line():
    with pytest.raises(ParseError):
        parse_domain("(define (domain d) (:types t) (:predicates (p ?x - t))")  # unbalanced


def test_problem_text_roundtrip():
    task = make_task("block6")
    problem, _ = gen_instance(task, 3)
    text = problem_to_text(problem)
    reparsed = parse_problem(text, task.domain)
    assert reparsed.init.atoms() == problem.init.atoms()
    assert reparsed.goal == problem.goal
    assert reparsed.init.poses.keys() == problem.init.poses.keys()
    for o in problem.init.poses:
        a, b = reparsed.init.poses[o], problem.init.poses[o]
        assert abs(a.x - b.x) < 1e-5 and abs(a.z - b.z) < 1e-5


class TestGrounding:
    def test_two_blocks_stack_grounds_to_two(self):
        domain = parse_domain(BLOCKS)
        gas = ground(domain, {"a": "block", "b": "block", "table": "table", "arm": "arm"})
        stacks = [ga for ga in gas if ga.name == "stack"]
        assert len(stacks) == 2  # same-typed parameters never alias

    def test_block4_count_matches_closed_form(self):
        task = make_task("block4")
        gas = ground(task.domain, task.objects)
        n = 4
        # pick/place: n blocks x 1 table x 1 arm; stack/unstack: n(n-1) x 1 arm.
        assert len(gas) == 2 * n + 2 * n * (n - 1)

    def test_zero_objects(self):
        domain = parse_domain(BLOCKS)
        assert ground(domain, {}) == []


class TestSemantics:
    @pytest.fixture()
    def setup(self):
        task = make_task("block4")
        for seed in range(20):
            problem, _ = gen_instance(task, seed)
            state = problem.init
            if any(
                atom("clear", o) in state.atoms() and atom("ontable", o, "table") in state.atoms()
                for o in state.movables
            ):
                break
        gas = {(ga.name, ga.args): ga for ga in ground(task.domain, task.objects)}
        return task, problem, gas

    def test_pick_effects(self, setup):
        task, problem, gas = setup
        state = problem.init
        target = next(
            o for o in sorted(state.movables)
            if atom("clear", o) in state.atoms() and atom("ontable", o, "table") in state.atoms()
        )
        ga = gas[("pick", (target, "table", "arm"))]
        assert applicable(state, ga)
        nxt = apply_action(state, ga)
        assert atom("inhand", target) in nxt.atoms()
        assert atom("handempty", "arm") not in nxt.atoms()

    def test_empty_goal_holds(self, setup):
        _, problem, _ = setup
        assert holds(problem.init, [])

    def test_apply_inapplicable_raises(self, setup):
        task, problem, gas = setup
        covered = next(
            o for o in sorted(problem.init.movables) if atom("clear", o) not in problem.init.atoms()
        )
        ga = gas[("pick", (covered, "table", "arm"))]
        with pytest.raises(ContractViolation):
            apply_action(problem.init, ga)

    def test_pick_place_inverse(self, setup):
        task, problem, gas = setup
        state = problem.init
        target = next(
            o for o in sorted(state.movables)
            if atom("clear", o) in state.atoms() and atom("ontable", o, "table") in state.atoms()
        )
        up = apply_action(state, gas[("pick", (target, "table", "arm"))])
        down = apply_action(up, gas[("place", (target, "table", "arm"))])
        assert down.atoms() == state.atoms()

    def test_holds_monotone(self, setup):
        task, problem, _ = setup
        goal = set(list(problem.goal)[:2])
        bigger = problem.init.atoms() | problem.goal
        assert holds(bigger, goal)

    def test_random_walk_matches_reference(self, setup):
        task, problem, gas = setup
        actions = list(gas.values())
        rng = np.random.default_rng(0)
        for _ in range(200):
            state = problem.init
            trace = []
            for _ in range(8):
                apps = [ga for ga in actions if applicable(state, ga)]
                if not apps:
                    break
                ga = apps[int(rng.integers(len(apps)))]
                trace.append(ga)
                state = apply_action(state, ga)
                assert not (ga.add & ga.delete)
            ok, _ = replay_reference(problem.init.atoms(), trace, frozenset())
            assert ok
            # the reference replay must land on the same atom set
            ref = frozenset(problem.init.atoms())
            for ga in trace:
                ref = (ref - ga.delete) | ga.add
            assert ref == state.atoms()
