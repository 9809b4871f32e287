import numpy as np
import pytest

import oracle_env
from relsym.induce import induce_operators
from relsym.pddl import (PddlError, PddlSyntaxError, emit_domain, emit_problem, goal_atoms,
                         parse_domain, parse_plan, parse_problem)
from relsym.symbols import SymbolicState

HAND_DOMAIN = """; written by hand
(define (domain relsym)
  (:requirements :strips)
  (:predicates (p0 ?x) (not_p0 ?x) (r0 ?x ?y) (r1 ?x ?y) (r2 ?x ?y))
  ; support=12 conflict_ratio=0.75
  (:action pick-place_center_center__k00ff
    :parameters (?a ?b)
    :precondition (and (p0 ?a) (not_p0 ?b) (r0 ?a ?b))
    :effect (and (r1 ?b ?a) (not (r0 ?a ?b))))
  (:action PICK-PLACE_left_right__k01
    :parameters (?a ?b ?c)
    :precondition (and (not_p0 ?a) (p0 ?b) (p0 ?c))
    :effect (and (p0 ?a) (not (not_p0 ?a))))
)
"""


@pytest.fixture(scope="module")
def ops():
    return induce_operators(oracle_env.generate(1000, 0), 5)


def state(ids, unary, rel=None):
    n = len(ids)
    return SymbolicState(tuple(ids), np.asarray(unary, np.uint8).reshape(n, 1),
                         np.zeros((3, n, n), np.uint8) if rel is None else np.asarray(rel, np.uint8))


def test_domain_round_trip(ops):
    text = emit_domain(ops)
    back = parse_domain(text)
    assert back == ops
    assert emit_domain(back) == text


def test_domain_emission_byte_stable(ops):
    assert emit_domain(ops) == emit_domain(list(ops))


def test_hand_written_domain():
    ops = parse_domain(HAND_DOMAIN)
    assert len(ops) == 2
    a, b = ops
    assert (a.key.grasp, a.key.release, a.parameters) == ("center", "center", ("?a", "?b"))
    assert (a.support, a.conflict_ratio) == (12, 0.75)
    assert a.add_rel == (("r1", "?b", "?a"),) and a.del_rel == (("r0", "?a", "?b"),)
    assert b.add_unary == (("p0", "?a"),) and b.del_unary == (("not_p0", "?a"),)
    assert len(b.parameters) == 3 and b.support == 0


def test_unary_flip_emits_both_literals(ops):
    text = emit_domain(ops)
    for op in ops:
        for lit in op.add_unary:
            twin = lit[0][4:] if lit[0].startswith("not_") else "not_" + lit[0]
            assert (twin,) + lit[1:] in op.del_unary
    assert "(not_p0 ?b) (r0 ?a ?b) (not (p0 ?b))" in text


@pytest.mark.parametrize("text, line, col", [
    ("(define (domain x)\n  (:predicates (p0 ?x)\n", 2, 3),
    ("(define (domain x))\n)", 2, 1),
    ("(define (domain x)) extra", 1, 21),
    ("", 1, 1),
])
def test_syntax_errors_carry_position(text, line, col):
    with pytest.raises(PddlSyntaxError) as info:
        parse_domain(text)
    assert (info.value.line, info.value.col) == (line, col)
    assert f"line {line}, column {col}" in str(info.value)


def test_semantic_errors():
    with pytest.raises(PddlError, match="unknown predicate"):
        parse_domain(HAND_DOMAIN.replace("(r1 ?b ?a)", "(r9 ?b ?a)"))
    with pytest.raises(PddlError, match="expects 2 arguments"):
        parse_domain(HAND_DOMAIN.replace("(r0 ?a ?b))\n    :effect", "(r0 ?a))\n    :effect"))
    with pytest.raises(PddlError, match="undeclared"):
        parse_domain(HAND_DOMAIN.replace("(p0 ?a) (not_p0 ?b)", "(p0 ?z) (not_p0 ?b)"))
    with pytest.raises(PddlError):
        emit_domain([])


def test_goal_contacts_filter_relations():
    rel = np.ones((3, 3, 3), np.uint8)
    goal = state([1, 2, 3], [1, 0, 1], rel)
    only_unary = goal_atoms(goal, [], keep_self_relations=False)
    assert only_unary == {("p0", 1), ("not_p0", 2), ("p0", 3)}
    with_self = goal_atoms(goal, [])
    assert {a for a in with_self if a[0].startswith("r")} == {
        (f"r{k}", o, o) for k in range(3) for o in (1, 2, 3)}
    contact = goal_atoms(goal, [(2, 3)], keep_self_relations=False) - only_unary
    assert contact == {(f"r{k}", i, j) for k in range(3) for i, j in ((2, 3), (3, 2))}
    with pytest.raises(PddlError):
        goal_atoms(goal, [(1, 9)])


def test_problem_round_trip():
    rng = np.random.default_rng(0)
    init = state([4, 0, 7], [1, 0, 0], rng.integers(0, 2, (3, 3, 3)))
    goal = state([4, 0, 7], [0, 1, 0], rng.integers(0, 2, (3, 3, 3)))
    text = emit_problem(init, goal, [(4, 7)])
    back, goals = parse_problem(text)
    assert back == init
    assert goals == goal_atoms(goal, [(4, 7)])
    assert emit_problem(init, goal, [(4, 7)]) == text


def test_problem_unknown_goal_object():
    init = state([0, 1], [1, 0])
    goal = state([0, 1, 2], [1, 0, 0])
    with pytest.raises(PddlError, match="unknown objects"):
        emit_problem(init, goal, [])
    text = emit_problem(init, state([0, 1], [0, 0]), []).replace("(p0 o0)", "(p0 o5)")
    with pytest.raises(PddlError):
        parse_problem(text)


def test_empty_goal_parses():
    text = "(define (problem t) (:domain relsym) (:objects o1 o2) (:init (p0 o1)) (:goal (and)))"
    init, goal = parse_problem(text)
    assert goal == frozenset() and init.ids == (1, 2)


def test_parse_plan():
    out = "; header\n(pick-place_center_center__k1 o1 o2)\n  (PICK_left_left__k2 O3 o4)  \nnoise\n"
    assert parse_plan(out) == [("pick-place_center_center__k1", "o1", "o2"),
                               ("pick_left_left__k2", "o3", "o4")]
