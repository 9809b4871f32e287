"""Grounding, A* search over ground atoms, and plan replay in the simulator."""

from __future__ import annotations

import heapq
import itertools
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .induce import LiftedOperator
from .kernels import make_kernel
from .sim import ActionSpec, WorldState, init_scene, random_action, resolve_action

FOUND = "Found"
TIMEOUT = "Timeout"
UNSOLVABLE = "Unsolvable"


class InvalidPlan(ValueError):
    pass


@dataclass(frozen=True)
class GroundAction:
    op: LiftedOperator
    args: tuple[int, ...]
    pre: frozenset
    add: frozenset
    delete: frozenset

    @property
    def name(self) -> str:
        return self.op.name

    @property
    def theta(self) -> dict[str, int]:
        return dict(zip(self.op.parameters, self.args))

    @property
    def spec(self) -> ActionSpec:
        key = self.op.key
        theta = self.theta
        return ActionSpec(theta[key.pick_var], key.grasp, theta[key.place_var], key.release)

    def applicable(self, atoms: frozenset) -> bool:
        return self.pre <= atoms

    def apply(self, atoms: frozenset) -> frozenset:
        return (atoms - self.delete) | self.add

    def __str__(self) -> str:
        return "(" + " ".join([self.name] + [f"o{o}" for o in self.args]) + ")"


def _instantiate(op: LiftedOperator, args: Sequence[int]) -> GroundAction:
    pre, add, delete = op.ground(dict(zip(op.parameters, args)))
    return GroundAction(op, tuple(args), pre, add, delete)


def ground(ops: Sequence[LiftedOperator], objects: Sequence[int],
           init: Iterable | None = None) -> list[GroundAction]:
    """Injective groundings of every operator.

    Without ``init`` every permutation of objects is produced. With ``init``,
    only actions whose preconditions are reachable in the delete relaxation
    from ``init`` are kept; this never drops an action applicable in a
    reachable state.
    """
    objects = list(objects)
    if init is None:
        return [_instantiate(op, args) for op in ops
                for args in itertools.permutations(objects, len(op.parameters))]
    reached = set(init)
    found: dict[tuple, GroundAction] = {}
    changed = True
    while changed:
        changed = False
        for op in ops:
            for args in _matches(op, objects, reached):
                if (op.name, args) in found:
                    continue
                act = _instantiate(op, args)
                found[(op.name, args)] = act
                new = act.add - reached
                if new:
                    reached |= new
                    changed = True
    order = {op.name: i for i, op in enumerate(ops)}
    return sorted(found.values(), key=lambda a: (order[a.name], a.args))


def _matches(op: LiftedOperator, objects: Sequence[int], atoms: set):
    """Injective bindings whose preconditions all lie in ``atoms`` (backtracking)."""
    params = op.parameters
    pos = {v: i for i, v in enumerate(params)}
    unary = [[] for _ in params]
    checks = [[] for _ in params]
    for lit in op.key.unary_literals():
        unary[pos[lit[1]]].append(lit[0])
    for lit in op.key.relation_literals():
        i, j = pos[lit[1]], pos[lit[2]]
        checks[max(i, j)].append((lit[0], i, j))
    candidates = [[o for o in objects if all((p, o) in atoms for p in unary[v])]
                  for v in range(len(params))]
    binding: list[int] = []

    def rec(v):
        if v == len(params):
            yield tuple(binding)
            return
        for o in candidates[v]:
            if o in binding:
                continue
            binding.append(o)
            if all((name, binding[i], binding[j]) in atoms for name, i, j in checks[v]):
                yield from rec(v + 1)
            binding.pop()

    yield from rec(0)


@dataclass
class Plan:
    status: str
    steps: list[GroundAction] = field(default_factory=list)
    trace: list[frozenset] = field(default_factory=list)
    expanded: int = 0
    seconds: float = 0.0

    @property
    def found(self) -> bool:
        return self.status == FOUND

    def __len__(self) -> int:
        return len(self.steps)

    def specs(self) -> list[ActionSpec]:
        return [s.spec for s in self.steps]

    def to_text(self) -> str:
        lines = [str(s) for s in self.steps]
        lines.append(f"; status={self.status} length={len(self.steps)} expanded={self.expanded}")
        return "\n".join(lines) + "\n"


def check_plan(init: Iterable, goal: Iterable, steps: Sequence[GroundAction]) -> bool:
    """Every step applicable in its predecessor and the goal holds at the end."""
    state = frozenset(init)
    for step in steps:
        if not step.applicable(state):
            return False
        state = step.apply(state)
    return frozenset(goal) <= state


def search(init: Iterable, goal: Iterable, actions: Sequence[GroundAction],
           timeout_s: float = 10.0, heuristic: str = "scaled_goal_count",
           backend: str | None = None) -> Plan:
    """A* with a goal-count heuristic; ties go to the earlier inserted node.

    ``heuristic="goal_count"`` counts unsatisfied goal atoms.
    ``"scaled_goal_count"`` divides that count by the largest number of goal
    atoms a single action adds (rounded up), which keeps it admissible and
    consistent, and is identical to plain goal count when no action adds more
    than one goal atom.
    """
    start = time.perf_counter()
    init = frozenset(init)
    goal = frozenset(goal)
    if goal <= init:
        return Plan(FOUND, [], [init], 0, time.perf_counter() - start)
    vocab = sorted(set(init) | goal | {a for act in actions for a in act.pre | act.add | act.delete},
                   key=repr)
    index = {a: i for i, a in enumerate(vocab)}
    kernel = make_kernel([[index[a] for a in act.pre] for act in actions],
                         [[index[a] for a in act.add] for act in actions],
                         [[index[a] for a in act.delete] for act in actions],
                         [index[a] for a in goal], len(vocab), backend)
    if heuristic == "goal_count":
        scale = 1
    elif heuristic == "scaled_goal_count":
        scale = max([len(act.add & goal) for act in actions] + [1])
    else:
        raise ValueError(f"unknown heuristic {heuristic!r}")

    s0 = kernel.encode(index[a] for a in init)
    h0 = kernel.goal_count(s0)
    counter = itertools.count()
    open_heap = [(math.ceil(h0 / scale), next(counter), 0, s0)]
    best_g = {s0: 0}
    parent: dict = {s0: None}
    expanded = 0
    while open_heap:
        f, _, g, s = heapq.heappop(open_heap)
        if g > best_g[s]:
            continue
        if kernel.goal_count(s) == 0:
            steps = []
            cur = s
            while parent[cur] is not None:
                prev, a = parent[cur]
                steps.append(actions[a])
                cur = prev
            steps.reverse()
            trace = [init]
            for st in steps:
                trace.append(st.apply(trace[-1]))
            return Plan(FOUND, steps, trace, expanded, time.perf_counter() - start)
        expanded += 1
        if expanded % 64 == 0 and time.perf_counter() - start > timeout_s:
            return Plan(TIMEOUT, [], [], expanded, time.perf_counter() - start)
        for a, t, h in kernel.expand(s):
            ng = g + 1
            if ng < best_g.get(t, ng + 1):
                best_g[t] = ng
                parent[t] = (s, a)
                heapq.heappush(open_heap, (ng + math.ceil(h / scale), next(counter), ng, t))
    return Plan(UNSOLVABLE, [], [], expanded, time.perf_counter() - start)


def bfs_length(init: Iterable, goal: Iterable, actions: Sequence[GroundAction],
               max_depth: int = 12) -> int | None:
    """Optimal plan length by breadth-first search over atom sets (test oracle)."""
    init = frozenset(init)
    goal = frozenset(goal)
    if goal <= init:
        return 0
    seen = {init}
    frontier = deque([(init, 0)])
    while frontier:
        s, d = frontier.popleft()
        if d >= max_depth:
            continue
        for act in actions:
            if act.pre <= s:
                t = (s - act.delete) | act.add
                if t in seen:
                    continue
                if goal <= t:
                    return d + 1
                seen.add(t)
                frontier.append((t, d + 1))
    return None


# -- simulator side -------------------------------------------------------------------------

@dataclass
class Verdict:
    success: bool
    max_error: float
    errors: np.ndarray
    final: WorldState


def validate_plan(world0: WorldState, plan: Plan | Sequence[ActionSpec], goal_world: WorldState,
                  tol_cm: float = 5.0) -> Verdict:
    """Replay the plan and compare final block positions to the goal's."""
    specs = plan.specs() if isinstance(plan, Plan) else list(plan)
    if len(world0) != len(goal_world):
        raise InvalidPlan("initial and goal worlds hold different objects")
    state = world0
    for spec in specs:
        if not (0 <= spec.pick < len(state) and 0 <= spec.place < len(state)):
            raise InvalidPlan(f"step {spec} references a missing object")
        state = resolve_action(state, spec).state
    errors = np.linalg.norm(state.positions() - goal_world.positions(), axis=1)
    max_error = float(errors.max()) if len(errors) else 0.0
    return Verdict(bool(max_error < tol_cm), max_error, errors, state)


@dataclass
class ProblemPair:
    init: WorldState
    goal: WorldState
    actions: list[ActionSpec]

    def __iter__(self):
        return iter((self.init, self.goal))


def make_problem_pairs(n_pairs: int, n_objects: int, n_actions: int, seed: int,
                       max_tries: int = 1000) -> list[ProblemPair]:
    """Goal = initial scene after ``n_actions`` random actions that change it."""
    if n_pairs < 1 or n_objects < 2 or n_actions < 0:
        raise ValueError("n_pairs >= 1, n_objects >= 2 and n_actions >= 0 required")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        world = init_scene(n_objects, int(rng.integers(2**31)))
        state = world
        actions: list[ActionSpec] = []
        tries = 0
        while len(actions) < n_actions:
            tries += 1
            if tries > max_tries:
                raise RuntimeError("could not find enough effective actions")
            act = random_action(rng, n_objects)
            outcome = resolve_action(state, act)
            if outcome.noop:
                continue
            actions.append(act)
            state = outcome.state
        pairs.append(ProblemPair(world, state, actions))
    return pairs
