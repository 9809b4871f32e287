"""Evaluation harness: effect prediction, rollouts and end-to-end planning."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .induce import LiftedOperator
from .neural import RelationalDeepSym
from .pddl import goal_atoms
from .plan import Plan, ProblemPair, ground, make_problem_pairs, search, validate_plan
from .sim import contact_graph
from .symbols import symbolize_world


@dataclass
class PairResult:
    n_objects: int
    n_actions: int
    status: str
    length: int
    success: bool
    max_error: float
    seconds: float
    goal_already_met: bool


def solve_pair(model: RelationalDeepSym, ops: Sequence[LiftedOperator], pair: ProblemPair,
               timeout_s: float = 10.0, tol_cm: float = 5.0, backend: str | None = None,
               keep_self_relations: bool = True) -> tuple[Plan, PairResult]:
    """Symbolize both scenes, plan over the induced operators and replay the plan."""
    start = time.perf_counter()
    init = symbolize_world(model, pair.init).atoms()
    goal = goal_atoms(symbolize_world(model, pair.goal), contact_graph(pair.goal),
                      keep_self_relations)
    actions = ground(ops, list(pair.init.ids), init)
    plan = search(init, goal, actions, timeout_s=timeout_s, backend=backend)
    success, err = False, float("nan")
    if plan.found:
        verdict = validate_plan(pair.init, plan, pair.goal, tol_cm)
        success, err = verdict.success, verdict.max_error
    return plan, PairResult(len(pair.init), len(pair.actions), plan.status, len(plan), success,
                            err, time.perf_counter() - start, goal <= init)


def _solve_args(args):
    return solve_pair(*args)[1]


def planning_eval(model: RelationalDeepSym, ops: Sequence[LiftedOperator],
                  object_counts: Sequence[int] = (2, 3, 4), action_counts: Sequence[int] = (1, 2, 3),
                  n_pairs: int = 100, seed: int = 0, timeout_s: float = 10.0, tol_cm: float = 5.0,
                  workers: int = 1, backend: str | None = None) -> list[PairResult]:
    """``n_pairs`` problems per object count, split evenly over the action counts."""
    jobs = []
    for n in object_counts:
        share, extra = divmod(n_pairs, len(action_counts))
        for i, k in enumerate(action_counts):
            count = share + (i < extra)
            if count == 0:
                continue
            for pair in make_problem_pairs(count, n, k, seed=seed * 1000 + n * 10 + k):
                jobs.append((model, ops, pair, timeout_s, tol_cm, backend))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_solve_args, jobs, chunksize=8))
    return [_solve_args(j) for j in jobs]


def success_table(results: Sequence[PairResult], sep: str = "\t") -> str:
    """Success rate per (object count, action count) cell plus a per-object-count total."""
    cells: dict[tuple[int, int], list[bool]] = {}
    for r in results:
        cells.setdefault((r.n_objects, r.n_actions), []).append(r.success)
        cells.setdefault((r.n_objects, 0), []).append(r.success)
    lines = [sep.join(["objects", "actions", "pairs", "success_rate"])]
    for (n, k), hits in sorted(cells.items()):
        label = "all" if k == 0 else str(k)
        lines.append(sep.join([str(n), label, str(len(hits)), f"{np.mean(hits):.3f}"]))
    return "\n".join(lines) + "\n"


def success_by_objects(results: Sequence[PairResult]) -> dict[int, float]:
    out: dict[int, list[bool]] = {}
    for r in results:
        out.setdefault(r.n_objects, []).append(r.success)
    return {n: float(np.mean(v)) for n, v in sorted(out.items())}
