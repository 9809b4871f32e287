"""Compare the compiled and pure-Python successor kernels on the same searches.

Usage: python benchmarks/bench_search.py [--objects 5] [--instances 20]
"""

from __future__ import annotations

import argparse
import itertools
import time

import numpy as np

from relsym.induce import LiftedKey, LiftedOperator
from relsym.kernels import BACKENDS
from relsym.plan import ground, search


def stacking_domain() -> list[LiftedOperator]:
    """Blocks-world operators; p0 = clear, r0(x, y) = x on y, r1(x, x) = x on the table."""
    def op(grasp, release, variables, pre, add, delete, support):
        key = LiftedKey.from_literals(grasp, release, variables, True, pre, 1, 3)
        add_u = tuple(sorted(a for a in add if "p" in a[0]))
        del_u = tuple(sorted(a for a in delete if "p" in a[0]))
        add_r = tuple(sorted(a for a in add if a[0].startswith("r")))
        del_r = tuple(sorted(a for a in delete if a[0].startswith("r")))
        return LiftedOperator(key, add_u, del_u, add_r, del_r, support=support)

    move = op("center", "center", ("?a", "?b", "?c"),
              [("p0", "?a"), ("p0", "?b"), ("not_p0", "?c"), ("r0", "?a", "?c")],
              [("p0", "?c"), ("not_p0", "?b"), ("r0", "?a", "?b")],
              [("not_p0", "?c"), ("p0", "?b"), ("r0", "?a", "?c")], 100)
    stack = op("center", "center", ("?a", "?b"),
               [("p0", "?a"), ("p0", "?b"), ("r1", "?a", "?a")],
               [("not_p0", "?b"), ("r0", "?a", "?b")],
               [("p0", "?b"), ("r1", "?a", "?a")], 90)
    unstack = op("center", "left", ("?a", "?c"),
                 [("p0", "?a"), ("not_p0", "?c"), ("r0", "?a", "?c")],
                 [("p0", "?c"), ("r1", "?a", "?a")],
                 [("not_p0", "?c"), ("r0", "?a", "?c")], 80)
    return [move, stack, unstack]


def random_tower_state(rng, n):
    order = rng.permutation(n).tolist()
    atoms = set()
    towers = np.array_split(order, rng.integers(1, n + 1))
    for tower in towers:
        tower = list(map(int, tower))
        if not tower:
            continue
        atoms.add(("r1", tower[0], tower[0]))
        for below, above in zip(tower, tower[1:]):
            atoms.add(("r0", above, below))
        atoms.add(("p0", tower[-1]))
    for o in range(n):
        if ("p0", o) not in atoms:
            atoms.add(("not_p0", o))
    return frozenset(atoms)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--objects", type=int, default=6)
    parser.add_argument("--instances", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    ops = stacking_domain()
    objects = list(range(args.objects))
    actions = ground(ops, objects)
    problems = []
    for _ in range(args.instances):
        init = random_tower_state(rng, args.objects)
        goal = frozenset(a for a in random_tower_state(rng, args.objects) if a[0].startswith("r"))
        problems.append((init, goal))

    print(f"{len(actions)} ground actions, {args.instances} instances, {args.objects} objects")
    print("backend\tseconds\texpanded\tsolved\texpansions_per_s")
    reference = None
    for backend in sorted(BACKENDS):
        start = time.perf_counter()
        plans = [search(i, g, actions, timeout_s=60, backend=backend) for i, g in problems]
        elapsed = time.perf_counter() - start
        expanded = sum(p.expanded for p in plans)
        lengths = [len(p) if p.found else None for p in plans]
        if reference is None:
            reference = lengths
        elif lengths != reference:
            raise SystemExit(f"backends disagree: {reference} vs {lengths}")
        solved = sum(p.found for p in plans)
        print(f"{backend}\t{elapsed:.3f}\t{expanded}\t{solved}\t{expanded / elapsed:.0f}")


if __name__ == "__main__":
    main()
