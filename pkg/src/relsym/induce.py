"""Lifted operator learning from symbolic transitions.

Each record is lifted by naming its objects with variables: the picked object
is ``?a``, the place target ``?b`` and the remaining (contact) objects follow in
a canonical order. The canonical order is the labeling that minimizes a
serialization whose prefix lists each residual object's local signature, so
only permutations inside tied signature classes need to be enumerated.
Records sharing a lifted key form a group; the group's operator uses the most
frequent lifted effect.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .sim import POSITIONS
from .symbols import SymbolicState, SymbolicTransition

log = logging.getLogger(__name__)

VARIABLES = tuple(f"?{c}" for c in "abcdefghijkl")
MAX_OBJECTS = 6
OPERATORS_FORMAT = "relsym-operators"
OPERATORS_VERSION = 1


class InapplicableOperator(ValueError):
    pass


Literal = tuple  # ("p0", "?a"), ("not_p0", "?a"), ("r2", "?a", "?c")


@dataclass(frozen=True)
class LiftedKey:
    """Lifted action plus closed-world lifted preconditions over ``variables``.

    ``unary[v]`` holds the bits of variable ``v``; ``relations`` holds the
    relation bits flattened in (head, first variable, second variable) order.
    """

    grasp: str
    release: str
    variables: tuple[str, ...]
    has_place: bool
    unary: tuple[tuple[int, ...], ...]
    relations: tuple[int, ...]
    heads: int

    @property
    def pick_var(self) -> str:
        return self.variables[0]

    @property
    def place_var(self) -> str | None:
        return self.variables[1] if self.has_place else None

    @property
    def d_k(self) -> int:
        return len(self.unary[0]) if self.unary else 0

    def unary_literals(self) -> list[Literal]:
        out = []
        for v, bits in zip(self.variables, self.unary):
            for b, bit in enumerate(bits):
                out.append((f"p{b}" if bit else f"not_p{b}", v))
        return out

    def relation_literals(self) -> list[Literal]:
        n = len(self.variables)
        out = []
        for flat, bit in enumerate(self.relations):
            if bit:
                k, rest = divmod(flat, n * n)
                i, j = divmod(rest, n)
                out.append((f"r{k}", self.variables[i], self.variables[j]))
        return out

    def literals(self) -> list[Literal]:
        return self.unary_literals() + self.relation_literals()

    def serialize(self) -> str:
        unary = ",".join("".join(map(str, bits)) for bits in self.unary)
        rel = "".join(map(str, self.relations))
        return (f"{self.grasp}|{self.release}|{len(self.variables)}|{int(self.has_place)}"
                f"|{self.heads}|{unary}|{rel}")

    def digest(self) -> str:
        return hashlib.blake2b(self.serialize().encode(), digest_size=4).hexdigest()

    @classmethod
    def from_literals(cls, grasp: str, release: str, variables: Sequence[str],
                      has_place: bool, literals: Iterable[Literal], d_k: int, heads: int):
        variables = tuple(variables)
        pos = {v: i for i, v in enumerate(variables)}
        n = len(variables)
        unary = np.zeros((n, d_k), np.uint8)
        seen = np.zeros((n, d_k), bool)
        rel = np.zeros((heads, n, n), np.uint8)
        for lit in literals:
            name = lit[0]
            if name.startswith("not_p"):
                seen[pos[lit[1]], int(name[5:])] = True
            elif name.startswith("p"):
                b = int(name[1:])
                unary[pos[lit[1]], b] = 1
                seen[pos[lit[1]], b] = True
            elif name.startswith("r"):
                rel[int(name[1:]), pos[lit[1]], pos[lit[2]]] = 1
            else:
                raise ValueError(f"unknown predicate in {lit}")
        if not seen.all():
            raise ValueError("every variable needs a p/not_p literal for every unary bit")
        return cls(grasp, release, variables, has_place,
                   tuple(tuple(int(b) for b in row) for row in unary),
                   tuple(int(b) for b in rel.reshape(-1)), heads)


Effect = tuple  # (add_unary, del_unary, add_rel, del_rel), each a sorted tuple of literals
EMPTY_EFFECT: Effect = ((), (), (), ())


@dataclass(frozen=True)
class LiftedOperator:
    key: LiftedKey
    add_unary: tuple[Literal, ...] = ()
    del_unary: tuple[Literal, ...] = ()
    add_rel: tuple[Literal, ...] = ()
    del_rel: tuple[Literal, ...] = ()
    support: int = 0
    conflict_ratio: float = 1.0

    @property
    def parameters(self) -> tuple[str, ...]:
        return self.key.variables

    @property
    def effect(self) -> Effect:
        return (self.add_unary, self.del_unary, self.add_rel, self.del_rel)

    @property
    def is_empty(self) -> bool:
        return self.effect == EMPTY_EFFECT

    @property
    def name(self) -> str:
        head = "pick-place" if self.key.has_place else "pick"
        return f"{head}_{self.key.grasp}_{self.key.release}__k{self.key.digest()}"

    def adds(self) -> tuple[Literal, ...]:
        return self.add_unary + self.add_rel

    def deletes(self) -> tuple[Literal, ...]:
        return self.del_unary + self.del_rel

    def ground(self, theta: Mapping[str, int]):
        """(preconditions, add, delete) as ground atom sets under ``theta``."""
        def g(lits):
            return frozenset((lit[0],) + tuple(theta[v] for v in lit[1:]) for lit in lits)
        return g(self.key.literals()), g(self.adds()), g(self.deletes())


# -- canonicalization -----------------------------------------------------------------

def _signature(U, R, i, a, b):
    sig = list(U[i])
    for k in range(R.shape[0]):
        sig.append(R[k, i, i])
        sig.append(R[k, i, a])
        sig.append(R[k, a, i])
        if b is not None:
            sig.append(R[k, i, b])
            sig.append(R[k, b, i])
    return tuple(int(s) for s in sig)


def _serialization(order, U, R, n_fixed):
    head = []
    for i in order[:n_fixed]:
        head.extend(U[i])
    for k in range(R.shape[0]):
        for i in order[:n_fixed]:
            for j in order[:n_fixed]:
                head.append(R[k, i, j])
    a = order[0]
    b = order[1] if n_fixed == 2 else None
    sigs = [_signature(U, R, i, a, b) for i in order[n_fixed:]]
    tail = []
    residual = order[n_fixed:]
    for k in range(R.shape[0]):
        for i in residual:
            for j in residual:
                if i != j:
                    tail.append(R[k, i, j])
    return (tuple(int(h) for h in head), tuple(sigs), tuple(int(t) for t in tail))


def _candidate_orders(U, R, a, b, residual):
    """Residual orderings with sorted signatures; ties are enumerated exhaustively."""
    sig = {i: _signature(U, R, i, a, b) for i in residual}
    ranked = sorted(residual, key=lambda i: (sig[i], i))
    classes = [list(g) for _, g in itertools.groupby(ranked, key=lambda i: sig[i])]
    for combo in itertools.product(*(itertools.permutations(c) for c in classes)):
        yield [i for part in combo for i in part]


def _key_from_order(order, U, R, grasp, release, has_place) -> LiftedKey:
    n = len(order)
    Rp = R[:, order][:, :, order]
    return LiftedKey(grasp, release, VARIABLES[:n], has_place,
                     tuple(tuple(int(b) for b in U[i]) for i in order),
                     tuple(int(b) for b in Rp.reshape(-1)), R.shape[0])


def _lifted_effect(order, pre: SymbolicState, post: SymbolicState) -> Effect:
    add_u, del_u, add_r, del_r = [], [], [], []
    names = VARIABLES[:len(order)]
    for v, i in zip(names, order):
        for b in range(pre.d_k):
            before, after = pre.unary[i, b], post.unary[i, b]
            if before != after:
                add_u.append((f"p{b}" if after else f"not_p{b}", v))
                del_u.append((f"p{b}" if before else f"not_p{b}", v))
    for k in range(pre.heads):
        for vi, i in zip(names, order):
            for vj, j in zip(names, order):
                before, after = pre.relations[k, i, j], post.relations[k, i, j]
                if before != after:
                    (add_r if after else del_r).append((f"r{k}", vi, vj))
    return (tuple(sorted(add_u)), tuple(sorted(del_u)), tuple(sorted(add_r)), tuple(sorted(del_r)))


def _canonical(t: SymbolicTransition):
    pre = t.pre
    ids = pre.ids
    a = ids.index(t.action.pick)
    has_place = t.action.place in ids
    b = ids.index(t.action.place) if has_place else None
    fixed = [a] if b is None else [a, b]
    residual = [i for i in range(len(ids)) if i not in fixed]
    U, R = pre.unary, pre.relations
    best = None
    best_orders = []
    for rest in _candidate_orders(U, R, a, b, residual):
        order = fixed + rest
        s = _serialization(order, U, R, len(fixed))
        if best is None or s < best:
            best, best_orders = s, [order]
        elif s == best:
            best_orders.append(order)
    key = _key_from_order(best_orders[0], U, R, t.action.grasp, t.action.release, has_place)
    return key, best_orders


def canonicalize(t: SymbolicTransition) -> tuple[LiftedKey, dict[str, int]]:
    """Lifted key of the record's preconditions and action, with its substitution.

    Among automorphic labelings the one giving the smallest lifted effect wins,
    so symmetric objects do not split a group's effect votes.
    """
    key, orders = _canonical(t)
    if len(orders) > 1:
        order = min(orders, key=lambda o: _effect_sort_key(_lifted_effect(o, t.pre, t.post)))
    else:
        order = orders[0]
    theta = {v: t.ids[i] for v, i in zip(key.variables, order)}
    return key, theta


def lift(t: SymbolicTransition) -> tuple[LiftedKey, dict[str, int], Effect]:
    key, theta = canonicalize(t)
    pos = {o: i for i, o in enumerate(t.ids)}
    order = [pos[theta[v]] for v in key.variables]
    return key, theta, _lifted_effect(order, t.pre, t.post)


def _effect_sort_key(effect: Effect) -> str:
    return json.dumps(effect)


# -- grouping and effects -------------------------------------------------------------

@dataclass
class Group:
    key: LiftedKey
    members: list[int] = field(default_factory=list)
    effects: list[Effect] = field(default_factory=list)
    substitutions: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.members)


def group_samples(transitions: Sequence[SymbolicTransition],
                  max_objects: int = MAX_OBJECTS) -> dict[LiftedKey, Group]:
    """Partition record indices by lifted key (insertion-ordered)."""
    groups: dict[LiftedKey, Group] = {}
    skipped = 0
    for idx, t in enumerate(transitions):
        if len(t.ids) > max_objects:
            skipped += 1
            continue
        key, theta, effect = lift(t)
        g = groups.get(key)
        if g is None:
            g = groups[key] = Group(key)
        g.members.append(idx)
        g.effects.append(effect)
        g.substitutions.append(theta)
    if skipped:
        log.warning("skipped %d records with more than %d relevant objects", skipped, max_objects)
    return groups


def lifted_effects(group: Group) -> tuple[Effect, float]:
    """Most frequent lifted effect (ties: smallest serialization) and its share."""
    if not group.effects:
        raise ValueError("empty group")
    counts = Counter(group.effects)
    top = max(counts.values())
    modal = min((e for e, c in counts.items() if c == top), key=_effect_sort_key)
    return modal, top / len(group.effects)


def operator_from_group(group: Group) -> LiftedOperator:
    effect, ratio = lifted_effects(group)
    return LiftedOperator(group.key, *effect, support=len(group), conflict_ratio=ratio)


def _op_order(op: LiftedOperator):
    return (-op.support, op.key.serialize())


def induce_operators(transitions: Sequence[SymbolicTransition], min_support: int = 50,
                     groups: dict[LiftedKey, Group] | None = None) -> list[LiftedOperator]:
    """One operator per group with at least ``min_support`` members, most supported first."""
    groups = group_samples(transitions) if groups is None else groups
    ops = [operator_from_group(g) for g in groups.values() if len(g) >= min_support]
    return sorted(ops, key=_op_order)


def aliasing_rate(groups: Mapping[LiftedKey, Group]) -> float:
    """Fraction of grouped records whose lifted effect differs from their group's mode."""
    total = sum(len(g) for g in groups.values())
    agree = sum(round(lifted_effects(g)[1] * len(g)) for g in groups.values())
    return 1.0 - agree / total if total else 0.0


# -- application ------------------------------------------------------------------------

def apply_operator(state: SymbolicState, op: LiftedOperator,
                   theta: Mapping[str, int]) -> SymbolicState:
    """Apply ``op`` grounded by ``theta``; unmentioned symbols stay as they are."""
    missing = [v for v in op.parameters if v not in theta]
    if missing:
        raise InapplicableOperator(f"substitution leaves {missing} unbound")
    bound = [theta[v] for v in op.parameters]
    if len(set(bound)) != len(bound):
        raise InapplicableOperator("substitution is not injective")
    if any(o not in state.ids for o in bound):
        raise InapplicableOperator("substitution names objects outside the state")
    pre, add, delete = op.ground(theta)
    atoms = state.atoms()
    unmet = pre - atoms
    if unmet:
        raise InapplicableOperator(f"{op.name}: unmet preconditions {sorted(unmet)}")
    return SymbolicState.from_atoms(state.ids, (atoms - delete) | add, state.d_k, state.heads)


# -- operator files ------------------------------------------------------------------------

def _lit_str(lit: Literal) -> str:
    return "(" + " ".join(lit) + ")"


def _lit_parse(s: str) -> Literal:
    return tuple(s.strip("()").split())


def operators_to_json(ops: Sequence[LiftedOperator]) -> str:
    d_k = ops[0].key.d_k if ops else 0
    heads = ops[0].key.heads if ops else 0
    body = {"format": OPERATORS_FORMAT, "version": OPERATORS_VERSION, "d_k": d_k, "K": heads,
            "operators": []}
    for op in ops:
        body["operators"].append({
            "name": op.name,
            "grasp": op.key.grasp,
            "release": op.key.release,
            "parameters": list(op.key.variables),
            "has_place": op.key.has_place,
            "preconditions": [_lit_str(lit) for lit in op.key.literals()],
            "add_unary": [_lit_str(lit) for lit in op.add_unary],
            "del_unary": [_lit_str(lit) for lit in op.del_unary],
            "add_rel": [_lit_str(lit) for lit in op.add_rel],
            "del_rel": [_lit_str(lit) for lit in op.del_rel],
            "support": op.support,
            "conflict_ratio": op.conflict_ratio,
        })
    return json.dumps(body, indent=1) + "\n"


def operators_from_json(text: str) -> list[LiftedOperator]:
    body = json.loads(text)
    if body.get("format") != OPERATORS_FORMAT or body.get("version") != OPERATORS_VERSION:
        raise ValueError("not a supported operator file")
    ops = []
    for o in body["operators"]:
        key = LiftedKey.from_literals(o["grasp"], o["release"], o["parameters"], o["has_place"],
                                      [_lit_parse(s) for s in o["preconditions"]],
                                      body["d_k"], body["K"])
        ops.append(LiftedOperator(
            key,
            tuple(_lit_parse(s) for s in o["add_unary"]),
            tuple(_lit_parse(s) for s in o["del_unary"]),
            tuple(_lit_parse(s) for s in o["add_rel"]),
            tuple(_lit_parse(s) for s in o["del_rel"]),
            int(o["support"]), float(o["conflict_ratio"])))
    return ops


def save_operators(path, ops: Sequence[LiftedOperator]) -> None:
    with open(path, "w") as f:
        f.write(operators_to_json(ops))


def load_operators(path) -> list[LiftedOperator]:
    with open(path) as f:
        return operators_from_json(f.read())
