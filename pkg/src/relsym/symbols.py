"""Discrete views of continuous states produced by a trained network."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .neural import RelationalDeepSym
from .sim import ActionSpec, Transition

SYMBOLIC_FORMAT = "relsym-symbolic"

Atom = tuple  # ("p0", obj) | ("not_p0", obj) | ("r1", obj, obj)


def unary_predicates(d_k: int) -> list[str]:
    return [f"p{i}" for i in range(d_k)]


def relation_predicates(heads: int) -> list[str]:
    return [f"r{k}" for k in range(heads)]


@dataclass(frozen=True, eq=False)
class SymbolicState:
    """Unary bits ``(n, d_k)`` and relation bits ``(K, n, n)`` over ``ids``."""

    ids: tuple[int, ...]
    unary: np.ndarray
    relations: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if self.unary.shape[0] != n or self.relations.shape[1:] != (n, n):
            raise ValueError("unary bits and relation matrices must cover the same objects")

    def __eq__(self, other):
        return (isinstance(other, SymbolicState) and self.ids == other.ids
                and np.array_equal(self.unary, other.unary)
                and np.array_equal(self.relations, other.relations))

    def __hash__(self):
        return hash((self.ids, self.unary.tobytes(), self.relations.tobytes()))

    def __repr__(self):
        return f"SymbolicState(ids={self.ids}, atoms={sorted(self.atoms())})"

    @property
    def d_k(self) -> int:
        return self.unary.shape[1]

    @property
    def heads(self) -> int:
        return self.relations.shape[0]

    def index(self, obj: int) -> int:
        return self.ids.index(obj)

    def atoms(self) -> frozenset:
        """Ground atoms: one of ``p``/``not_p`` per object and bit, true relations only."""
        out = set()
        for r, obj in enumerate(self.ids):
            for b in range(self.d_k):
                out.add((f"p{b}" if self.unary[r, b] else f"not_p{b}", obj))
        for k, i, j in zip(*np.nonzero(self.relations)):
            out.add((f"r{k}", self.ids[i], self.ids[j]))
        return frozenset(out)

    @classmethod
    def from_atoms(cls, ids: Sequence[int], atoms: Iterable[Atom], d_k: int, heads: int):
        ids = tuple(ids)
        pos = {o: r for r, o in enumerate(ids)}
        unary = np.zeros((len(ids), d_k), np.uint8)
        rel = np.zeros((heads, len(ids), len(ids)), np.uint8)
        for a in atoms:
            name = a[0]
            if name.startswith("not_p"):
                continue
            if name.startswith("p"):
                unary[pos[a[1]], int(name[1:])] = 1
            elif name.startswith("r"):
                rel[int(name[1:]), pos[a[1]], pos[a[2]]] = 1
        return cls(ids, unary, rel)

    def restrict(self, ids: Sequence[int]) -> "SymbolicState":
        idx = [self.index(o) for o in ids]
        return SymbolicState(tuple(ids), self.unary[idx],
                             self.relations[:, idx][:, :, idx])

    def to_dict(self) -> dict:
        return {"unary": self.unary.tolist(), "relations": self.relations.tolist()}

    @classmethod
    def from_dict(cls, ids, d: dict) -> "SymbolicState":
        return cls(tuple(ids), np.asarray(d["unary"], np.uint8).reshape(len(ids), -1),
                   np.asarray(d["relations"], np.uint8).reshape(-1, len(ids), len(ids)))


@dataclass(frozen=True, eq=False)
class SymbolicTransition:
    pre: SymbolicState
    action: ActionSpec
    post: SymbolicState

    def __post_init__(self):
        if self.pre.ids != self.post.ids:
            raise ValueError("pre and post symbolic states cover different objects")

    def __eq__(self, other):
        return (isinstance(other, SymbolicTransition) and self.action == other.action
                and self.pre == other.pre and self.post == other.post)

    @property
    def ids(self) -> tuple[int, ...]:
        return self.pre.ids

    def to_record(self) -> dict:
        return {"ids": list(self.ids), "pre": self.pre.to_dict(),
                "action": self.action.to_list(), "post": self.post.to_dict()}

    @classmethod
    def from_record(cls, r: dict) -> "SymbolicTransition":
        return cls(SymbolicState.from_dict(r["ids"], r["pre"]),
                   ActionSpec.from_list(r["action"]),
                   SymbolicState.from_dict(r["ids"], r["post"]))


def _check_dims(model: RelationalDeepSym, X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != model.cfg.d_o:
        raise ValueError(f"feature matrix of shape {X.shape} does not match d_o={model.cfg.d_o}")


def symbolize_state(model: RelationalDeepSym, X, ids: Sequence[int] | None = None) -> SymbolicState:
    X = np.asarray(X, dtype=float)
    _check_dims(model, X)
    ids = tuple(range(len(X))) if ids is None else tuple(ids)
    unary, rel = model.symbols(X)
    return SymbolicState(ids, unary, rel)


def symbolize_world(model: RelationalDeepSym, world) -> SymbolicState:
    return symbolize_state(model, world.feature_matrix(), tuple(world.ids))


def symbolize_dataset(model: RelationalDeepSym,
                      transitions: Sequence[Transition]) -> list[SymbolicTransition]:
    """Symbolize pre and post features of every record, preserving order."""
    if not transitions:
        return []
    out: list[SymbolicTransition | None] = [None] * len(transitions)
    by_n: dict[int, list[int]] = {}
    for i, t in enumerate(transitions):
        by_n.setdefault(len(t), []).append(i)
    for n, idx in by_n.items():
        for lo in range(0, len(idx), 2048):
            chunk = idx[lo:lo + 2048]
            pre = np.stack([transitions[i].pre for i in chunk])
            post = np.stack([transitions[i].post for i in chunk])
            _check_dims(model, pre[0])
            up, rp = model.unary_bits(pre).astype(np.uint8), model.relation_bits(pre).astype(np.uint8)
            uq, rq = model.unary_bits(post).astype(np.uint8), model.relation_bits(post).astype(np.uint8)
            for r, i in enumerate(chunk):
                t = transitions[i]
                out[i] = SymbolicTransition(SymbolicState(t.ids, up[r], rp[r]), t.action,
                                            SymbolicState(t.ids, uq[r], rq[r]))
    return out  # type: ignore[return-value]


def dumps_symbolic(records: Iterable[SymbolicTransition], d_k: int, heads: int) -> str:
    header = {"format": SYMBOLIC_FORMAT, "d_k": d_k, "K": heads}
    lines = [json.dumps(header)]
    lines.extend(json.dumps(r.to_record()) for r in records)
    return "\n".join(lines) + "\n"


def save_symbolic(path, records: Sequence[SymbolicTransition], d_k: int, heads: int) -> None:
    with open(path, "w") as f:
        f.write(dumps_symbolic(records, d_k, heads))


def load_symbolic(path) -> list[SymbolicTransition]:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != SYMBOLIC_FORMAT:
            raise ValueError(f"{path}: not a symbolic dataset")
        return [SymbolicTransition.from_record(json.loads(line)) for line in f if line.strip()]
