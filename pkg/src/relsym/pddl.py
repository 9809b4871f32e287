"""PDDL (STRIPS fragment) emission and parsing for learned operators.

Unary bits appear as a ``p<i>``/``not_p<i>`` predicate pair so preconditions
stay positive; relation heads are ``r<k>`` over ordered pairs. The parser
accepts the subset the emitter produces (plus comments and free whitespace).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .induce import LiftedKey, LiftedOperator
from .symbols import SymbolicState

DOMAIN_NAME = "relsym"
_META = re.compile(r";\s*support=(\d+)\s+conflict_ratio=(\S+)")
_ACTION_NAME = re.compile(r"^(pick-place|pick)_(left|center|right)_(left|center|right)__k([0-9a-f]+)$")


class PddlError(ValueError):
    pass


class PddlSyntaxError(PddlError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


class Token(str):
    line: int
    col: int


class SList(list):
    line: int
    col: int


def _tok(text: str, line: int, col: int) -> Token:
    t = Token(text)
    t.line, t.col = line, col
    return t


def tokenize(text: str):
    """Yield tokens with 1-based positions; collect comments separately."""
    comments = []
    tokens = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line, col, i = line + 1, 1, i + 1
        elif ch.isspace():
            i, col = i + 1, col + 1
        elif ch == ";":
            j = text.find("\n", i)
            j = n if j < 0 else j
            comments.append((line, text[i:j]))
            col += j - i
            i = j
        elif ch in "()":
            tokens.append(_tok(ch, line, col))
            i, col = i + 1, col + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "();":
                j += 1
            tokens.append(_tok(text[i:j].lower(), line, col))
            col += j - i
            i = j
    return tokens, comments


def parse_sexpr(text: str):
    tokens, comments = tokenize(text)
    if not tokens:
        raise PddlSyntaxError("empty input", 1, 1)
    stack: list[SList] = []
    root = None
    for tok in tokens:
        if tok == "(":
            node = SList()
            node.line, node.col = tok.line, tok.col
            if stack:
                stack[-1].append(node)
            elif root is not None:
                raise PddlSyntaxError("unexpected text after the top-level expression",
                                      tok.line, tok.col)
            else:
                root = node
            stack.append(node)
        elif tok == ")":
            if not stack:
                raise PddlSyntaxError("unbalanced ')'", tok.line, tok.col)
            stack.pop()
        else:
            if not stack:
                raise PddlSyntaxError(f"unexpected token {tok!r} outside parentheses",
                                      tok.line, tok.col)
            stack[-1].append(tok)
    if stack:
        open_node = stack[-1]
        raise PddlSyntaxError("unclosed '('", open_node.line, open_node.col)
    return root, comments


# -- emission --------------------------------------------------------------------------------

def _fmt(lit: Sequence[str]) -> str:
    return "(" + " ".join(map(str, lit)) + ")"


def _obj(o: int) -> str:
    return f"o{o}"


def emit_domain(ops: Sequence[LiftedOperator], name: str = DOMAIN_NAME) -> str:
    if not ops:
        raise PddlError("cannot emit a domain without operators")
    d_k, heads = ops[0].key.d_k, ops[0].key.heads
    preds = []
    for b in range(d_k):
        preds += [f"(p{b} ?x)", f"(not_p{b} ?x)"]
    preds += [f"(r{k} ?x ?y)" for k in range(heads)]
    lines = [f"(define (domain {name})",
             "  (:requirements :strips)",
             "  (:predicates " + " ".join(preds) + ")"]
    for op in ops:
        params = set(op.parameters)
        for lit in op.key.literals() + list(op.adds()) + list(op.deletes()):
            stray = [v for v in lit[1:] if v not in params]
            if stray:
                raise PddlError(f"{op.name}: variables {stray} are not parameters")
        effects = [_fmt(lit) for lit in op.adds()] + [f"(not {_fmt(lit)})" for lit in op.deletes()]
        lines += [
            f"  ; support={op.support} conflict_ratio={op.conflict_ratio!r}",
            f"  (:action {op.name}",
            f"    :parameters ({' '.join(op.parameters)})",
            f"    :precondition (and {' '.join(_fmt(lit) for lit in op.key.literals())})",
            f"    :effect (and{''.join(' ' + e for e in effects)}))",
        ]
    lines.append(")")
    return "\n".join(lines) + "\n"


def goal_atoms(goal: SymbolicState, goal_contacts: Iterable[tuple[int, int]],
               keep_self_relations: bool = True) -> frozenset:
    """Unary goal atoms for every object; relation atoms only for touching pairs."""
    contacts = {frozenset(p) for p in goal_contacts}
    known = set(goal.ids)
    for pair in contacts:
        if not pair <= known:
            raise PddlError(f"goal contact {sorted(pair)} names unknown objects")
    out = set()
    for atom in goal.atoms():
        if atom[0].startswith(("p", "not_p")):
            out.add(atom)
        elif atom[1] == atom[2]:
            if keep_self_relations:
                out.add(atom)
        elif frozenset(atom[1:]) in contacts:
            out.add(atom)
    return frozenset(out)


def _atom_order(atom):
    return (atom[0].startswith("r"), atom[0], atom[1:])


def emit_problem(init: SymbolicState, goal: SymbolicState, goal_contacts: Iterable[tuple[int, int]],
                 name: str = "task", domain: str = DOMAIN_NAME,
                 keep_self_relations: bool = True) -> str:
    unknown = set(goal.ids) - set(init.ids)
    if unknown:
        raise PddlError(f"goal references unknown objects {sorted(unknown)}")
    goals = goal_atoms(goal, goal_contacts, keep_self_relations)
    init_atoms = sorted(init.atoms(), key=_atom_order)
    lines = [f"(define (problem {name})",
             f"  (:domain {domain})",
             "  (:objects " + " ".join(_obj(o) for o in init.ids) + ")",
             "  (:init"]
    lines += ["    " + _fmt((a[0],) + tuple(_obj(o) for o in a[1:])) for a in init_atoms]
    lines.append("  )")
    lines.append("  (:goal (and")
    lines += ["    " + _fmt((a[0],) + tuple(_obj(o) for o in a[1:]))
              for a in sorted(goals, key=_atom_order)]
    lines.append("  ))")
    lines.append(")")
    return "\n".join(lines) + "\n"


# -- parsing -----------------------------------------------------------------------------------

def _expect(node, what: str):
    if not isinstance(node, SList):
        raise PddlSyntaxError(f"expected {what}", getattr(node, "line", 0), getattr(node, "col", 0))
    return node


def _section(node: SList, keyword: str):
    for child in node:
        if isinstance(child, SList) and child and child[0] == keyword:
            return child
    return None


def _conjunction(node) -> list:
    if isinstance(node, SList) and node and node[0] == "and":
        return list(node[1:])
    return [node]


@dataclass
class _Vocabulary:
    arity: dict

    def check(self, lit: SList):
        if not lit or not isinstance(lit[0], Token):
            raise PddlSyntaxError("expected a literal", lit.line, lit.col)
        name = str(lit[0])
        if name not in self.arity:
            raise PddlError(f"line {lit.line}: unknown predicate {name!r}")
        if len(lit) - 1 != self.arity[name]:
            raise PddlError(f"line {lit.line}: {name} expects {self.arity[name]} arguments, "
                            f"got {len(lit) - 1}")
        for arg in lit[1:]:
            if not isinstance(arg, Token):
                raise PddlSyntaxError("nested term in literal", arg.line, arg.col)
        return tuple(str(x) for x in lit)


def _predicates(root: SList) -> tuple[_Vocabulary, int, int]:
    section = _section(root, ":predicates")
    if section is None:
        raise PddlError("domain has no :predicates section")
    arity = {}
    for decl in section[1:]:
        decl = _expect(decl, "predicate declaration")
        arity[str(decl[0])] = len(decl) - 1
    d_k = len([p for p in arity if re.fullmatch(r"p\d+", p)])
    heads = len([p for p in arity if re.fullmatch(r"r\d+", p)])
    return _Vocabulary(arity), d_k, heads


def parse_domain(text: str) -> list[LiftedOperator]:
    root, comments = parse_sexpr(text)
    if not root or root[0] != "define":
        raise PddlSyntaxError("expected (define ...)", root.line, root.col)
    vocab, d_k, heads = _predicates(root)
    ops = []
    prev_line = 0
    for node in root[1:]:
        if not (isinstance(node, SList) and node and node[0] == ":action"):
            continue
        support, ratio = 0, 1.0
        for line, text_ in comments:
            m = _META.match(text_)
            if m and prev_line < line < node.line:
                support, ratio = int(m.group(1)), float(m.group(2))
        prev_line = node.line
        name = str(node[1])
        m = _ACTION_NAME.match(name)
        if not m:
            raise PddlError(f"line {node.line}: action name {name!r} does not encode grasp/release")
        fields = {}
        i = 2
        while i < len(node):
            kw = node[i]
            if not isinstance(kw, Token) or i + 1 >= len(node):
                raise PddlSyntaxError("malformed action body", node.line, node.col)
            fields[str(kw)] = node[i + 1]
            i += 2
        params = [str(v) for v in _expect(fields.get(":parameters"), ":parameters")]
        pre = [vocab.check(_expect(lit, "literal")) for lit in _conjunction(fields[":precondition"])]
        adds, dels = [], []
        for lit in _conjunction(fields[":effect"]):
            lit = _expect(lit, "effect literal")
            if lit and lit[0] == "not":
                dels.append(vocab.check(_expect(lit[1], "literal")))
            else:
                adds.append(vocab.check(lit))
        for lit in pre + adds + dels:
            stray = [v for v in lit[1:] if v not in params]
            if stray:
                raise PddlError(f"{name}: undeclared variables {stray}")
        key = LiftedKey.from_literals(m.group(2), m.group(3), params, m.group(1) == "pick-place",
                                      pre, d_k, heads)

        def split(lits, unary):
            return tuple(sorted(l for l in lits if l[0].startswith("r") != unary))

        ops.append(LiftedOperator(key, split(adds, True), split(dels, True),
                                  split(adds, False), split(dels, False), support, ratio))
    return ops


def _object_id(name: str) -> int:
    if not re.fullmatch(r"o\d+", name):
        raise PddlError(f"object name {name!r} is not of the form o<id>")
    return int(name[1:])


def parse_problem(text: str, d_k: int = 1, heads: int = 3) -> tuple[SymbolicState, frozenset]:
    """Initial symbolic state and goal atoms (objects as integer ids)."""
    root, _ = parse_sexpr(text)
    if not root or root[0] != "define":
        raise PddlSyntaxError("expected (define ...)", root.line, root.col)
    objects_node = _section(root, ":objects")
    init_node = _section(root, ":init")
    goal_node = _section(root, ":goal")
    if objects_node is None or init_node is None or goal_node is None:
        raise PddlError("problem needs :objects, :init and :goal")
    ids = [_object_id(str(o)) for o in objects_node[1:]]
    known = set(ids)

    def ground(lit) -> tuple:
        lit = _expect(lit, "ground atom")
        name = str(lit[0])
        if not re.fullmatch(r"(not_)?p\d+|r\d+", name):
            raise PddlError(f"line {lit.line}: unknown predicate {name!r}")
        want = 2 if name.startswith("r") else 1
        if len(lit) - 1 != want:
            raise PddlError(f"line {lit.line}: {name} expects {want} arguments")
        args = tuple(_object_id(str(a)) for a in lit[1:])
        if not set(args) <= known:
            raise PddlError(f"line {lit.line}: atom names undeclared objects")
        return (name,) + args

    init_atoms = [ground(a) for a in init_node[1:]]
    goal_lits = _conjunction(goal_node[1]) if len(goal_node) > 1 else []
    goal = frozenset(ground(a) for a in goal_lits)
    for a in init_atoms:
        if a[0].startswith("r"):
            heads = max(heads, int(a[0][1:]) + 1)
        else:
            d_k = max(d_k, int(re.sub(r"^(not_)?p", "", a[0])) + 1)
    init = SymbolicState.from_atoms(ids, init_atoms, d_k, heads)
    return init, goal


def parse_plan(text: str) -> list[tuple[str, ...]]:
    """Steps ``(action-name arg ...)`` from planner output; other lines are ignored."""
    steps = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("(") and line.endswith(")"):
            steps.append(tuple(line[1:-1].lower().split()))
    return steps
