"""Pure-Python successor generation; states are ``int`` bitsets."""

from __future__ import annotations


def _to_int(row) -> int:
    return int.from_bytes(row.tobytes(), "little")


class BitsetKernel:
    def __init__(self, pre, add, dele, goal, n_atoms: int):
        self.table = [(_to_int(p), _to_int(a), _to_int(d)) for p, a, d in zip(pre, add, dele)]
        self.goal = _to_int(goal)
        self.n_actions = len(self.table)
        self.words = len(goal)
        self.n_atoms = n_atoms

    def encode(self, indices) -> int:
        s = 0
        for i in indices:
            s |= 1 << i
        return s

    def decode(self, state: int) -> list[int]:
        out = []
        i = 0
        while state:
            if state & 1:
                out.append(i)
            state >>= 1
            i += 1
        return out

    def goal_count(self, state: int) -> int:
        return (self.goal & ~state).bit_count()

    def expand(self, state: int):
        g = self.goal
        out = []
        for a, (p, ad, d) in enumerate(self.table):
            if state & p == p:
                t = (state & ~d) | ad
                out.append((a, t, (g & ~t).bit_count()))
        return out
