"""Deterministic kinematic block world used for data collection and plan replay.

Blocks are axis-aligned boxes resting on a table at z = 0. A single high-level
action picks one block (at its left end, center, or right end) and releases it
relative to another block (left of, on top of, right of). All lengths are in
centimeters; yaw is fixed to 0 so every long block's long axis is the world x
axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

SHORT = "short"
LONG = "long"
KINDS = (SHORT, LONG)

# (length along x, width along y, height)
DIMENSIONS = {SHORT: (5.0, 5.0, 5.0), LONG: (25.0, 5.0, 5.0)}
HEIGHT = 5.0
HALF_HEIGHT = HEIGHT / 2

POSITIONS = ("left", "center", "right")
OFFSETS = {"left": -10.0, "center": 0.0, "right": 10.0}

TABLE = -1
FEATURE_NAMES = ("x", "y", "z", "yaw", "is_short", "is_long")
FEATURE_DIM = len(FEATURE_NAMES)
ACTION_ENCODING_VERSION = 1
DATASET_FORMAT = "relsym-transitions"

# table region used by scene generation, (x_min, x_max, y_min, y_max)
TABLE_REGION = (-50.0, 50.0, -30.0, 30.0)
PLACEMENT_MARGIN = 2.0
EPISODE_LENGTH = 8

_EPS = 1e-9


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Block:
    kind: str
    x: float
    y: float
    z: float
    yaw: float = 0.0

    @property
    def half_length(self) -> float:
        return DIMENSIONS[self.kind][0] / 2

    @property
    def half_width(self) -> float:
        return DIMENSIONS[self.kind][1] / 2

    @property
    def top(self) -> float:
        return self.z + HALF_HEIGHT

    @property
    def bottom(self) -> float:
        return self.z - HALF_HEIGHT

    def covers(self, px: float, py: float) -> bool:
        return (abs(px - self.x) <= self.half_length + _EPS
                and abs(py - self.y) <= self.half_width + _EPS)

    def features(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw,
                         float(self.kind == SHORT), float(self.kind == LONG)])

    def moved(self, dx: float, dy: float, dz: float) -> "Block":
        return replace(self, x=self.x + dx, y=self.y + dy, z=self.z + dz)


@dataclass(frozen=True)
class ActionSpec:
    pick: int
    grasp: str
    place: int
    release: str

    def __post_init__(self):
        if self.pick == self.place:
            raise ValueError("pick and place objects must differ")
        if self.grasp not in OFFSETS or self.release not in OFFSETS:
            raise ValueError(f"unknown grasp/release position in {self}")

    def to_list(self) -> list:
        return [self.pick, self.grasp, self.place, self.release]

    @classmethod
    def from_list(cls, values: Sequence) -> "ActionSpec":
        pick, grasp, place, release = values
        return cls(int(pick), str(grasp), int(place), str(release))


@dataclass(frozen=True)
class WorldState:
    """Blocks indexed by id, plus what each block rests on (``TABLE`` or an id)."""

    blocks: tuple[Block, ...]
    support: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def ids(self) -> range:
        return range(len(self.blocks))

    def features(self, i: int) -> np.ndarray:
        return self.blocks[i].features()

    def feature_matrix(self, ids: Iterable[int] | None = None) -> np.ndarray:
        ids = self.ids if ids is None else ids
        return np.stack([self.blocks[i].features() for i in ids])

    def children(self, i: int) -> list[int]:
        return [j for j, s in enumerate(self.support) if s == i]

    def above(self, i: int) -> set[int]:
        """Transitive closure of the blocks resting (directly or not) on ``i``."""
        out: set[int] = set()
        frontier = [i]
        while frontier:
            k = frontier.pop()
            for j in self.children(k):
                if j not in out:
                    out.add(j)
                    frontier.append(j)
        return out

    def positions(self) -> np.ndarray:
        return np.array([[b.x, b.y, b.z] for b in self.blocks])

    def to_dict(self) -> dict:
        return {
            "blocks": [[b.kind, b.x, b.y, b.z, b.yaw] for b in self.blocks],
            "support": list(self.support),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldState":
        blocks = tuple(Block(k, float(x), float(y), float(z), float(yaw))
                       for k, x, y, z, yaw in d["blocks"])
        return cls(blocks, tuple(int(s) for s in d["support"]))


def check_state(state: WorldState) -> None:
    """Raise ``AssertionError`` if the support structure is inconsistent."""
    n = len(state)
    for i, (b, s) in enumerate(zip(state.blocks, state.support)):
        assert b.z >= HALF_HEIGHT - _EPS, f"block {i} below the table"
        if s == TABLE:
            assert abs(b.z - HALF_HEIGHT) < 1e-6, f"block {i} floats above the table"
        else:
            assert 0 <= s < n and s != i
            assert abs(b.z - (state.blocks[s].top + HALF_HEIGHT)) < 1e-6, \
                f"block {i} is not resting on its supporter {s}"
    # acyclic: heights strictly increase along support links, so walking down terminates
    for i in range(n):
        seen = set()
        k = i
        while k != TABLE:
            assert k not in seen, "support cycle"
            seen.add(k)
            k = state.support[k]


def _footprints_overlap(a: Block, b: Block, margin: float = 0.0) -> bool:
    return (abs(a.x - b.x) < a.half_length + b.half_length + margin
            and abs(a.y - b.y) < a.half_width + b.half_width + margin)


def init_scene(n_objects: int, seed: int, max_attempts: int = 2000) -> WorldState:
    """Place ``n_objects`` blocks of random type at collision-free table positions."""
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = TABLE_REGION
    kinds = [KINDS[k] for k in rng.integers(0, 2, size=n_objects)]
    blocks: list[Block] = []
    for kind in kinds:
        hl, hw = DIMENSIONS[kind][0] / 2, DIMENSIONS[kind][1] / 2
        for _ in range(max_attempts):
            cand = Block(kind,
                         float(np.round(rng.uniform(x0 + hl, x1 - hl), 3)),
                         float(np.round(rng.uniform(y0 + hw, y1 - hw), 3)),
                         HALF_HEIGHT)
            if not any(_footprints_overlap(cand, b, PLACEMENT_MARGIN) for b in blocks):
                blocks.append(cand)
                break
        else:
            raise SceneGenerationError(
                f"could not place {n_objects} blocks after {max_attempts} attempts (seed={seed})")
    return WorldState(tuple(blocks), (TABLE,) * n_objects)


def _highest_surface(blocks: Sequence[Block], candidates: Iterable[int],
                     px: float, py: float, below: float = np.inf) -> int:
    best, best_top = TABLE, 0.0
    for j in candidates:
        b = blocks[j]
        if b.covers(px, py) and b.top <= below + _EPS and b.top > best_top + _EPS:
            best, best_top = j, b.top
    return best


@dataclass(frozen=True)
class Outcome:
    """Result of resolving an action: the next state plus what the gripper held."""

    state: WorldState
    carried: frozenset[int]
    arm: tuple[float, float]

    @property
    def noop(self) -> bool:
        return not self.carried


def resolve_action(state: WorldState, action: ActionSpec) -> Outcome:
    n = len(state)
    p, q = action.pick, action.place
    if not (0 <= p < n and 0 <= q < n):
        raise KeyError(f"action {action} references a missing object")
    pick = state.blocks[p]
    grasp_offset = OFFSETS[action.grasp]
    unchanged = Outcome(state, frozenset(), (0.0, 0.0))
    if abs(grasp_offset) > pick.half_length:
        return unchanged  # grasp point off the block: nothing is lifted

    stack = state.above(p)
    if grasp_offset == 0.0:
        carried = {p} | stack
        dropping: list[int] = []
    else:
        carried = {p}
        dropping = sorted(state.children(p))
    if q in carried:
        return unchanged  # cannot release relative to something in the hand

    blocks = list(state.blocks)
    support = list(state.support)

    # off-center lift: supported blocks (with their own stacks) fall straight down
    falling: set[int] = set()
    groups = {}
    for r in dropping:
        groups[r] = {r} | state.above(r)
        falling |= groups[r]
    rest = [j for j in range(n) if j not in carried and j not in falling]
    for r in dropping:
        b = blocks[r]
        s = _highest_surface(blocks, rest, b.x, b.y, below=b.bottom)
        dz = (HALF_HEIGHT if s == TABLE else blocks[s].top + HALF_HEIGHT) - b.z
        for j in groups[r]:
            blocks[j] = blocks[j].moved(0.0, 0.0, dz)
        support[r] = s

    target = blocks[q]
    lx, ly = target.x + OFFSETS[action.release], target.y
    gx, gy = pick.x + grasp_offset, pick.y
    dx, dy = lx - gx, ly - gy
    others = [j for j in range(n) if j not in carried]
    s = _highest_surface(blocks, others, lx, ly)
    dz = (HALF_HEIGHT if s == TABLE else blocks[s].top + HALF_HEIGHT) - pick.z
    for j in carried:
        blocks[j] = blocks[j].moved(dx, dy, dz)
    support[p] = s
    return Outcome(WorldState(tuple(blocks), tuple(support)), frozenset(carried), (dx, dy))


def apply_action(state: WorldState, action: ActionSpec) -> WorldState:
    return resolve_action(state, action).state


def contact_graph(state: WorldState) -> frozenset[tuple[int, int]]:
    """Unordered support contacts as sorted ``(low_id, high_id)`` pairs."""
    return frozenset((min(i, s), max(i, s))
                     for i, s in enumerate(state.support) if s != TABLE)


def effect_of(pre: WorldState, post: WorldState, action: ActionSpec) -> np.ndarray:
    """Per-object feature change with the arm's lateral carry removed."""
    if len(pre) != len(post) or any(a.kind != b.kind for a, b in zip(pre.blocks, post.blocks)):
        raise ValueError("pre and post states describe different objects")
    outcome = resolve_action(pre, action)
    eff = post.feature_matrix() - pre.feature_matrix()
    for j in outcome.carried:
        eff[j, 0] -= outcome.arm[0]
        eff[j, 1] -= outcome.arm[1]
    return eff


def relevant_objects(state: WorldState, action: ActionSpec,
                     contacts: frozenset[tuple[int, int]] | None = None) -> list[int]:
    """Action arguments plus anything touching them, sorted by id."""
    contacts = contact_graph(state) if contacts is None else contacts
    args = {action.pick, action.place}
    keep = set(args)
    for i, j in contacts:
        if i in args or j in args:
            keep.update((i, j))
    return sorted(keep)


@dataclass(eq=False)
class Transition:
    """One recorded interaction restricted to the relevant objects ``ids``."""

    ids: tuple[int, ...]
    pre: np.ndarray
    action: ActionSpec
    post: np.ndarray
    effects: np.ndarray
    contacts_pre: frozenset
    contacts_post: frozenset
    carried: tuple[bool, ...] = ()
    arm: tuple[float, float] = (0.0, 0.0)
    episode: int = 0
    step: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    def index(self, obj: int) -> int:
        return self.ids.index(obj)

    def to_record(self) -> dict:
        return {
            "pre": self.pre.tolist(),
            "action": self.action.to_list(),
            "post": self.post.tolist(),
            "effects": self.effects.tolist(),
            "contacts": {"pre": sorted(map(list, self.contacts_pre)),
                         "post": sorted(map(list, self.contacts_post))},
            "ids": list(self.ids),
            "carried": [int(c) for c in self.carried],
            "arm": list(self.arm),
            "episode": self.episode,
            "step": self.step,
        }

    @classmethod
    def from_record(cls, r: dict) -> "Transition":
        return cls(
            ids=tuple(r["ids"]),
            pre=np.asarray(r["pre"], dtype=float),
            action=ActionSpec.from_list(r["action"]),
            post=np.asarray(r["post"], dtype=float),
            effects=np.asarray(r["effects"], dtype=float),
            contacts_pre=frozenset(tuple(p) for p in r["contacts"]["pre"]),
            contacts_post=frozenset(tuple(p) for p in r["contacts"]["post"]),
            carried=tuple(bool(c) for c in r["carried"]),
            arm=tuple(r["arm"]),
            episode=int(r["episode"]),
            step=int(r["step"]),
        )


def record_transition(pre: WorldState, action: ActionSpec,
                      episode: int = 0, step: int = 0) -> tuple[Transition, WorldState]:
    outcome = resolve_action(pre, action)
    post = outcome.state
    cpre, cpost = contact_graph(pre), contact_graph(post)
    ids = relevant_objects(pre, action, cpre)
    keep = set(ids)
    eff = effect_of(pre, post, action)[ids]
    t = Transition(
        ids=tuple(ids),
        pre=pre.feature_matrix(ids),
        action=action,
        post=post.feature_matrix(ids),
        effects=eff,
        contacts_pre=frozenset(c for c in cpre if c[0] in keep and c[1] in keep),
        contacts_post=frozenset(c for c in cpost if c[0] in keep and c[1] in keep),
        carried=tuple(i in outcome.carried for i in ids),
        arm=outcome.arm,
        episode=episode,
        step=step,
    )
    return t, post


def random_action(rng: np.random.Generator, n_objects: int) -> ActionSpec:
    pick = int(rng.integers(n_objects))
    place = int(rng.integers(n_objects - 1))
    if place >= pick:
        place += 1
    grasp, release = rng.integers(3, size=2)
    return ActionSpec(pick, POSITIONS[grasp], place, POSITIONS[release])


def collect_dataset(n_samples: int, seed: int,
                    n_objects_range: tuple[int, int] = (2, 4),
                    episode_length: int = EPISODE_LENGTH) -> list[Transition]:
    """Random exploration: ``episode_length`` uniform actions per fresh scene."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lo, hi = n_objects_range
    rng = np.random.default_rng(seed)
    out: list[Transition] = []
    episode = 0
    while len(out) < n_samples:
        n = int(rng.integers(lo, hi + 1))
        state = init_scene(n, int(rng.integers(2**31)))
        for step in range(episode_length):
            if len(out) == n_samples:
                break
            t, state = record_transition(state, random_action(rng, n), episode, step)
            out.append(t)
        episode += 1
    return out


def split_dataset(records: Sequence, fractions=(0.8, 0.1, 0.1)) -> tuple[list, list, list]:
    """Contiguous train/validation/test split (160K/20K/20K with the "paper" profile)."""
    n = len(records)
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return (list(records[:n_train]), list(records[n_train:n_train + n_val]),
            list(records[n_train + n_val:]))


def dataset_header() -> dict:
    return {"format": DATASET_FORMAT, "d_o": FEATURE_DIM,
            "features": list(FEATURE_NAMES),
            "action_encoding": ACTION_ENCODING_VERSION,
            "fields": ["pre", "action", "post", "effects", "contacts"]}


def dumps_dataset(records: Iterable[Transition]) -> str:
    lines = [json.dumps(dataset_header())]
    lines.extend(json.dumps(t.to_record()) for t in records)
    return "\n".join(lines) + "\n"


def save_dataset(path, records: Iterable[Transition]) -> None:
    with open(path, "w") as f:
        f.write(dumps_dataset(records))


def iter_dataset(path) -> Iterator[Transition]:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != DATASET_FORMAT:
            raise ValueError(f"{path}: not a transition dataset")
        if header.get("d_o") != FEATURE_DIM or header.get("action_encoding") != ACTION_ENCODING_VERSION:
            raise ValueError(f"{path}: incompatible dataset header {header}")
        for line in f:
            if line.strip():
                yield Transition.from_record(json.loads(line))


def load_dataset(path) -> list[Transition]:
    return list(iter_dataset(path))
