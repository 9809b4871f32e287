import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relsym.sim import (HALF_HEIGHT, LONG, SHORT, TABLE, ActionSpec, Block, SceneGenerationError,
                        WorldState, apply_action, check_state, collect_dataset, contact_graph,
                        dumps_dataset, effect_of, init_scene, iter_dataset, random_action,
                        record_transition, relevant_objects, resolve_action, save_dataset,
                        split_dataset)


def scene(*blocks, support=None):
    blocks = tuple(Block(k, x, y, z) for k, x, y, z in blocks)
    return WorldState(blocks, tuple(support) if support else (TABLE,) * len(blocks))


def aabb_overlap(a: Block, b: Block) -> bool:
    """Independent footprint test from explicit corner intervals."""
    def box(blk):
        (l, w) = (5.0, 5.0) if blk.kind == SHORT else (25.0, 5.0)
        return (blk.x - l / 2, blk.x + l / 2, blk.y - w / 2, blk.y + w / 2)
    ax0, ax1, ay0, ay1 = box(a)
    bx0, bx1, by0, by1 = box(b)
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def random_states(n, seed, steps):
    rng = np.random.default_rng(seed)
    state = init_scene(n, seed)
    yield state
    for _ in range(steps):
        state = apply_action(state, random_action(rng, n))
        yield state


def test_init_scene_deterministic():
    assert init_scene(2, 7) == init_scene(2, 7)


def test_init_scene_no_overlap():
    state = init_scene(4, 3)
    assert len(state) == 4
    for a, b in itertools.combinations(state.blocks, 2):
        assert not aabb_overlap(a, b)


def test_init_scene_eight_objects():
    state = init_scene(8, 1)
    assert len(state) == 8
    check_state(state)
    assert all(b.z == HALF_HEIGHT for b in state.blocks)


def test_init_scene_rejects_impossible():
    with pytest.raises(SceneGenerationError):
        init_scene(200, 0, max_attempts=20)
    with pytest.raises(ValueError):
        init_scene(0, 0)


def test_feature_vector_layout():
    f = Block(LONG, 1.0, 2.0, 2.5).features()
    assert f.tolist() == [1.0, 2.0, 2.5, 0.0, 0.0, 1.0]


def test_action_spec_validation():
    with pytest.raises(ValueError):
        ActionSpec(1, "center", 1, "center")
    with pytest.raises(ValueError):
        ActionSpec(0, "middle", 1, "center")
    assert ActionSpec.from_list([0, "left", 1, "right"]).to_list() == [0, "left", 1, "right"]


def test_short_side_grasp_is_noop():
    state = scene((SHORT, 0, 0, 2.5), (SHORT, 10, 0, 2.5))
    assert apply_action(state, ActionSpec(0, "left", 1, "center")) == state
    assert apply_action(state, ActionSpec(0, "right", 1, "center")) == state


def test_short_on_short_lands_at_hand_computed_height():
    state = scene((SHORT, -20, 5, 2.5), (SHORT, 10, 0, 2.5))
    post = apply_action(state, ActionSpec(0, "center", 1, "center"))
    b = post.blocks[0]
    assert (b.x, b.y, b.z) == (10, 0, 7.5)  # 2.5 + 2.5 + 2.5
    assert post.support == (1, TABLE)
    eff = effect_of(state, post, ActionSpec(0, "center", 1, "center"))
    assert eff[0].tolist() == [0, 0, 5.0, 0, 0, 0]
    assert not eff[1].any()


def test_long_center_grasp_carries_stack():
    state = scene((LONG, 0, 0, 2.5), (SHORT, 5, 0, 7.5), (SHORT, 30, 10, 2.5), support=(TABLE, 0, TABLE))
    act = ActionSpec(0, "center", 2, "center")
    out = resolve_action(state, act)
    assert out.carried == {0, 1}
    d0 = out.state.blocks[0].x - state.blocks[0].x, out.state.blocks[0].y - state.blocks[0].y
    d1 = out.state.blocks[1].x - state.blocks[1].x, out.state.blocks[1].y - state.blocks[1].y
    assert d0 == d1 == (30, 10)
    assert out.state.support == (2, 0, TABLE)
    check_state(out.state)


def test_long_side_grasp_drops_passengers():
    state = scene((LONG, 0, 0, 2.5), (SHORT, 5, 0, 7.5), (SHORT, 30, 10, 2.5), support=(TABLE, 0, TABLE))
    out = resolve_action(state, ActionSpec(0, "left", 2, "center"))
    assert out.carried == {0}
    assert out.state.blocks[1] == Block(SHORT, 5, 0, 2.5)
    assert out.state.support[1] == TABLE
    # grasp point (-10, 0) goes to the target's top center (30, 10)
    assert (out.state.blocks[0].x, out.state.blocks[0].y, out.state.blocks[0].z) == (40, 10, 7.5)


def test_release_beside_short_falls_to_table():
    state = scene((SHORT, 0, 0, 2.5), (SHORT, 20, 0, 2.5))
    post = apply_action(state, ActionSpec(0, "center", 1, "right"))
    assert post.blocks[0] == Block(SHORT, 30, 0, 2.5)
    assert post.support[0] == TABLE


def test_release_relative_to_carried_object_is_noop():
    state = scene((LONG, 0, 0, 2.5), (SHORT, 0, 0, 7.5), support=(TABLE, 0))
    assert apply_action(state, ActionSpec(0, "center", 1, "center")) == state


def test_contact_graph_examples():
    assert contact_graph(scene((SHORT, 0, 0, 2.5), (SHORT, 20, 0, 2.5))) == frozenset()
    stack = scene((SHORT, 0, 0, 7.5), (SHORT, 0, 0, 2.5), support=(1, TABLE))
    assert contact_graph(stack) == {(0, 1)}
    two_on_long = scene((SHORT, -5, 0, 7.5), (LONG, 0, 0, 2.5), (SHORT, 5, 0, 7.5),
                        support=(1, TABLE, 1))
    assert contact_graph(two_on_long) == {(0, 1), (1, 2)}


def test_effect_zero_after_carry_onto_equal_height():
    state = scene((SHORT, 0, 0, 2.5), (LONG, 30, 0, 2.5), (SHORT, -30, 0, 2.5))
    act = ActionSpec(0, "center", 2, "left")  # lands on the table beside block 2
    post = apply_action(state, act)
    eff = effect_of(state, post, act)
    assert np.allclose(eff, 0)
    assert post.blocks[0].x == -40


def test_effect_of_rejects_mismatched_states():
    a = scene((SHORT, 0, 0, 2.5), (SHORT, 20, 0, 2.5))
    b = scene((SHORT, 0, 0, 2.5), (LONG, 20, 0, 2.5))
    with pytest.raises(ValueError):
        effect_of(a, b, ActionSpec(0, "center", 1, "center"))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 10_000))
def test_random_play_keeps_state_valid(n, seed):
    kinds = None
    for state in random_states(n, seed, 20):
        check_state(state)
        assert len(state) == n
        kinds = kinds or [b.kind for b in state.blocks]
        assert [b.kind for b in state.blocks] == kinds


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 5), seed=st.integers(0, 10_000))
def test_grasp_miss_property(n, seed):
    for state in random_states(n, seed, 6):
        for p, q in itertools.permutations(range(n), 2):
            if state.blocks[p].kind != SHORT:
                continue
            for g in ("left", "right"):
                for r in ("left", "center", "right"):
                    assert apply_action(state, ActionSpec(p, g, q, r)) == state


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 5), seed=st.integers(0, 10_000))
def test_carry_property(n, seed):
    rng = np.random.default_rng(seed + 1)
    for state in random_states(n, seed, 6):
        p = int(rng.integers(n))
        q = (p + 1 + int(rng.integers(n - 1))) % n
        out = resolve_action(state, ActionSpec(p, "center", q, "center"))
        if out.noop:
            assert q in state.above(p)
            continue
        assert out.carried == {p} | state.above(p)
        deltas = {(round(out.state.blocks[j].x - state.blocks[j].x, 9),
                   round(out.state.blocks[j].y - state.blocks[j].y, 9)) for j in out.carried}
        assert len(deltas) == 1


def test_determinism_of_apply():
    state = init_scene(4, 11)
    act = ActionSpec(2, "center", 0, "left")
    assert apply_action(state, act) == apply_action(state, act)


def test_collect_dataset_deterministic():
    assert dumps_dataset(collect_dataset(10, 0)) == dumps_dataset(collect_dataset(10, 0))
    assert len(collect_dataset(10, 0)) == 10


def test_collect_dataset_relevance_against_contact_oracle():
    data = collect_dataset(1000, 5)
    assert len(data) == 1000
    n_checked = 0
    for t in data:
        args = {t.action.pick, t.action.place}
        assert args <= set(t.ids)
        for obj in set(t.ids) - args:
            assert any(obj in c and (c[0] in args or c[1] in args) for c in t.contacts_pre)
        assert t.pre.shape == t.post.shape == t.effects.shape == (len(t), 6)
        n_checked += 1
    assert n_checked == 1000


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 10_000))
def test_record_relevance_from_support_map(n, seed):
    rng = np.random.default_rng(seed)
    for state in random_states(n, seed, 5):
        act = random_action(rng, n)
        t, _ = record_transition(state, act)
        touching = {i for i, s in enumerate(state.support) if s in (act.pick, act.place)}
        touching |= {state.support[a] for a in (act.pick, act.place)} - {TABLE}
        assert set(t.ids) == {act.pick, act.place} | touching


def test_relevant_objects_matches_transitive_free_oracle():
    state = scene((SHORT, -5, 0, 7.5), (LONG, 0, 0, 2.5), (SHORT, 5, 0, 7.5), (SHORT, 5, 0, 12.5),
                  (SHORT, 40, 0, 2.5), support=(1, TABLE, 1, 2, TABLE))
    # pick 0, place 4: contacts of 0 are {1}; contacts of 4 are none
    assert relevant_objects(state, ActionSpec(0, "center", 4, "center")) == [0, 1, 4]
    # pick 2: touches 1 and 3
    assert relevant_objects(state, ActionSpec(2, "center", 4, "center")) == [1, 2, 3, 4]


def test_split_sizes_full_scale():
    tr, va, te = split_dataset(range(200_000))
    assert (len(tr), len(va), len(te)) == (160_000, 20_000, 20_000)


def test_dataset_round_trip(tmp_path):
    data = collect_dataset(30, 2)
    path = tmp_path / "d.jsonl"
    save_dataset(path, data)
    back = list(iter_dataset(path))
    assert dumps_dataset(back) == dumps_dataset(data)
    header = path.read_text().splitlines()[0]
    assert '"d_o": 6' in header
    first = path.read_text().splitlines()[1]
    assert first.index('"pre"') < first.index('"action"') < first.index('"post"') \
        < first.index('"effects"') < first.index('"contacts"')


def test_dataset_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.jsonl"
    path.write_text('{"format": "other"}\n')
    with pytest.raises(ValueError):
        list(iter_dataset(path))
