import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relsym.neural import (ALL_ONES, HARD, RELATIONAL, SOFT, GSConfig, ModelConfig,
                           RelationalDeepSym, action_vectors, batch_loss, gumbel_sigmoid,
                           load_checkpoint, loss, save_checkpoint)
from relsym.sim import ActionSpec


def small_model(seed=1, **kw):
    cfg = ModelConfig(hidden=16, d_att=4, d_z=5, **kw)
    m = RelationalDeepSym.create(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    for name, v in m.params.items():
        if ".b" in name:
            v[:] = rng.normal(size=v.shape) * 0.1
    return m


def toy_batch(B=3, n=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(B, n, 6)) * 3
    A = rng.integers(0, 2, size=(B, n, 8)).astype(float)
    E = rng.normal(size=(B, n, 6))
    return X, A, E


def test_gumbel_sigmoid_examples():
    assert gumbel_sigmoid(0.0, GSConfig(1.0, SOFT), noise=0.0) == 0.5
    for L in (-5.0, 0.0, 5.0):
        assert abs(gumbel_sigmoid(100.0, GSConfig(1.0, SOFT), noise=L) - 1.0) < 1e-6
    assert gumbel_sigmoid(0.3, GSConfig(1.0, HARD)) == 1.0
    assert gumbel_sigmoid(-0.3, GSConfig(1.0, HARD)) == 0.0


def test_gumbel_sigmoid_seeded_noise_matches_formula():
    u = np.random.default_rng(4).uniform(1e-10, 1 - 1e-10)
    expected = 1.0 / (1.0 + np.exp(-(0.7 + np.log(u) - np.log(1 - u)) / 2.0))
    assert gumbel_sigmoid(0.7, GSConfig(2.0, SOFT), noise_seed=4) == pytest.approx(expected, rel=1e-12)


def test_gs_config_validation():
    with pytest.raises(ValueError):
        GSConfig(0.0)
    with pytest.raises(ValueError):
        GSConfig(1.0, "fuzzy")


def test_action_vectors_layout():
    a = action_vectors([3, 5, 9], ActionSpec(5, "left", 9, "right"))
    assert a.shape == (3, 8)
    assert a[:, 0].tolist() == [0, 1, 0] and a[:, 1].tolist() == [0, 0, 1]
    assert (a[:, 2:5] == [1, 0, 0]).all() and (a[:, 5:8] == [0, 0, 1]).all()


def test_unary_bits_binary_and_local():
    m = small_model()
    X = np.random.default_rng(0).normal(size=(1, 4, 6)) * 5
    full = m.unary_bits(X)
    assert set(np.unique(full)) <= {0.0, 1.0}
    assert full.shape == (1, 4, 1)
    alone = np.concatenate([m.unary_bits(X[:, [i]]) for i in range(4)], axis=1)
    assert np.array_equal(full, alone)
    assert np.array_equal(m.unary_bits(X), m.unary_bits(X))


def test_relation_bits_shapes_and_pairwise_locality():
    m = small_model()
    X = np.random.default_rng(1).normal(size=(1, 3, 6)) * 5
    one = m.relation_bits(X[:, :1])
    assert one.shape == (1, 3, 1, 1)
    full = m.relation_bits(X)
    pair = m.relation_bits(X[:, [0, 2]])
    assert np.array_equal(full[:, :, [0, 2]][:, :, :, [0, 2]], pair)
    assert set(np.unique(full)) <= {0.0, 1.0}


def _hand_attention_model():
    cfg = ModelConfig(heads=1, d_att=3)
    m = RelationalDeepSym.create(cfg, seed=0, dtype=np.float64)
    p = m.params
    for name in p:
        if name.startswith("att"):
            p[name][:] = 0
    # hidden units carry relu(x[0:3]) and relu(-x[0:3]); layer 3 recombines them into q and k
    for d in range(3):
        p["att.W1"][d, d] = 1
        p["att.W1"][d, 3 + d] = -1
    p["att.W2"][:6, :6] = np.eye(6)
    for d in range(3):
        for slot in (0, 1):
            p["att.W3"][d, slot * 3 + d] = 1
            p["att.W3"][3 + d, slot * 3 + d] = -1
    return m


def test_relation_dot_product_oracle():
    m = _hand_attention_model()
    rng = np.random.default_rng(2)
    for _ in range(20):
        X = rng.normal(size=(1, 2, 6))
        alpha = m.relation_bits(X)[0, 0]
        assert alpha[0, 1] == float(X[0, 0, :3] @ X[0, 1, :3] > 0)
        assert alpha[1, 0] == alpha[0, 1]
        assert alpha[0, 0] == 1.0


def test_aggregate_examples():
    m = small_model()
    A = np.random.default_rng(0).integers(0, 2, size=(1, 2, 8)).astype(float)
    sp = np.array([[[1.0], [0.0]]])
    z = m._aggregate(sp, np.zeros((1, 3, 2, 2)), A)[1][2]
    h0 = m.aggregate(sp, np.zeros((1, 3, 2, 2)), A)
    assert not h0.any()
    alpha = np.zeros((1, 3, 2, 2))
    alpha[0, 0, 0, 1] = 1
    h = m.aggregate(sp, alpha, A)
    assert np.allclose(h[0, 0], np.concatenate([z[0, 1], np.zeros(5), np.zeros(5)]))
    assert not h[0, 1].any()
    single = m.aggregate(sp[:, :1], np.ones((1, 3, 1, 1)), A[:, :1])
    assert np.allclose(single[0, 0], np.tile(z[0, 0], 3))


def test_decode_examples():
    m = small_model()
    for name, v in m.params.items():
        if name.startswith("dec.b"):
            v[:] = 0
    assert not m.decode(np.zeros((1, 2, 15))).any()
    h = np.random.default_rng(0).uniform(size=(1, 2, 15))
    assert np.array_equal(m.decode(h), m.decode(h))
    # identity hidden layers reduce the decoder to one affine map on nonnegative inputs
    p = m.params
    p["dec.W1"][:] = 0
    p["dec.W1"][:, :15] = np.eye(15)
    p["dec.W2"][:] = np.eye(16)
    p["dec.b3"][:] = np.arange(6)
    expected = h @ p["dec.W3"][:15] + np.arange(6)
    assert np.allclose(m.decode(h), expected)


def test_loss_examples():
    e = np.random.default_rng(0).normal(size=(3, 6))
    assert loss(e, e) == 0.0
    bumped = e.copy()
    bumped[1, 2] += 1.0
    assert loss(bumped, e) == pytest.approx(1.0)
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    naive = 0.0
    for i in range(4):
        for d in range(6):
            naive += (a[i, d] - b[i, d]) ** 2
    assert abs(loss(a, b) - naive) < 1e-12
    with pytest.raises(ValueError):
        loss(a, b[:3])


@pytest.mark.parametrize("ablation", [RELATIONAL, ALL_ONES])
@pytest.mark.parametrize("aggregate_self", [False, True])
def test_gradients_match_finite_differences(ablation, aggregate_self):
    m = small_model(ablation=ablation, aggregate_self=aggregate_self)
    X, A, E = toy_batch()
    noise = m.sample_noise(np.random.default_rng(0), 3, 2)
    _, grads = batch_loss(m, X, A, E, mode=SOFT, noise=noise)
    eps = 1e-4
    for name, p in m.params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            lp, _ = batch_loss(m, X, A, E, SOFT, noise)
            p[idx] = old - eps
            lm, _ = batch_loss(m, X, A, E, SOFT, noise)
            p[idx] = old
            num[idx] = (lp - lm) / (2 * eps)
        denom = max(np.linalg.norm(num) + np.linalg.norm(grads[name]), 1e-12)
        assert np.linalg.norm(num - grads[name]) / denom < 1e-4, name


def test_perfect_prediction_zero_gradient():
    m = small_model()
    X, A, _ = toy_batch()
    noise = m.sample_noise(np.random.default_rng(0), 3, 2)
    y, _ = m.forward(X, A, mode=SOFT, noise=noise)
    value, grads = batch_loss(m, X, A, y, mode=SOFT, noise=noise)
    assert value == 0.0
    assert all(not g.any() for g in grads.values())


def test_doubling_upstream_doubles_gradients():
    m = small_model()
    X, A, E = toy_batch()
    noise = m.sample_noise(np.random.default_rng(0), 3, 2)
    y, cache = m.forward(X, A, mode=SOFT, noise=noise, keep_cache=True)
    g1 = m.backward(cache, y - E)
    g2 = m.backward(cache, 2 * (y - E))
    for name in g1:
        assert np.allclose(g2[name], 2 * g1[name], rtol=1e-12, atol=1e-15)


def test_all_ones_ablation_ignores_attention_weights():
    m = small_model(ablation=ALL_ONES)
    X, A, _ = toy_batch(B=1, n=3)
    y, _ = m.forward(X, A)
    for name in m.params:
        if name.startswith("att"):
            m.params[name] += 1.0
    assert np.array_equal(m.forward(X, A)[0], y)
    rel = small_model(ablation=RELATIONAL)
    y, _ = rel.forward(X, A)
    rel.params["att.W3"] *= -1.0
    assert not np.array_equal(rel.forward(X, A)[0], y)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 5), seed=st.integers(0, 1000))
def test_permutation_equivariance(n, seed):
    m = small_model()
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(1, n, 6)) * 4
    A = rng.integers(0, 2, size=(1, n, 8)).astype(float)
    perm = rng.permutation(n)
    y, _ = m.forward(X, A)
    yp, _ = m.forward(X[:, perm], A[:, perm])
    assert np.allclose(yp, y[:, perm])
    u, r = m.symbols(X[0])
    up, rp = m.symbols(X[0, perm])
    assert np.array_equal(up, u[perm])
    assert np.array_equal(rp, r[:, perm][:, :, perm])


def test_checkpoint_round_trip(tmp_path):
    m = small_model()
    m.in_mean[:] = np.arange(6)
    path = tmp_path / "m.npz"
    save_checkpoint(path, m)
    back = load_checkpoint(path)
    assert back.cfg == m.cfg
    for name in m.params:
        assert np.array_equal(back.params[name], m.params[name])
    assert np.array_equal(back.in_mean, m.in_mean)
    X, A, _ = toy_batch()
    assert np.array_equal(back.predict(X, A), m.predict(X, A))


def test_checkpoint_rejects_bad_shapes():
    m = small_model()
    params = dict(m.params)
    params["enc.W1"] = params["enc.W1"][:, :3]
    with pytest.raises(ValueError):
        RelationalDeepSym(m.cfg, params)
