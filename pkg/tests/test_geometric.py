import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqrouter import attention as att
from seqrouter import autodiff as ad
from seqrouter.attention import AttentionConfig, geometric_ordering, geometric_weights, geometric_weights_direct
from seqrouter.autodiff import Init, Tensor
from seqrouter.rng import RngTree

from oracles import naive_geometric_probs, naive_geometric_weights


def geo_params(d=8, heads=2, seed=0, dtype=np.float64):
    cfg = AttentionConfig(d_model=d, n_heads=heads, kind="geometric")
    return att.init_attention(Init(RngTree(seed), dtype=dtype, prefix="geo"), cfg)


def test_ordering_forced_example():
    assert geometric_ordering(3, 5) == [4, 2, 5, 1]


def test_ordering_edges():
    assert geometric_ordering(1, 5) == [2, 3, 4, 5]
    assert geometric_ordering(5, 5) == [4, 3, 2, 1]


def test_ordering_rejects_out_of_range():
    with pytest.raises(ValueError):
        geometric_ordering(0, 5)
    with pytest.raises(ValueError):
        geometric_ordering(6, 5)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40))
def test_ordering_is_permutation(n):
    for i in range(1, n + 1):
        order = geometric_ordering(i, n)
        assert sorted(order) == [k for k in range(1, n + 1) if k != i]


def test_weights_hand_example():
    # Row i=2 (1-based) with neighbours at 0.5: right neighbour is closer.
    p = np.zeros((3, 3))
    p[1, 0] = 0.5
    p[1, 2] = 0.5
    a = geometric_weights(Tensor(p, dtype=np.float64)).data
    assert a[1, 2] == pytest.approx(0.5)
    assert a[1, 0] == pytest.approx(0.25)


def test_weights_single_source_certain_match():
    p = np.array([[0.0, 1.0], [1.0, 0.0]])
    a = geometric_weights(Tensor(p, dtype=np.float64)).data
    np.testing.assert_allclose(a, [[0.0, 1.0], [1.0, 0.0]])


def test_weights_diagonal_always_zero():
    gen = np.random.default_rng(0)
    p = gen.random((4, 6, 6))
    a = geometric_weights(Tensor(p, dtype=np.float64)).data
    assert (np.diagonal(a, axis1=-2, axis2=-1) == 0).all()


def test_weights_domain_error():
    with pytest.raises(ValueError, match="0, 1"):
        geometric_weights(Tensor(np.array([[0.0, 1.2], [0.3, 0.0]]), dtype=np.float64))


def test_row_mass_identity_random():
    gen = np.random.default_rng(1)
    for n in (1, 2, 3, 7, 16):
        p = gen.random((2, n, n))
        np.fill_diagonal(p[0], gen.random(n))
        a = geometric_weights(Tensor(p, dtype=np.float64)).data
        mask = ~np.eye(n, dtype=bool)
        escape = np.prod(np.where(mask, 1.0 - p, 1.0), axis=-1)
        np.testing.assert_allclose(a.sum(-1) + escape, 1.0, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2 ** 31 - 1))
def test_tie_break_two_neighbours(n, seed):
    gen = np.random.default_rng(seed)
    i = int(gen.integers(1, n - 1))
    prob = float(gen.random())
    p = np.zeros((n, n))
    p[i, i + 1] = prob
    p[i, i - 1] = prob
    a = geometric_weights(Tensor(p, dtype=np.float64)).data
    assert a[i, i + 1] == pytest.approx(prob)
    assert a[i, i - 1] == pytest.approx(prob * (1 - prob))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2 ** 31 - 1), st.floats(0.05, 0.9))
def test_monotone_shadowing(n, seed, bump):
    gen = np.random.default_rng(seed)
    p = gen.random((n, n))
    i = int(gen.integers(0, n))
    order = [k - 1 for k in geometric_ordering(i + 1, n)]
    if len(order) < 2:
        return
    pos = int(gen.integers(0, len(order) - 1))
    k = order[pos]
    p[i, k] = min(p[i, k], 1.0 - bump)
    before = geometric_weights(Tensor(p.copy(), dtype=np.float64)).data
    p2 = p.copy()
    p2[i, k] += bump * (1.0 - p[i, k])
    after = geometric_weights(Tensor(p2, dtype=np.float64)).data
    farther = order[pos + 1:]
    assert (after[i, farther] <= before[i, farther] + 1e-12).all()


def test_log_space_agrees_with_direct_product_extremes():
    gen = np.random.default_rng(2)
    for n in (2, 17, 64, 256):
        p = gen.random((n, n))
        p[0, -1] = 1e-8
        p[-1, 0] = 1.0 - 1e-8
        log_a = geometric_weights(Tensor(p, dtype=np.float64)).data
        direct = geometric_weights_direct(p)
        np.testing.assert_allclose(log_a, direct, atol=1e-5)


def test_direct_product_matches_pairwise_oracle():
    gen = np.random.default_rng(3)
    p = gen.random((7, 7))
    np.testing.assert_allclose(geometric_weights_direct(p), naive_geometric_weights(p), atol=1e-12)


def test_probs_all_zero_states_are_half():
    p = geo_params()
    for param in p.params():
        if param.name.endswith(("alpha",)):
            continue
        param.data[:] = 0.0
    h = Tensor(np.zeros((1, 4, 8)), dtype=np.float64)
    valid = np.ones((1, 4), dtype=bool)
    probs = att.geometric_probs(h, p, valid)
    np.testing.assert_allclose(probs.data, 0.5)


def test_probs_direction_bias_blocks_left():
    p = geo_params(seed=4)
    p.b_rl.data[:] = -50.0
    p.w_rl.data[:] = 0.0
    p.beta.data[:] = 1.0
    h = Tensor(np.random.default_rng(5).normal(size=(1, 5, 8)) * 0.1, dtype=np.float64)
    probs = att.geometric_probs(h, p, np.ones((1, 5), dtype=bool)).data
    i_idx, j_idx = np.meshgrid(np.arange(5), np.arange(5), indexing="ij")
    assert probs[0][:, i_idx > j_idx].max() < 1e-6


def test_probs_match_pairwise_oracle():
    p = geo_params(d=8, heads=2, seed=6)
    gen = np.random.default_rng(7)
    h = gen.normal(size=(5, 8))
    probs = att.geometric_probs(Tensor(h[None]), p, np.ones((1, 5), dtype=bool)).data[0]
    want = naive_geometric_probs(
        h, p.w_q.data, p.b_q.data, p.w_ke.data, p.w_lr.data, p.b_lr.data,
        p.w_rl.data, p.b_rl.data, p.alpha.data, p.beta.data, p.gamma.data, 2)
    np.testing.assert_allclose(probs, want, atol=1e-6)


def test_probs_padded_sources_are_zero():
    p = geo_params(seed=8)
    h = Tensor(np.random.default_rng(9).normal(size=(1, 5, 8)), dtype=np.float64)
    valid = np.array([[True, True, True, False, False]])
    probs = att.geometric_probs(h, p, valid).data
    assert (probs[..., 3:] == 0).all()


def test_attend_one_hot_rows_select_values():
    p = geo_params(seed=10)
    gen = np.random.default_rng(11)
    h = gen.normal(size=(1, 4, 8))
    valid = np.ones((1, 4), dtype=bool)
    # Saturate matches to the right neighbour: P=1 there shadows everything.
    p.alpha.data[:] = 0.0
    p.gamma.data[:] = 0.0
    p.beta.data[:] = 1.0
    p.w_lr.data[:] = 0.0
    p.w_rl.data[:] = 0.0
    p.b_lr.data[:] = 500.0
    p.b_rl.data[:] = -500.0
    out, weights = att.geometric_attend(Tensor(h, dtype=np.float64), p, valid)
    # Every target except the last picks exactly its right neighbour.
    picks = weights.data[0, 0].argmax(-1)
    np.testing.assert_array_equal(picks[:-1], np.arange(1, 4))
    v = h[0] @ p.w_v.data
    dh = 4
    for head in range(2):
        np.testing.assert_allclose(
            (weights.data[0, head] @ v[:, head * dh:(head + 1) * dh])[0],
            v[1, head * dh:(head + 1) * dh], atol=1e-8)
    np.testing.assert_allclose(out.data[0, :-1],
                               (v[1:] @ p.w_o.data), atol=1e-6)


def test_attend_padded_equals_unpadded_prefix():
    p = geo_params(seed=12)
    gen = np.random.default_rng(13)
    h = gen.normal(size=(1, 4, 8))
    exact, _ = att.geometric_attend(Tensor(h, dtype=np.float64), p, np.ones((1, 4), dtype=bool))
    padded_states = np.concatenate([h, gen.normal(size=(1, 3, 8))], axis=1)
    valid = np.array([[True] * 4 + [False] * 3])
    padded, _ = att.geometric_attend(Tensor(padded_states, dtype=np.float64), p, valid)
    np.testing.assert_allclose(padded.data[0, :4], exact.data[0], atol=1e-6)


def test_attend_row_mass_bounded_by_one():
    p = geo_params(seed=14)
    h = Tensor(np.random.default_rng(15).normal(size=(2, 6, 8)), dtype=np.float64)
    valid = np.ones((2, 6), dtype=bool)
    _, weights = att.geometric_attend(h, p, valid)
    assert weights.data.min() >= 0.0
    assert weights.data.sum(-1).max() <= 1.0 + 1e-6


def test_geometric_weights_grad_vs_fd():
    gen = np.random.default_rng(16)
    logits = Tensor(gen.normal(size=(3, 3)), dtype=np.float64)
    r = gen.normal(size=(3, 3))

    def f(points):
        (lg,) = points
        logp = ad.logsigmoid(lg)
        log1mp = ad.logsigmoid(ad.scale(lg, -1.0))
        a = att._weights_from_logs(logp, log1mp)
        return ad.sum_(ad.mul(a, Tensor(r, dtype=np.float64)))

    assert ad.grad_check(f, [logits], step=1e-6) < 1e-3
