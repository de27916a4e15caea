import numpy as np
import pytest

from seqrouter import autodiff as ad
from seqrouter import layers
from seqrouter.attention import AttentionConfig, Mode
from seqrouter.autodiff import Init, Tape, Tensor
from seqrouter.layers import LayerVariant, encoder_step, gated_step, init_layer, ungated_step
from seqrouter.optim import grad_norm
from seqrouter.rng import RngTree


def build_layer(kind="geometric", gated=True, d=8, heads=2, d_ff=16, seed=0, dtype=np.float64):
    variant = LayerVariant(kind, gated)
    cfg = AttentionConfig(d_model=d, n_heads=heads, kind=kind)
    return init_layer(Init(RngTree(seed), dtype=dtype, prefix="layer"), cfg, variant, d_ff)


def states(b, n, d, seed=0, dtype=np.float64):
    gen = np.random.default_rng(seed)
    return Tensor(gen.normal(size=(b, n, d)).astype(dtype))


def test_ffn_norm_choice_per_variant():
    assert LayerVariant("geometric", True).ffn_norm == "layernorm"
    assert LayerVariant("relative", True).ffn_norm == "tanh"
    assert LayerVariant("abs_rel_gated", True).ffn_norm == "tanh"
    assert LayerVariant("relative", False).ffn_norm == "layernorm"


def test_gate_bias_initialized_to_minus_three():
    lp = build_layer()
    assert (lp.gate_b2.data == -3.0).all()


def test_gate_forced_closed_is_bitwise_passthrough():
    lp = build_layer(seed=1)
    lp.gate_b2.data[:] = -1e9
    h = states(2, 5, 8, seed=2)
    out, _, gate = gated_step(h, lp, np.ones((2, 5), dtype=bool))
    assert (gate.data == 0.0).all()
    assert (out.data == h.data).all()


def test_gate_forced_open_gives_update_exactly():
    lp = build_layer(seed=3)
    lp.gate_b2.data[:] = 1e9
    h = states(1, 4, 8, seed=4)
    valid = np.ones((1, 4), dtype=bool)
    out, _, gate = gated_step(h, lp, valid)
    assert (gate.data == 1.0).all()
    # Recompute the update head by hand: LN(att + h) -> FFN -> LN.
    import seqrouter.attention as att
    a_in, _ = att.attend(h, lp.attn, valid)
    a = ad.layernorm(ad.add(a_in, h), lp.ln_att_g, lp.ln_att_b)
    f = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(a, lp.ffn_w1), lp.ffn_b1)), lp.ffn_w2), lp.ffn_b2)
    u = ad.layernorm(f, lp.ln_ffn_g, lp.ln_ffn_b)
    np.testing.assert_allclose(out.data, u.data, atol=1e-12)


def test_fresh_init_mean_gate_near_sigmoid_minus_three():
    lp = build_layer(seed=5, dtype=np.float32)
    h = states(8, 6, 8, seed=6, dtype=np.float32)
    _, _, gate = gated_step(h, lp, np.ones((8, 6), dtype=bool))
    assert abs(gate.data.mean() - 0.0474) < 0.02


def test_gated_step_requires_gate_params():
    lp = build_layer(gated=False, kind="relative")
    with pytest.raises(ValueError, match="ungated"):
        gated_step(states(1, 3, 8), lp, np.ones((1, 3), dtype=bool))


def test_pad_columns_unchanged():
    lp = build_layer(seed=7)
    h = states(2, 6, 8, seed=8)
    valid = np.array([[True] * 4 + [False] * 2, [True] * 6])
    out, _, _ = gated_step(h, lp, valid)
    np.testing.assert_array_equal(out.data[0, 4:], h.data[0, 4:])


def test_ungated_matches_manual_reference():
    lp = build_layer(kind="relative", gated=False, seed=9)
    h = states(1, 5, 8, seed=10)
    valid = np.ones((1, 5), dtype=bool)
    out, _, _ = ungated_step(h, lp, valid)
    import seqrouter.attention as att
    a_in, _ = att.rel_attend(h, lp.attn, valid)
    a = ad.layernorm(ad.add(a_in, h), lp.ln_att_g, lp.ln_att_b)
    f = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(a, lp.ffn_w1), lp.ffn_b1)), lp.ffn_w2), lp.ffn_b2)
    want = ad.layernorm(ad.add(f, a), lp.ln_ffn_g, lp.ln_ffn_b)
    np.testing.assert_allclose(out.data, want.data, atol=1e-5)


def test_ungated_single_column_sequence():
    lp = build_layer(kind="standard_abs", gated=False, seed=11)
    out, _, _ = ungated_step(states(1, 1, 8, seed=12), lp, np.ones((1, 1), dtype=bool))
    assert out.shape == (1, 1, 8)


def test_weight_sharing_has_no_per_step_params():
    lp = build_layer(seed=13)
    names = [p.name for p in lp.params()]
    assert len(names) == len(set(names))
    h = states(1, 4, 8, seed=14)
    valid = np.ones((1, 4), dtype=bool)
    for _ in range(3):
        h, _, _ = encoder_step(h, lp, valid)
    assert h.shape == (1, 4, 8)


def test_gate_gradient_reaches_update_ffn():
    lp = build_layer(seed=15)
    h = states(2, 4, 8, seed=16)
    valid = np.ones((2, 4), dtype=bool)
    with Tape() as tape:
        out, _, _ = gated_step(h, lp, valid)
        tape.backward(ad.sum_(out))
    assert grad_norm([lp.ffn_w1]) > 0
    assert grad_norm([lp.ffn_w2]) > 0


def test_act_halting_zero_params_is_half():
    w_h = layers.Parameter(np.zeros((8, 1)), "w_h", decay=True, dtype=np.float64)
    b_h = layers.Parameter(np.zeros(1), "b_h", decay=False, dtype=np.float64)
    p = layers.act_halting(states(2, 3, 8, seed=17), w_h, b_h)
    np.testing.assert_allclose(p.data, 0.5)
    assert p.shape == (2, 3)


def test_act_schedule_termination_rule():
    phat = np.array([[0.3], [0.5], [0.4], [0.9]])
    halt, weights, rem = layers.act_schedule(phat, epsilon=0.01)
    # Cumulative sums: 0.3, 0.8, 1.2 -> crosses 0.99 at step 3.
    assert halt[0] == 3
    np.testing.assert_allclose(weights[:, 0], [0.3, 0.5, 1 - 0.8, 0.0])
    np.testing.assert_allclose(rem[0], 0.2)


def test_act_schedule_immediate_halt():
    halt, weights, rem = layers.act_schedule(np.ones((4, 2)), epsilon=0.01)
    np.testing.assert_array_equal(halt, 1)
    np.testing.assert_allclose(weights[0], 1.0)
    np.testing.assert_allclose(weights[1:], 0.0)
    np.testing.assert_allclose(rem, 1.0)


def test_act_schedule_never_halts_runs_to_tmax():
    phat = np.full((5, 3), 0.1)
    halt, weights, rem = layers.act_schedule(phat, epsilon=0.01)
    np.testing.assert_array_equal(halt, 5)
    np.testing.assert_allclose(weights[:4], 0.1)
    np.testing.assert_allclose(weights[4], 1 - 0.4)
    np.testing.assert_allclose(weights.sum(axis=0), 1.0)


def test_act_config_validation():
    with pytest.raises(ValueError):
        layers.ACTConfig(variant="X")
    with pytest.raises(ValueError):
        layers.ACTConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        layers.ACTConfig(t_max=0)


def _act_inputs(t_max, b, n, d, seed, phat_rows):
    gen = np.random.default_rng(seed)
    states_list = [Tensor(gen.normal(size=(b, n, d))) for _ in range(t_max)]
    p_hats = [Tensor(np.full((b, n), row, dtype=np.float64)) for row in phat_rows]
    return states_list, p_hats


def test_act_readout_variant_a_weights_states():
    states_list, p_hats = _act_inputs(3, 1, 2, 4, 18, [0.6, 0.6, 0.2])
    cfg = layers.ACTConfig(variant="A")
    res = layers.act_readout(states_list, p_hats, cfg, np.ones((1, 2), dtype=bool))
    # Halts at step 2 (0.6 + 0.6 >= 0.99); weights are [0.6, 0.4, 0].
    np.testing.assert_array_equal(res.ponder, 2)
    want = 0.6 * states_list[0].data + 0.4 * states_list[1].data
    np.testing.assert_allclose(res.readout.data, want, atol=1e-12)
    np.testing.assert_allclose(res.remainder.data, 0.4, atol=1e-12)
    np.testing.assert_allclose(res.act_loss.item(), 0.03 * 0.4, atol=1e-9)


def test_act_readout_variant_u_blends_states():
    states_list, p_hats = _act_inputs(2, 1, 1, 3, 19, [0.3, 0.2])
    cfg = layers.ACTConfig(variant="U")
    res = layers.act_readout(states_list, p_hats, cfg, np.ones((1, 1), dtype=bool))
    # Never crosses: o = 0.2*h2 + 0.8*(0.3*h1); remainder left at zero.
    np.testing.assert_array_equal(res.ponder, 2)
    want = 0.2 * states_list[1].data + 0.8 * 0.3 * states_list[0].data
    np.testing.assert_allclose(res.readout.data, want, atol=1e-12)
    np.testing.assert_allclose(res.remainder.data, 0.0)


def test_act_readout_variant_u_halted_column_keeps_remainder():
    states_list, p_hats = _act_inputs(3, 1, 1, 3, 20, [0.7, 0.5, 0.9])
    cfg = layers.ACTConfig(variant="U")
    res = layers.act_readout(states_list, p_hats, cfg, np.ones((1, 1), dtype=bool))
    # Crosses at step 2: weights [0.7, 0.3, 0]; U blend keeps halted readout.
    np.testing.assert_array_equal(res.ponder, 2)
    want = 0.3 * states_list[1].data + 0.7 * 0.7 * states_list[0].data
    np.testing.assert_allclose(res.readout.data, want, atol=1e-12)
    np.testing.assert_allclose(res.remainder.data, 0.3, atol=1e-12)


def test_act_halting_mass_sums_to_one_when_halted():
    gen = np.random.default_rng(21)
    phat = gen.random((6, 100))
    halt, weights, _ = layers.act_schedule(phat, epsilon=0.01)
    sums = weights.sum(axis=0)
    halted = halt < 6
    np.testing.assert_allclose(sums[halted], 1.0, atol=1e-6)
    assert (halt <= 6).all() and (halt >= 1).all()


def test_gated_step_train_mode_dropout_changes_output():
    lp = build_layer(seed=22, dtype=np.float32)
    h = states(1, 4, 8, seed=23, dtype=np.float32)
    valid = np.ones((1, 4), dtype=bool)
    eval_out, _, _ = gated_step(h, lp, valid)
    train_out, _, _ = gated_step(h, lp, valid, Mode(train=True, rng=RngTree(1, "d")), drop=0.5)
    assert np.abs(train_out.data - eval_out.data).max() > 1e-6
