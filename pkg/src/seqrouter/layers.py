"""One shared encoder step in all ablation variants, plus adaptive-depth
readout wrappers.

The gated step computes attention with a residual and layernorm, a
feedforward update WITHOUT a residual, and a sigmoid gate that blends the
update with the unchanged input per channel; a closed gate copies the
column to the next step bit for bit. The ungated step is a standard
post-norm encoder layer. Parameters are shared across steps by reusing
the same LayerParams object.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention as att
from . import autodiff as ad
from .attention import AttentionConfig, Mode, EVAL
from .autodiff import Init, Parameter, Tensor

GATE_BIAS_INIT = -3.0


@dataclass(frozen=True)
class LayerVariant:
    kind: str  # standard_abs | relative | abs_rel_gated | geometric
    gated: bool = False

    @property
    def ffn_norm(self) -> str:
        # Gated non-geometric variants squash the update with tanh instead
        # of a layernorm.
        if self.gated and self.kind != "geometric":
            return "tanh"
        return "layernorm"

    def label(self) -> str:
        return self.kind + ("+gate" if self.gated else "")


@dataclass
class LayerParams:
    variant: LayerVariant
    attn: object
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter
    ln_att_g: Parameter
    ln_att_b: Parameter
    gate_w1: Parameter | None = None
    gate_b1: Parameter | None = None
    gate_w2: Parameter | None = None
    gate_b2: Parameter | None = None
    ln_ffn_g: Parameter | None = None
    ln_ffn_b: Parameter | None = None

    def params(self) -> list[Parameter]:
        out = self.attn.params() + [self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2,
                                    self.ln_att_g, self.ln_att_b]
        for p in (self.gate_w1, self.gate_b1, self.gate_w2, self.gate_b2,
                  self.ln_ffn_g, self.ln_ffn_b):
            if p is not None:
                out.append(p)
        return out


def init_layer(init: Init, att_cfg: AttentionConfig, variant: LayerVariant, d_ff: int) -> LayerParams:
    d = att_cfg.d_model
    attn = att.init_attention(init.sub("att"), att_cfg)
    lp = LayerParams(
        variant=variant,
        attn=attn,
        ffn_w1=init.linear("ffn_w1", d, d_ff),
        ffn_b1=init.bias("ffn_b1", d_ff),
        ffn_w2=init.linear("ffn_w2", d_ff, d),
        ffn_b2=init.bias("ffn_b2", d),
        ln_att_g=init.gain("ln_att_g", d),
        ln_att_b=init.bias("ln_att_b", d),
    )
    if variant.gated:
        lp.gate_w1 = init.linear("gate_w1", d, d)
        lp.gate_b1 = init.bias("gate_b1", d)
        lp.gate_w2 = init.linear("gate_w2", d, d)
        lp.gate_b2 = init.bias("gate_b2", d, value=GATE_BIAS_INIT)
    if variant.ffn_norm == "layernorm":
        lp.ln_ffn_g = init.gain("ln_ffn_g", d)
        lp.ln_ffn_b = init.bias("ln_ffn_b", d)
    return lp


def _ffn(x: Tensor, w1, b1, w2, b2, drop: float, mode: Mode, site: str) -> Tensor:
    hidden = ad.relu(ad.add(ad.matmul(x, w1), b1))
    if mode.train and drop > 0.0:
        hidden = ad.dropout(hidden, drop, mode.rng.child(site).generator())
    return ad.add(ad.matmul(hidden, w2), b2)


def _restore_pads(h_next: Tensor, h: Tensor, valid: np.ndarray) -> Tensor:
    return ad.where_mask(valid[:, :, None], h_next, h)


def gated_step(h: Tensor, lp: LayerParams, valid: np.ndarray, mode: Mode = EVAL,
               drop: float = 0.0):
    """Copy-gated step; returns (next states, attention weights, gate)."""
    if not lp.variant.gated:
        raise ValueError("gated_step called with ungated layer parameters")
    att_out, weights = att.attend(h, lp.attn, valid, mode)
    a = ad.layernorm(ad.add(att_out, h), lp.ln_att_g, lp.ln_att_b)
    update = _ffn(a, lp.ffn_w1, lp.ffn_b1, lp.ffn_w2, lp.ffn_b2, drop, mode, "ffn")
    if lp.variant.ffn_norm == "layernorm":
        update = ad.layernorm(update, lp.ln_ffn_g, lp.ln_ffn_b)
    else:
        update = ad.tanh(update)
    gate = ad.sigmoid(_ffn(a, lp.gate_w1, lp.gate_b1, lp.gate_w2, lp.gate_b2, 0.0, mode, "gate"))
    mixed = ad.add(ad.mul(gate, update), ad.mul(ad.shift(ad.scale(gate, -1.0), 1.0), h))
    return _restore_pads(mixed, h, valid), weights, gate


def ungated_step(h: Tensor, lp: LayerParams, valid: np.ndarray, mode: Mode = EVAL,
                 drop: float = 0.0):
    """Standard post-norm encoder step; returns (next states, weights, None)."""
    att_out, weights = att.attend(h, lp.attn, valid, mode)
    a = ad.layernorm(ad.add(att_out, h), lp.ln_att_g, lp.ln_att_b)
    update = _ffn(a, lp.ffn_w1, lp.ffn_b1, lp.ffn_w2, lp.ffn_b2, drop, mode, "ffn")
    out = ad.layernorm(ad.add(update, a), lp.ln_ffn_g, lp.ln_ffn_b)
    return _restore_pads(out, h, valid), weights, None


def encoder_step(h: Tensor, lp: LayerParams, valid: np.ndarray, mode: Mode = EVAL,
                 drop: float = 0.0):
    if lp.variant.gated:
        return gated_step(h, lp, valid, mode, drop)
    return ungated_step(h, lp, valid, mode, drop)


# ---------------------------------------------------------------------------
# adaptive computation time


@dataclass
class ACTConfig:
    variant: str = "A"  # A: remainder-correct readout; U: universal-transformer listing
    t_max: int | None = None  # None: use the model's step count
    epsilon: float = 0.01
    reg_weight: float = 0.03

    def __post_init__(self):
        if self.variant not in ("A", "U"):
            raise ValueError(f"unknown ACT variant: {self.variant}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.t_max is not None and self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")


@dataclass
class ActResult:
    readout: Tensor          # (B, N, d) per-column halting-weighted states
    ponder: np.ndarray       # (B, N) readout step per column, 1-based
    remainder: Tensor        # (B, N)
    act_loss: Tensor         # scalar: reg_weight * mean over valid columns


def act_halting(h: Tensor, w_h: Parameter, b_h: Parameter) -> Tensor:
    """Halting unit: p_hat = sigmoid(W_H h + b_H), shape (B, N)."""
    logits = ad.add(ad.matmul(h, w_h), b_h)
    return ad.reshape(ad.sigmoid(logits), h.shape[:2])


def act_schedule(p_hats: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pure remainder-correct schedule over a (T, ...) stack of halting
    units. Returns (halt step 1-based, per-step readout weights, remainder).
    Columns that never cross the threshold read out at T with the remainder
    as their final weight, so weights always sum to 1."""
    p_hats = np.asarray(p_hats, dtype=np.float64)
    t_max = p_hats.shape[0]
    thresh = 1.0 - epsilon
    cum = np.cumsum(p_hats, axis=0)
    crossed = cum >= thresh
    any_cross = crossed.any(axis=0)
    first = np.argmax(crossed, axis=0)  # 0-based step index of first crossing
    halt_step = np.where(any_cross, first + 1, t_max)
    steps = np.arange(1, t_max + 1).reshape((t_max,) + (1,) * (p_hats.ndim - 1))
    running = steps < halt_step
    halting = steps == halt_step
    cum_before = cum - p_hats
    remainder = np.take_along_axis(1.0 - cum_before, halt_step[None, ...] - 1, axis=0)[0]
    weights = p_hats * running + remainder * halting
    return halt_step, weights, remainder


def act_readout(states: list[Tensor], p_hats: list[Tensor], cfg: ACTConfig,
                valid: np.ndarray) -> ActResult:
    """Combine per-step states into per-column readouts.

    Variant A weights state t by p_hat_t while running and by the remainder
    at the halt step (including a proper remainder at t_max). Variant U
    follows the universal-transformer listing: the same weights, but states
    fold in as o <- w*h + (1-w)*o, and columns that never cross the
    threshold get no remainder correction.
    """
    if not states:
        raise ValueError("act_readout needs at least one step")
    t_max = len(states)
    b, n, d = states[0].shape
    phat_data = np.stack([p.data for p in p_hats], axis=0)
    halt_step, _, _ = act_schedule(phat_data, cfg.epsilon)
    thresh = 1.0 - cfg.epsilon
    cum = np.cumsum(phat_data, axis=0)
    any_cross = (cum >= thresh).any(axis=0)

    dtype = states[0].dtype.type
    readout: Tensor | None = None
    remainder: Tensor | None = None
    run_sum: Tensor | None = None
    for t in range(1, t_max + 1):
        running = (t < halt_step).astype(dtype)
        halting = (t == halt_step).astype(dtype)
        if cfg.variant == "U":
            # Never-crossing columns stay "running" through t_max and keep
            # plain p_hat weights; their remainder is left unhandled.
            halting = halting * any_cross.astype(dtype)
            running = running + (t == halt_step).astype(dtype) * (1.0 - any_cross.astype(dtype))
        p_t = p_hats[t - 1]
        if run_sum is None:
            rem_t = Tensor(np.ones((b, n), dtype=dtype))
        else:
            rem_t = ad.shift(ad.scale(run_sum, -1.0), 1.0)
        w_t = ad.add(ad.mul(p_t, Tensor(running)), ad.mul(rem_t, Tensor(halting)))
        contrib = ad.mul(ad.reshape(w_t, (b, n, 1)), states[t - 1])
        if cfg.variant == "A":
            readout = contrib if readout is None else ad.add(readout, contrib)
        else:
            keep = ad.mul(ad.reshape(ad.shift(ad.scale(w_t, -1.0), 1.0), (b, n, 1)), readout) \
                if readout is not None else None
            readout = contrib if keep is None else ad.add(contrib, keep)
        rem_contrib = ad.mul(rem_t, Tensor(halting))
        remainder = rem_contrib if remainder is None else ad.add(remainder, rem_contrib)
        run_sum = p_t if run_sum is None else ad.add(run_sum, p_t)

    lengths = valid.sum(axis=1)
    col_weight = (valid / lengths[:, None] / b).astype(dtype)
    act_loss = ad.scale(ad.sum_(ad.mul(remainder, Tensor(col_weight))), cfg.reg_weight)
    return ActResult(readout=readout, ponder=halt_step, remainder=remainder, act_loss=act_loss)
