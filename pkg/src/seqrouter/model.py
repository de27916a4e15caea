"""Encoder model: embedding, T applications of one shared layer, and a
single-column classification readout.

Weight sharing means the step count is a free knob: models can run more
steps at test time than they were trained with, without any new
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import EVAL, AttentionConfig, Mode, sinusoid_table
from .autodiff import Init, Parameter, Tensor, check_unique_names
from .layers import ACTConfig, ActResult, LayerParams, LayerVariant, act_halting, act_readout, encoder_step, init_layer
from .rng import RngTree


@dataclass
class ModelConfig:
    vocab_size: int
    n_classes: int
    d_model: int = 256
    d_ff: int = 512
    n_heads: int = 1
    n_layers: int = 14
    test_steps: int | None = None
    kind: str = "geometric"
    gated: bool = True
    readout: str = "last"
    act: ACTConfig | None = None
    dropout: float = 0.0
    att_dropout: float = 0.0

    def __post_init__(self):
        if self.readout not in ("last", "first"):
            raise ValueError(f"readout must be 'last' or 'first', got {self.readout!r}")
        if self.test_steps is not None and self.test_steps < self.n_layers:
            raise ValueError(f"test_steps {self.test_steps} < n_layers {self.n_layers}")

    @property
    def variant(self) -> LayerVariant:
        return LayerVariant(self.kind, self.gated)

    def attention_config(self) -> AttentionConfig:
        pos_drop = 0.0 if self.kind in ("geometric", "standard_abs") else self.att_dropout
        return AttentionConfig(self.d_model, self.n_heads, self.kind,
                               content_dropout=self.att_dropout, position_dropout=pos_drop)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "vocab_size", "n_classes", "d_model", "d_ff", "n_heads", "n_layers",
            "test_steps", "kind", "gated", "readout", "dropout", "att_dropout")}
        if self.act is not None:
            d["act"] = {"variant": self.act.variant, "t_max": self.act.t_max,
                        "epsilon": self.act.epsilon, "reg_weight": self.act.reg_weight}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        act = d.pop("act", None)
        cfg = cls(**d)
        if act is not None:
            cfg.act = ACTConfig(**act)
        return cfg


@dataclass
class StepTrace:
    attention: list[np.ndarray] = field(default_factory=list)  # per step (H, N, N)
    gates: list[np.ndarray] = field(default_factory=list)      # per step (N, d)


@dataclass
class ForwardOut:
    logits: Tensor
    act: ActResult | None = None
    trace: StepTrace | None = None


class EncoderModel:
    def __init__(self, cfg: ModelConfig, embed: Parameter, layer: LayerParams,
                 out_w: Parameter, out_b: Parameter,
                 act_w: Parameter | None = None, act_b: Parameter | None = None):
        self.cfg = cfg
        self.embed = embed
        self.layer = layer
        self.out_w = out_w
        self.out_b = out_b
        self.act_w = act_w
        self.act_b = act_b
        check_unique_names(self.parameters())

    @classmethod
    def build(cls, cfg: ModelConfig, rng: RngTree, dtype=np.float32) -> "EncoderModel":
        init = Init(rng, dtype=dtype)
        embed = init.linear("embed", cfg.vocab_size, cfg.d_model)
        layer = init_layer(init.sub("layer"), cfg.attention_config(), cfg.variant, cfg.d_ff)
        out_w = init.linear("out_w", cfg.d_model, cfg.n_classes)
        out_b = init.bias("out_b", cfg.n_classes)
        act_w = act_b = None
        if cfg.act is not None:
            act_w = init.linear("act_w", cfg.d_model, 1)
            act_b = init.bias("act_b", 1)
        return cls(cfg, embed, layer, out_w, out_b, act_w, act_b)

    def parameters(self) -> list[Parameter]:
        out = [self.embed] + self.layer.params() + [self.out_w, self.out_b]
        if self.act_w is not None:
            out += [self.act_w, self.act_b]
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def steps_for(self, mode: Mode) -> int:
        if mode.train or self.cfg.test_steps is None:
            return self.cfg.n_layers
        return self.cfg.test_steps

    def forward(self, tokens: np.ndarray, lengths: np.ndarray, *, steps: int | None = None,
                mode: Mode = EVAL, trace: bool = False) -> ForwardOut:
        tokens = np.asarray(tokens)
        lengths = np.asarray(lengths)
        b, n = tokens.shape
        if lengths.min() < 1:
            raise ValueError("empty sequence in batch")
        if tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size:
            raise ValueError(f"token id outside vocab of size {self.cfg.vocab_size}")
        if trace and b != 1:
            raise ValueError("traces are per-example; pass a single sequence")
        steps = steps if steps is not None else self.steps_for(mode)
        valid = np.arange(n)[None, :] < lengths[:, None]
        dtype = self.embed.dtype

        h = ad.embedding(self.embed, tokens)
        if self.cfg.kind == "standard_abs":
            pos = Tensor(sinusoid_table(np.arange(n), self.cfg.d_model, dtype))
            h = ad.add(ad.scale(h, math.sqrt(self.cfg.d_model)), pos)

        rec = StepTrace() if trace else None
        act_cfg = self.cfg.act
        if act_cfg is None:
            for t in range(steps):
                h, weights, gate = encoder_step(h, self.layer, valid, mode.child(f"step{t}"),
                                                self.cfg.dropout)
                if rec is not None:
                    rec.attention.append(weights.data[0].copy())
                    if gate is not None:
                        rec.gates.append(gate.data[0].copy())
            final = h
            act_res = None
        else:
            t_max = act_cfg.t_max if act_cfg.t_max is not None else steps
            states: list[Tensor] = []
            p_hats: list[Tensor] = []
            for t in range(t_max):
                if act_cfg.variant == "U":
                    p_hats.append(act_halting(h, self.act_w, self.act_b))
                h, weights, gate = encoder_step(h, self.layer, valid, mode.child(f"step{t}"),
                                                self.cfg.dropout)
                if act_cfg.variant == "A":
                    p_hats.append(act_halting(h, self.act_w, self.act_b))
                states.append(h)
                if rec is not None:
                    rec.attention.append(weights.data[0].copy())
                    if gate is not None:
                        rec.gates.append(gate.data[0].copy())
            act_res = act_readout(states, p_hats, act_cfg, valid)
            final = act_res.readout

        if self.cfg.readout == "last":
            col = lengths - 1
        else:
            col = np.zeros(b, dtype=np.int64)
        picked = ad.take_along(final, col[:, None, None], axis=1)
        logits = ad.add(ad.matmul(ad.reshape(picked, (b, self.cfg.d_model)), self.out_w), self.out_b)
        return ForwardOut(logits=logits, act=act_res, trace=rec)


def loss(out: ForwardOut, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy at the readout column, plus the halting
    regularizer when adaptive depth is on."""
    ce = ad.cross_entropy(out.logits, targets)
    if out.act is not None:
        return ad.add(ce, out.act.act_loss)
    return ce


def depth_heuristic(max_graph_depth: int, steps_per_op: int, extra: int) -> int:
    """Suggested step count: deepest path times steps per elementary
    operation, plus slack for readout and cross-column coordination."""
    if steps_per_op < 1:
        raise ValueError("steps_per_op must be >= 1")
    if max_graph_depth < 0:
        raise ValueError("max_graph_depth must be >= 0")
    return max_graph_depth * steps_per_op + extra
