"""Attention score and weight computations.

Four kinds are supported: standard content attention (absolute positions
added at the embedding), decomposed relative-position attention, its
gated absolute/relative extension, and distance-ordered geometric
attention with a directional score term. All functions are pure given
their parameters and operate on batches shaped (B, N, d) with a boolean
validity mask (B, N) marking non-pad columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Init, Parameter, Tensor
from .rng import RngTree

NEG_SCORE = -1e9  # additive mask value; exp() underflows to exactly 0


@dataclass
class Mode:
    """Runtime context for a forward pass: train toggles dropout, rng feeds it."""

    train: bool = False
    rng: RngTree | None = None

    def child(self, name: str) -> "Mode":
        return Mode(self.train, self.rng.child(name) if self.rng else None)


EVAL = Mode()


@dataclass
class AttentionConfig:
    d_model: int
    n_heads: int
    kind: str = "standard_abs"  # standard_abs | relative | abs_rel_gated | geometric
    content_dropout: float = 0.0
    position_dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class MhaParams:
    cfg: AttentionConfig
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_o: Parameter

    def params(self) -> list[Parameter]:
        return [self.w_q, self.w_k, self.w_v, self.w_o]


@dataclass
class RelAttentionParams:
    cfg: AttentionConfig
    w_q: Parameter
    w_ke: Parameter
    w_kp: Parameter
    b_qe: Parameter
    b_qp: Parameter
    w_v: Parameter
    w_o: Parameter
    w_ar: Parameter | None = None  # abs/rel gate, shared across heads
    b_ar: Parameter | None = None

    def params(self) -> list[Parameter]:
        out = [self.w_q, self.w_ke, self.w_kp, self.b_qe, self.b_qp, self.w_v, self.w_o]
        if self.w_ar is not None:
            out += [self.w_ar, self.b_ar]
        return out


@dataclass
class GeometricAttentionParams:
    cfg: AttentionConfig
    w_q: Parameter
    b_q: Parameter
    w_ke: Parameter
    w_lr: Parameter
    b_lr: Parameter
    w_rl: Parameter
    b_rl: Parameter
    alpha: Parameter
    beta: Parameter
    gamma: Parameter
    w_v: Parameter
    w_o: Parameter

    def params(self) -> list[Parameter]:
        return [self.w_q, self.b_q, self.w_ke, self.w_lr, self.b_lr, self.w_rl, self.b_rl,
                self.alpha, self.beta, self.gamma, self.w_v, self.w_o]


def init_attention(init: Init, cfg: AttentionConfig):
    d = cfg.d_model
    if cfg.kind == "standard_abs":
        return MhaParams(cfg, init.linear("w_q", d, d), init.linear("w_k", d, d),
                         init.linear("w_v", d, d), init.linear("w_o", d, d))
    if cfg.kind in ("relative", "abs_rel_gated"):
        gated = cfg.kind == "abs_rel_gated"
        return RelAttentionParams(
            cfg,
            w_q=init.linear("w_q", d, d),
            w_ke=init.linear("w_ke", d, d),
            w_kp=init.linear("w_kp", d, d),
            b_qe=init.bias("b_qe", d),
            b_qp=init.bias("b_qp", d),
            w_v=init.linear("w_v", d, d),
            w_o=init.linear("w_o", d, d),
            w_ar=init.linear("w_ar", d, 1) if gated else None,
            b_ar=init.bias("b_ar", 1) if gated else None,
        )
    if cfg.kind == "geometric":
        h = cfg.n_heads
        return GeometricAttentionParams(
            cfg,
            w_q=init.linear("w_q", d, d),
            b_q=init.bias("b_q", d),
            w_ke=init.linear("w_ke", d, d),
            w_lr=init.linear("w_lr", d, h),
            b_lr=init.bias("b_lr", h),
            w_rl=init.linear("w_rl", d, h),
            b_rl=init.bias("b_rl", h),
            alpha=init.gain("alpha", h, value=1.0 / math.sqrt(cfg.d_head)),
            beta=init.gain("beta", h, value=1.0),
            gamma=init.bias("gamma", h),
            w_v=init.linear("w_v", d, d),
            w_o=init.linear("w_o", d, d),
        )
    raise ValueError(f"unknown attention kind: {cfg.kind}")


# ---------------------------------------------------------------------------
# shared pieces


def sinusoid_table(positions: np.ndarray, d: int, dtype=np.float32) -> np.ndarray:
    """Standard sinusoidal embeddings for arbitrary (possibly negative or
    fractional) positions; no clamping, so longer sequences need no new
    parameters."""
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    k = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * k / d)
    table = np.empty((pos.shape[0], d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dtype)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    return ad.transpose(ad.reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def _source_invalid(valid: np.ndarray) -> np.ndarray:
    return ~valid[:, None, None, :]


def _check_sources(valid: np.ndarray) -> None:
    if not valid.any(axis=-1).all():
        raise ValueError("a sequence has all sources masked")


def _head_bias(b: Parameter, n_heads: int) -> Tensor:
    d = b.shape[0]
    return ad.reshape(b, (n_heads, 1, d // n_heads))


def _maybe_dropout(x: Tensor, rate: float, mode: Mode, site: str) -> Tensor:
    if mode.train and rate > 0.0:
        return ad.dropout(x, rate, mode.rng.child(site).generator())
    return x


def _project(h: Tensor, w: Parameter, n_heads: int) -> Tensor:
    return _split_heads(ad.matmul(h, w), n_heads)


# ---------------------------------------------------------------------------
# standard multi-head attention


def mha_standard(h: Tensor, p: MhaParams, valid: np.ndarray, mode: Mode = EVAL):
    """Softmax attention over valid sources; returns (output, weights)."""
    _check_sources(valid)
    cfg = p.cfg
    q = _project(h, p.w_q, cfg.n_heads)
    k = _project(h, p.w_k, cfg.n_heads)
    v = _project(h, p.w_v, cfg.n_heads)
    q = _maybe_dropout(q, cfg.content_dropout, mode, "att_content_q")
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(cfg.d_head))
    scores = ad.masked_fill(scores, _source_invalid(valid), NEG_SCORE)
    weights = ad.softmax(scores)
    out = ad.matmul(_merge_heads(ad.matmul(weights, v)), p.w_o)
    return out, weights


# ---------------------------------------------------------------------------
# relative / gated absolute-relative attention


def rel_scores(h: Tensor, p: RelAttentionParams, gate_mode: str, valid: np.ndarray,
               mode: Mode = EVAL, pos_base: int = 0) -> Tensor:
    """Raw pre-softmax scores, decomposed into content, content bias and a
    positional term that interpolates relative offsets and absolute
    positions with a per-target scalar gate (fixed at 1 for relative_only).
    Masked sources are already pushed to -inf."""
    if gate_mode not in ("relative_only", "abs_rel_gated"):
        raise ValueError(f"unknown gate_mode: {gate_mode}")
    cfg = p.cfg
    b, n, d = h.shape
    dtype = h.dtype

    q = _project(h, p.w_q, cfg.n_heads)
    q_e = ad.add(q, _head_bias(p.b_qe, cfg.n_heads))
    q_p = ad.add(q, _head_bias(p.b_qp, cfg.n_heads))
    q_e = _maybe_dropout(q_e, cfg.content_dropout, mode, "att_content_q")
    q_p = _maybe_dropout(q_p, cfg.position_dropout, mode, "att_pos_q")

    k_e = _project(h, p.w_ke, cfg.n_heads)
    content = ad.matmul(q_e, ad.transpose(k_e, (0, 1, 3, 2)))

    offsets = np.arange(-(n - 1), n)
    rel_emb = Tensor(sinusoid_table(offsets, d, dtype))
    k_rel = ad.transpose(ad.reshape(ad.matmul(rel_emb, p.w_kp), (2 * n - 1, cfg.n_heads, cfg.d_head)), (1, 0, 2))
    score_rel_all = ad.matmul(q_p, ad.transpose(k_rel, (0, 2, 1)))  # (B, H, N, 2N-1)
    i_idx = np.arange(n)[:, None]
    j_idx = np.arange(n)[None, :]
    offset_idx = (i_idx - j_idx) + (n - 1)
    score_rel = ad.take_along(score_rel_all, offset_idx[None, None, :, :], axis=-1)

    if gate_mode == "relative_only":
        positional = score_rel
    else:
        abs_emb = Tensor(sinusoid_table(pos_base + np.arange(n), d, dtype))
        k_abs = ad.transpose(ad.reshape(ad.matmul(abs_emb, p.w_kp), (n, cfg.n_heads, cfg.d_head)), (1, 0, 2))
        score_abs = ad.matmul(q_p, ad.transpose(k_abs, (0, 2, 1)))
        r = ad.sigmoid(ad.add(ad.matmul(h, p.w_ar), p.b_ar))  # (B, N, 1)
        r = ad.reshape(r, (b, 1, n, 1))
        positional = ad.add(ad.mul(r, score_rel), ad.mul(ad.shift(ad.scale(r, -1.0), 1.0), score_abs))

    scores = ad.scale(ad.add(content, positional), 1.0 / math.sqrt(cfg.d_head))
    return ad.masked_fill(scores, _source_invalid(valid), NEG_SCORE)


def rel_attend(h: Tensor, p: RelAttentionParams, valid: np.ndarray, mode: Mode = EVAL,
               pos_base: int = 0):
    _check_sources(valid)
    gate_mode = "abs_rel_gated" if p.w_ar is not None else "relative_only"
    weights = ad.softmax(rel_scores(h, p, gate_mode, valid, mode, pos_base))
    v = _project(h, p.w_v, p.cfg.n_heads)
    out = ad.matmul(_merge_heads(ad.matmul(weights, v)), p.w_o)
    return out, weights


# ---------------------------------------------------------------------------
# geometric attention


def geometric_ordering(i: int, n: int) -> list[int]:
    """Sources ordered by closeness to target i (both 1-based), nearer
    first; at equal distance the right neighbour precedes the left; i
    itself is excluded."""
    if not 1 <= i <= n:
        raise ValueError(f"target index {i} outside 1..{n}")
    return sorted((k for k in range(1, n + 1) if k != i), key=lambda k: (abs(i - k), k < i))


@lru_cache(maxsize=None)
def _ordering_arrays(n: int) -> tuple[np.ndarray, np.ndarray]:
    """ORD[i] lists sources (0-based) by closeness; INV[i, j] is j's rank in
    ORD[i], with the diagonal pointing at an extra all-zero slot n-1."""
    ord_idx = np.empty((n, max(n - 1, 1)), dtype=np.int64)
    inv_idx = np.full((n, n), n - 1, dtype=np.int64)
    for i in range(n):
        order = [k - 1 for k in geometric_ordering(i + 1, n)]
        if n == 1:
            ord_idx[i, 0] = 0
            continue
        ord_idx[i] = order
        for rank, j in enumerate(order):
            inv_idx[i, j] = rank
    return ord_idx, inv_idx


def _weights_from_logs(logp: Tensor, log1mp: Tensor) -> Tensor:
    """Distance-ordered product weights, evaluated in log space with
    cumulative sums along each target's closeness ordering."""
    n = logp.shape[-1]
    if n == 1:
        return ad.scale(logp, 0.0)
    ord_idx, inv_idx = _ordering_arrays(n)
    lead = (1,) * (logp.data.ndim - 2)
    ord_b = ord_idx.reshape(lead + ord_idx.shape)
    inv_b = inv_idx.reshape(lead + inv_idx.shape)

    shadow = ad.take_along(log1mp, ord_b, axis=-1)  # (..., N, N-1) ordered
    zeros1 = Tensor(np.zeros(logp.shape[:-1] + (1,), dtype=logp.dtype.type))
    if n == 2:
        prefix = zeros1
    else:
        csum = ad.cumsum(shadow, axis=-1)
        head = ad.split(csum, [n - 2, 1], axis=-1)[0]
        prefix = ad.concat([zeros1, head], axis=-1)
    log_a = ad.add(ad.take_along(logp, ord_b, axis=-1), prefix)
    a_ordered = ad.exp(log_a)
    padded = ad.concat([a_ordered, zeros1], axis=-1)
    return ad.take_along(padded, inv_b, axis=-1)


def geometric_weights(p: Tensor) -> Tensor:
    """Convert match probabilities (..., N, N) to attention weights
    A[i, j] = P[i, j] * prod over closer sources k of (1 - P[i, k]),
    with a zero diagonal."""
    if (p.data < 0).any() or (p.data > 1).any():
        raise ValueError("match probabilities outside [0, 1]")
    logp = ad.log(p)
    log1mp = ad.log1p(ad.scale(p, -1.0))
    return _weights_from_logs(logp, log1mp)


def geometric_weights_direct(p: np.ndarray) -> np.ndarray:
    """Plain product-form evaluation (no log space); vectorized second route
    used to validate the log-space path."""
    n = p.shape[-1]
    if n == 1:
        return np.zeros_like(p)
    ord_idx, inv_idx = _ordering_arrays(n)
    shadow = np.take_along_axis(1.0 - p, np.broadcast_to(ord_idx, p.shape[:-2] + ord_idx.shape), axis=-1)
    prefix = np.cumprod(shadow, axis=-1)
    prefix = np.concatenate([np.ones(p.shape[:-1] + (1,), dtype=p.dtype), prefix[..., :-1]], axis=-1)
    a_ordered = np.take_along_axis(p, np.broadcast_to(ord_idx, p.shape[:-2] + ord_idx.shape), axis=-1) * prefix
    padded = np.concatenate([a_ordered, np.zeros(p.shape[:-1] + (1,), dtype=p.dtype)], axis=-1)
    return np.take_along_axis(padded, np.broadcast_to(inv_idx, p.shape), axis=-1)


def _geometric_logits(h: Tensor, p: GeometricAttentionParams, mode: Mode) -> Tensor:
    cfg = p.cfg
    b, n, d = h.shape
    nh = cfg.n_heads

    q = ad.add(ad.matmul(h, p.w_q), p.b_q)
    q = _maybe_dropout(q, cfg.content_dropout, mode, "att_content_q")
    q = _split_heads(q, nh)
    k_e = _project(h, p.w_ke, nh)
    content = ad.matmul(q, ad.transpose(k_e, (0, 1, 3, 2)))

    d_lr = ad.reshape(ad.transpose(ad.add(ad.matmul(h, p.w_lr), p.b_lr), (0, 2, 1)), (b, nh, n, 1))
    d_rl = ad.reshape(ad.transpose(ad.add(ad.matmul(h, p.w_rl), p.b_rl), (0, 2, 1)), (b, nh, n, 1))
    right_or_self = np.arange(n)[:, None] <= np.arange(n)[None, :]
    direction = ad.where_mask(right_or_self, d_lr, d_rl)

    alpha = ad.reshape(p.alpha, (nh, 1, 1))
    beta = ad.reshape(p.beta, (nh, 1, 1))
    gamma = ad.reshape(p.gamma, (nh, 1, 1))
    return ad.add(ad.add(ad.mul(alpha, content), ad.mul(beta, direction)), gamma)


def geometric_probs(h: Tensor, p: GeometricAttentionParams, valid: np.ndarray,
                    mode: Mode = EVAL) -> Tensor:
    """Per-pair match probabilities (B, H, N, N); padded sources forced to 0
    so they neither receive mass nor shadow closer matches."""
    logits = _geometric_logits(h, p, mode)
    probs = ad.sigmoid(logits)
    return ad.masked_fill(probs, _source_invalid(valid), 0.0)


def geometric_attend(h: Tensor, p: GeometricAttentionParams, valid: np.ndarray,
                     mode: Mode = EVAL):
    _check_sources(valid)
    logits = _geometric_logits(h, p, mode)
    src_invalid = _source_invalid(valid)
    logp = ad.masked_fill(ad.logsigmoid(logits), src_invalid, NEG_SCORE)
    log1mp = ad.masked_fill(ad.logsigmoid(ad.scale(logits, -1.0)), src_invalid, 0.0)
    weights = _weights_from_logs(logp, log1mp)
    v = _project(h, p.w_v, p.cfg.n_heads)
    out = ad.matmul(_merge_heads(ad.matmul(weights, v)), p.w_o)
    return out, weights


def attend(h: Tensor, params, valid: np.ndarray, mode: Mode = EVAL):
    """Dispatch on the parameter bundle's attention kind."""
    if isinstance(params, GeometricAttentionParams):
        return geometric_attend(h, params, valid, mode)
    if isinstance(params, RelAttentionParams):
        return rel_attend(h, params, valid, mode)
    return mha_standard(h, params, valid, mode)
