"""Closed-form FLOP and byte counts for every layer of a decoder block.

All functions accept scalars or numpy arrays for the batch (``B``) and the
sequence length, so a whole sweep grid can be costed in one call.

Conventions:

* ``B`` is the number of requests processed by one device (the parallelism
  module turns a system batch into this figure).
* A request contributes ``q`` query rows: the full prompt in prefill, one token
  in decode. ``L`` is the number of cached positions attended to.
* Every operand is read or written exactly once from main memory unless a layer
  is explicitly fused.
* Softmax, RoPE rotation and norm/residual passes are bytes-only (zero FLOPs).
* Score matrices are costed densely (no causal-mask discount).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hw import AcceleratorSpec, roofline_time
from .model import MLA, ModelSpec

# layer groups used by breakdowns
FC = "fc"
DECOMPRESS = "decompress"
CORE = "core"
OTHER = "other"
FFN = "ffn"
MOE = "moe"

NORM_PASSES = 5  # norm read+write, residual read x2 + write, per row of d_emb


@dataclass(frozen=True)
class Phase:
    """``prefill`` over ``length`` prompt tokens, or one ``decode`` step at context ``length``."""

    kind: str
    length: object

    def __post_init__(self):
        if self.kind not in ("prefill", "decode"):
            raise ValueError(f"phase must be 'prefill' or 'decode', got {self.kind!r}")
        if np.any(np.asarray(self.length) < 1):
            raise ValueError("sequence length must be >= 1")

    @classmethod
    def prefill(cls, l_in) -> "Phase":
        return cls("prefill", l_in)

    @classmethod
    def decode(cls, length) -> "Phase":
        return cls("decode", length)

    @property
    def q_rows(self):
        return self.length if self.kind == "prefill" else 1


@dataclass(frozen=True)
class LayerCost:
    label: str
    flops: object
    bytes: object
    group: str = OTHER

    @property
    def ai(self):
        """Arithmetic intensity; inf for a layer that moves no bytes."""
        with np.errstate(divide="ignore", invalid="ignore"):
            ai = np.where(np.asarray(self.bytes) > 0,
                          np.asarray(self.flops, dtype=float) / np.asarray(self.bytes, dtype=float),
                          np.inf)
        return float(ai) if ai.ndim == 0 else ai

    def time(self, spec: AcceleratorSpec):
        return roofline_time(self.flops, self.bytes, spec)

    def scaled(self, k) -> "LayerCost":
        return LayerCost(self.label, self.flops * k, self.bytes * k, self.group)


def fc_cost(b_eff, in_dim, out_dim, dtype_bytes, label="fc", group=FC) -> LayerCost:
    """Dense projection of ``b_eff`` rows: weights, input and output each touched once."""
    flops = 2 * b_eff * in_dim * out_dim
    nbytes = dtype_bytes * (in_dim * out_dim + b_eff * in_dim + b_eff * out_dim)
    return LayerCost(label, flops, nbytes, group)


def _less_bytes(cost: LayerCost, nbytes) -> LayerCost:
    return LayerCost(cost.label, cost.flops, cost.bytes - nbytes, cost.group)


def _heads(model: ModelSpec, heads):
    return model.n_hd if heads is None else heads


def mla_block_cost(model: ModelSpec, phase: Phase, B, *, reorder: bool = False,
                   fused: bool = False, heads=None) -> list[LayerCost]:
    """Attention-block layers of MLA on one device holding ``heads`` heads.

    Without reordering the cached latent is decompressed into per-head K and V
    (layers d, e). With reordering W_DK is folded into the queries and W_DV into
    the outputs, so the score and context layers run directly on C_KV with
    d_kvco-wide heads stacked into one matrix.

    In decode with reordering, the Q decompression feeds the W_DK product and
    the W_DV product feeds the output projection row by row; those one-row
    intermediates stay on chip and are not counted as memory traffic.

    ``fused`` merges score, RoPE score, softmax and context into one layer that
    keeps the score matrix on chip.
    """
    att = model.attention
    if not isinstance(att, MLA):
        raise TypeError(f"{model.name} does not use MLA attention")
    dt, E, D = model.dtype_bytes, model.d_emb, model.d_hd
    h = _heads(model, heads)
    Qc, Kc, R = att.d_qco, att.d_kvco, att.d_rope
    L = phase.length
    rq = B * phase.q_rows
    rL = B * L
    s_elems = B * h * phase.q_rows * L
    chain = reorder and phase.kind == "decode"

    out = [
        fc_cost(rq, E, Qc + Kc + R, dt, "a_qkv_compress"),
        fc_cost(rq, Qc, h * R, dt, "b_q_rope"),
    ]
    c = fc_cost(rq, Qc, h * D, dt, "c_q_decompress")
    out.append(_less_bytes(c, dt * rq * h * D) if chain else c)

    if reorder:
        q_in = 0 if chain else rq * h * D
        out.append(LayerCost("d_k_decompress", 2 * rq * h * D * Kc,
                             dt * (Kc * h * D + q_in + rq * h * Kc), DECOMPRESS))
        out.append(LayerCost("e_v_decompress", 2 * rq * h * Kc * D,
                             dt * (Kc * h * D + rq * h * Kc + q_in), DECOMPRESS))
        k_width, q_width = Kc, Kc
    else:
        out.append(fc_cost(rL, Kc, h * D, dt, "d_k_decompress", DECOMPRESS))
        out.append(fc_cost(rL, Kc, h * D, dt, "e_v_decompress", DECOMPRESS))
        k_width, q_width = D, D

    rope_rotate = dt * 2 * rq * (h * R + R)
    rope_score_flops = 2 * s_elems * R
    score_flops = 2 * s_elems * q_width
    context_flops = 2 * s_elems * k_width

    if fused:
        if reorder:
            core_bytes = dt * (rq * h * (Kc + R) + rL * (Kc + R) + rq * h * Kc)
        else:
            core_bytes = dt * (rq * h * (D + R) + rL * h * D + rL * R + rL * h * D + rq * h * D)
        out.append(LayerCost("g_k_rope", 0 * rq, rope_rotate, CORE))
        out.append(LayerCost("core_fused", score_flops + rope_score_flops + context_flops,
                             core_bytes, CORE))
    else:
        # the cached C_KV row is read once for all stacked heads when reordered
        k_read = rL * Kc if reorder else rL * h * D
        out.append(LayerCost("f_score", score_flops,
                             dt * (rq * h * q_width + k_read + s_elems), CORE))
        out.append(LayerCost("g_k_rope", rope_score_flops,
                             rope_rotate + dt * (rq * h * R + rL * R + s_elems), CORE))
        out.append(LayerCost("softmax", 0 * rq, dt * 3 * s_elems, CORE))
        out.append(LayerCost("h_context", context_flops,
                             dt * (s_elems + k_read + rq * h * k_width), CORE))

    o = fc_cost(rq, h * D, E, dt, "out_proj")
    out.append(_less_bytes(o, dt * rq * h * D) if chain else o)
    out.append(LayerCost("norm_residual", 0 * rq, dt * NORM_PASSES * rq * E, OTHER))
    return out


def mha_core_attention_cost(model: ModelSpec, phase: Phase, B, heads=None,
                            fused: bool = False) -> list[LayerCost]:
    """Score, softmax and context for MHA/GQA. GQA reads each KV head once per group."""
    if model.is_mla:
        raise TypeError(f"{model.name} uses MLA; use mla_block_cost")
    dt, D = model.dtype_bytes, model.d_hd
    h = _heads(model, heads)
    hk = kv_heads_on_device(model, h)
    L = phase.length
    rq = B * phase.q_rows
    rL = B * L
    s_elems = B * h * phase.q_rows * L
    if fused:
        return [LayerCost("core_fused", 4 * s_elems * D,
                          dt * (2 * rq * h * D + 2 * rL * hk * D), CORE)]
    return [
        LayerCost("f_score", 2 * s_elems * D, dt * (rq * h * D + rL * hk * D + s_elems), CORE),
        LayerCost("softmax", 0 * rq, dt * 2 * s_elems, CORE),
        LayerCost("h_context", 2 * s_elems * D, dt * (s_elems + rL * hk * D + rq * h * D), CORE),
    ]


def kv_heads_on_device(model: ModelSpec, heads) -> object:
    """KV heads needed by ``heads`` query heads (at least one)."""
    return np.maximum(1, -(-np.asarray(heads) * model.n_kv_heads // model.n_hd))


def mha_block_cost(model: ModelSpec, phase: Phase, B, *, fused: bool = False,
                   heads=None) -> list[LayerCost]:
    dt, E, D = model.dtype_bytes, model.d_emb, model.d_hd
    h = _heads(model, heads)
    hk = kv_heads_on_device(model, h)
    rq = B * phase.q_rows
    return [
        fc_cost(rq, E, h * D + 2 * hk * D, dt, "qkv_proj"),
        *mha_core_attention_cost(model, phase, B, heads=h, fused=fused),
        fc_cost(rq, h * D, E, dt, "out_proj"),
        LayerCost("norm_residual", 0 * rq, dt * NORM_PASSES * rq * E, OTHER),
    ]


def attention_block_cost(model: ModelSpec, phase: Phase, B, *, reorder: bool = False,
                         fused: bool = False, heads=None) -> list[LayerCost]:
    if model.is_mla:
        return mla_block_cost(model, phase, B, reorder=reorder, fused=fused, heads=heads)
    return mha_block_cost(model, phase, B, fused=fused, heads=heads)


def dense_ffn_cost(model: ModelSpec, rows, tp: int = 1) -> list[LayerCost]:
    """Dense FFN of ``rows`` tokens with the intermediate dim split ``tp`` ways."""
    dt, E = model.dtype_bytes, model.d_emb
    F = model.dense_ffn_width // tp
    names = ("ffn_gate", "ffn_up") if model.dense_ffn_gated else ("ffn_up",)
    out = [fc_cost(rows, E, F, dt, n, FFN) for n in names]
    out.append(fc_cost(rows, F, E, dt, "ffn_down", FFN))
    return out


def moe_ffn_cost(model: ModelSpec, rows, tokens_per_expert, experts: int = 1) -> list[LayerCost]:
    """One MoE block: ``experts`` routed experts at ``tokens_per_expert`` rows each,
    the shared experts and the router at ``rows`` rows.

    The router is omitted when every expert is always selected.
    """
    ffn = model.ffn
    dt, E, F = model.dtype_bytes, model.d_emb, ffn.d_moe
    out = []
    if experts and ffn.n_e:
        for name, i, o in (("expert_gate", E, F), ("expert_up", E, F), ("expert_down", F, E)):
            out.append(fc_cost(tokens_per_expert, i, o, dt, name, MOE).scaled(experts))
    if ffn.n_shared:
        for name, i, o in (("shared_gate", E, F), ("shared_up", E, F), ("shared_down", F, E)):
            out.append(fc_cost(rows, i, o, dt, name, MOE).scaled(ffn.n_shared))
    if 0 < ffn.n_k < ffn.n_e:
        out.append(fc_cost(rows, E, ffn.n_e, dt, "router", MOE))
    return out


def ffn_or_moe_cost(model: ModelSpec, B, tokens_per_expert=None) -> list[LayerCost]:
    """FFN of one block on a single device: dense FFN for dense models, else one
    routed expert at ``tokens_per_expert`` rows plus shared experts and router at ``B``."""
    if not model.is_moe:
        return dense_ffn_cost(model, B)
    if tokens_per_expert is None:
        tokens_per_expert = B * model.ffn.n_k / max(model.ffn.n_e, 1)
    return moe_ffn_cost(model, B, tokens_per_expert)


# -- activation footprint ---------------------------------------------------

def widest_row_elems(model: ModelSpec, heads=None, reorder: bool = False) -> int:
    """Largest (input + output) width of any projection, per token row."""
    E, D = model.d_emb, model.d_hd
    h = _heads(model, heads)
    att = model.attention
    if isinstance(att, MLA):
        Qc, Kc, R = att.d_qco, att.d_kvco, att.d_rope
        widths = [E + Qc + Kc + R, Qc + h * R, Qc + h * D, h * D + E]
        if reorder:
            widths.append(h * D + h * (Kc + R))
    else:
        hk = int(kv_heads_on_device(model, h))
        widths = [E + h * D + 2 * hk * D, h * D + E]
    n_mats = 2 if model.dense_ffn_gated else 1
    if model.n_dense_blocks:
        widths.append(E + n_mats * model.dense_ffn_width)
    if model.is_moe:
        ffn = model.ffn
        widths.append(E + 2 * ffn.d_moe * (ffn.n_k + ffn.n_shared))
    return int(max(widths))


def decompressed_k_bytes(model: ModelSpec, B, L, heads=None):
    """Bytes of per-head K (NoPE plus broadcast RoPE part) materialized by
    non-reordered MLA for ``B`` requests of context ``L``."""
    att = model.attention
    h = _heads(model, heads)
    return B * L * h * (model.d_hd + att.d_rope) * model.dtype_bytes


def activation_bytes_per_request(model: ModelSpec, phase: Phase, *, reorder: bool = False,
                                 fused: bool = False, heads=None):
    """M_act: live activation bytes of one request inside one block.

    The widest projection's input and output for every query row, plus the
    score/probability matrices when they are not fused away, plus the
    materialized per-head K and V when MLA runs without reordering.
    """
    dt = model.dtype_bytes
    h = _heads(model, heads)
    q, L = phase.q_rows, phase.length
    elems = q * widest_row_elems(model, h, reorder)
    if not fused:
        elems = elems + 2 * h * q * L
    total = elems * dt
    if model.is_mla and not reorder:
        total = total + decompressed_k_bytes(model, 1, L, h) + L * h * model.d_hd * dt
    return total
