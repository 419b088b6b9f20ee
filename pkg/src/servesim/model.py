"""Transformer model descriptions and their byte/parameter accounting.

Only per-decoder-block weights are counted. Embedding and LM-head tables are
left out of every total because capacity planning here is done per block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union


@dataclass(frozen=True)
class MHA:
    """Plain multi-head attention: one K and one V head per query head."""

    kind = "mha"


@dataclass(frozen=True)
class GQA:
    """Grouped-query attention; ``group_size`` query heads share each KV head."""

    group_size: int
    kind = "gqa"


@dataclass(frozen=True)
class MLA:
    """Latent attention with compressed Q/KV and a decoupled RoPE slice."""

    d_qco: int
    d_kvco: int
    d_rope: int
    kind = "mla"


@dataclass(frozen=True)
class DenseFfn:
    """``gated`` selects the three-matrix gate/up/down form (two matrices otherwise)."""

    d_ffn: int
    gated: bool = True


@dataclass(frozen=True)
class MoeFfn:
    """Routed + shared experts (always gated). The first ``n_dense_blocks``
    decoder blocks use a dense FFN of width ``d_ffn_dense`` instead."""

    n_e: int
    n_k: int
    n_shared: int
    d_moe: int
    n_dense_blocks: int = 0
    d_ffn_dense: int = 0


AttentionVariant = Union[MHA, GQA, MLA]
FfnVariant = Union[DenseFfn, MoeFfn]


@dataclass(frozen=True)
class ModelSpec:
    name: str
    n_dec: int
    d_emb: int
    n_hd: int
    d_hd: int
    attention: AttentionVariant
    ffn: FfnVariant
    dtype_bytes: int = 2

    def __post_init__(self):
        for attr in ("n_dec", "d_emb", "n_hd", "d_hd", "dtype_bytes"):
            value = getattr(self, attr)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{self.name}: {attr} must be a positive integer, got {value!r}")
        att = self.attention
        if isinstance(att, GQA):
            if att.group_size < 1 or self.n_hd % att.group_size:
                raise ValueError(
                    f"{self.name}: GQA group_size {att.group_size} must divide n_hd={self.n_hd}")
        elif isinstance(att, MLA):
            if min(att.d_qco, att.d_kvco, att.d_rope) < 1:
                raise ValueError(f"{self.name}: MLA dims must be positive")
            if att.d_kvco >= self.d_dec:
                raise ValueError(f"{self.name}: d_kvco must be smaller than d_dec={self.d_dec}")
        elif not isinstance(att, MHA):
            raise TypeError(f"unknown attention variant {att!r}")
        ffn = self.ffn
        if isinstance(ffn, DenseFfn):
            if ffn.d_ffn < 1:
                raise ValueError(f"{self.name}: d_ffn must be positive")
        elif isinstance(ffn, MoeFfn):
            # n_k == n_e (full activation) and n_e == 0 (shared-only) are accepted
            # as degenerate forms so they can be compared against dense FFNs.
            if ffn.n_e < 0 or not 0 <= ffn.n_k <= ffn.n_e:
                raise ValueError(f"{self.name}: need 0 <= n_k <= n_e, got n_k={ffn.n_k}, n_e={ffn.n_e}")
            if ffn.n_shared < 0 or ffn.d_moe < 1:
                raise ValueError(f"{self.name}: n_shared must be >= 0 and d_moe positive")
            if not 0 <= ffn.n_dense_blocks < self.n_dec:
                raise ValueError(f"{self.name}: n_dense_blocks must be in [0, n_dec)")
            if ffn.n_dense_blocks and ffn.d_ffn_dense < 1:
                raise ValueError(f"{self.name}: dense blocks need d_ffn_dense > 0")
        else:
            raise TypeError(f"unknown FFN variant {ffn!r}")

    @property
    def d_dec(self) -> int:
        return self.n_hd * self.d_hd

    @property
    def n_kv_heads(self) -> int:
        if isinstance(self.attention, GQA):
            return self.n_hd // self.attention.group_size
        return self.n_hd

    @property
    def is_moe(self) -> bool:
        return isinstance(self.ffn, MoeFfn)

    @property
    def is_mla(self) -> bool:
        return isinstance(self.attention, MLA)

    @property
    def n_dense_blocks(self) -> int:
        """Blocks whose FFN is dense (all of them for a dense model)."""
        return self.ffn.n_dense_blocks if self.is_moe else self.n_dec

    @property
    def n_moe_blocks(self) -> int:
        return self.n_dec - self.n_dense_blocks

    @property
    def dense_ffn_width(self) -> int:
        return self.ffn.d_ffn_dense if self.is_moe else self.ffn.d_ffn

    @property
    def dense_ffn_gated(self) -> bool:
        return True if self.is_moe else self.ffn.gated


# -- parameter counts (elements) ------------------------------------------

def attn_weight_shapes(model: ModelSpec) -> dict[str, tuple[int, int]]:
    """Projection matrices of one attention block, as (rows, cols)."""
    E, h, D = model.d_emb, model.n_hd, model.d_hd
    att = model.attention
    if isinstance(att, MLA):
        return {
            "W_CQ": (E, att.d_qco),
            "W_CKV": (E, att.d_kvco),
            "W_RK": (E, att.d_rope),
            "W_DQ": (att.d_qco, h * D),
            "W_RQ": (att.d_qco, h * att.d_rope),
            "W_DK": (att.d_kvco, h * D),
            "W_DV": (att.d_kvco, h * D),
            "W_attn_out": (h * D, E),
        }
    kv = model.n_kv_heads * D
    return {
        "W_Q": (E, h * D),
        "W_K": (E, kv),
        "W_V": (E, kv),
        "W_attn_out": (h * D, E),
    }


def _params(shapes) -> int:
    return sum(r * c for r, c in shapes.values())


def attn_params(model: ModelSpec) -> int:
    return _params(attn_weight_shapes(model))


def dense_ffn_params(model: ModelSpec) -> int:
    n_mats = 3 if model.dense_ffn_gated else 2
    return n_mats * model.d_emb * model.dense_ffn_width


def expert_params(model: ModelSpec) -> int:
    if not model.is_moe:
        return 0
    return 3 * model.d_emb * model.ffn.d_moe


def router_params(model: ModelSpec) -> int:
    return model.d_emb * model.ffn.n_e if model.is_moe else 0


def moe_block_params(model: ModelSpec) -> int:
    if not model.is_moe:
        return 0
    ffn = model.ffn
    return (ffn.n_e + ffn.n_shared) * expert_params(model) + router_params(model)


# -- byte accounting --------------------------------------------------------

def kv_bytes_per_token_block(model: ModelSpec) -> int:
    """Cache bytes one token adds to a single decoder block."""
    att = model.attention
    if isinstance(att, MLA):
        return (att.d_kvco + att.d_rope) * model.dtype_bytes
    return 2 * model.n_kv_heads * model.d_hd * model.dtype_bytes


def kv_bytes_per_token(model: ModelSpec) -> int:
    """Cache bytes per token summed over all decoder blocks."""
    return kv_bytes_per_token_block(model) * model.n_dec


def attn_weight_bytes(model: ModelSpec) -> int:
    """M_attn: one block's attention weights."""
    return attn_params(model) * model.dtype_bytes


def expert_weight_bytes(model: ModelSpec) -> int:
    return expert_params(model) * model.dtype_bytes


def moe_weight_bytes(model: ModelSpec) -> int:
    """M_MoE: routed + shared experts + router of one MoE block (0 for dense models)."""
    return moe_block_params(model) * model.dtype_bytes


def dense_ffn_weight_bytes(model: ModelSpec) -> int:
    """M_FFN: the FFN of one dense block."""
    return dense_ffn_params(model) * model.dtype_bytes


def total_params(model: ModelSpec) -> int:
    return (model.n_dec * attn_params(model)
            + model.n_dense_blocks * dense_ffn_params(model)
            + model.n_moe_blocks * moe_block_params(model))


def total_weight_bytes(model: ModelSpec) -> int:
    return total_params(model) * model.dtype_bytes


def activated_params_per_token(model: ModelSpec) -> int:
    """Parameters touched by one token: attention, dense FFNs, and for MoE
    blocks the shared experts, n_k routed experts and the router."""
    total = model.n_dec * attn_params(model) + model.n_dense_blocks * dense_ffn_params(model)
    if model.is_moe:
        ffn = model.ffn
        per_block = (ffn.n_shared + ffn.n_k) * expert_params(model) + router_params(model)
        total += model.n_moe_blocks * per_block
    return total


# -- presets ----------------------------------------------------------------

DEEPSEEK_R1 = ModelSpec(
    name="deepseek-r1",
    n_dec=61, d_emb=7168, n_hd=128, d_hd=128,
    attention=MLA(d_qco=1536, d_kvco=512, d_rope=64),
    ffn=MoeFfn(n_e=256, n_k=8, n_shared=1, d_moe=2048, n_dense_blocks=3, d_ffn_dense=18432),
)

# Public GPT-3 175B shape: d_emb = d_dec = 12288, 96 heads of 128, ungated 4x FFN.
GPT3 = ModelSpec(
    name="gpt-3",
    n_dec=96, d_emb=12288, n_hd=96, d_hd=128,
    attention=MHA(),
    ffn=DenseFfn(d_ffn=4 * 12288, gated=False),
)

MODELS = {m.name: m for m in (DEEPSEEK_R1, GPT3)}


def model_preset(name: str) -> ModelSpec:
    key = name.lower().replace("_", "-")
    aliases = {"deepseek": "deepseek-r1", "gpt3": "gpt-3", "gpt-3-175b": "gpt-3"}
    key = aliases.get(key, key)
    if key not in MODELS:
        raise KeyError(f"unknown model preset {name!r}; known: {', '.join(MODELS)}")
    return MODELS[key]
