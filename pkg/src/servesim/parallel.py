"""Deployment plans: how attention and FFN work is split across devices.

Attention runs TP inside each of ``deg_dp`` data-parallel groups. Routed
experts are spread over ``deg_ep`` devices. Shared experts and the router are
replicated on every device because every token needs them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .hw import SystemSpec
from .layers import kv_heads_on_device
from .model import (ModelSpec, attn_weight_shapes, dense_ffn_weight_bytes,
                    expert_weight_bytes, kv_bytes_per_token)

STAGES = ("prefill", "decode")
# compression and RoPE-K projections act on the shared latent; every TP rank keeps a copy
_MLA_REPLICATED = ("W_CQ", "W_CKV", "W_RK")


@dataclass(frozen=True)
class DeploymentPlan:
    """``skew`` (>= 1) inflates the busiest expert's load; ``overlap`` in [0, 1]
    is the fraction of communication hidden behind compute."""

    system: SystemSpec
    deg_tp: int = 1
    deg_dp: int = 1
    deg_ep: int = 1
    reorder: bool = True
    fused: bool = True
    stage: str = "decode"
    skew: float = 1.0
    overlap: float = 0.0
    name: str = ""

    @property
    def n_acc(self) -> int:
        return self.system.n_acc

    def with_(self, **changes) -> "DeploymentPlan":
        return replace(self, **changes)


def validate_plan(plan: DeploymentPlan, model: ModelSpec) -> list[str]:
    """Every violated constraint, as messages. Empty list means the plan is usable."""
    errs = []
    n = plan.n_acc
    if plan.deg_tp < 1 or plan.deg_dp < 1 or plan.deg_ep < 1:
        errs.append("parallel degrees must be >= 1")
        return errs
    if plan.deg_tp * plan.deg_dp != n:
        errs.append(f"deg_tp*deg_dp = {plan.deg_tp * plan.deg_dp} != n_acc = {n}")
    if model.n_hd % plan.deg_tp:
        errs.append(f"deg_tp={plan.deg_tp} does not divide n_hd={model.n_hd}")
    if model.dense_ffn_width % plan.deg_tp:
        errs.append(f"deg_tp={plan.deg_tp} does not divide the dense FFN width {model.dense_ffn_width}")
    if plan.deg_tp > plan.system.interconnect.group_size:
        errs.append(f"deg_tp={plan.deg_tp} spans more than one fully connected group "
                    f"(group_size={plan.system.interconnect.group_size})")
    if model.is_moe:
        if plan.deg_ep != n:
            errs.append(f"deg_ep={plan.deg_ep} must equal n_acc={n}")
        if plan.deg_ep > max(model.ffn.n_e, 1):
            errs.append(f"deg_ep={plan.deg_ep} exceeds n_e={model.ffn.n_e}")
    if plan.stage not in STAGES:
        errs.append(f"stage must be one of {STAGES}, got {plan.stage!r}")
    if not plan.skew >= 1:
        errs.append(f"skew must be >= 1, got {plan.skew}")
    if not 0 <= plan.overlap <= 1:
        errs.append(f"overlap must be in [0, 1], got {plan.overlap}")
    return errs


def check_plan(plan: DeploymentPlan, model: ModelSpec) -> None:
    errs = validate_plan(plan, model)
    if errs:
        raise ValueError(f"invalid plan for {model.name}: " + "; ".join(errs))


def _ceil_div(a, b):
    """Ceiling division that keeps scalars as ints and arrays as arrays."""
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        return math.ceil(a / b - 1e-12)
    return np.ceil(np.asarray(a, dtype=float) / b - 1e-12)


def effective_batch(block: str, B, plan: DeploymentPlan, model: ModelSpec, q=1):
    """Rows one device processes.

    ``attention``: requests in this device's DP group (times ``q`` query rows).
    ``moe_expert``: tokens landing on the busiest routed expert.
    ``shared``: tokens a device feeds to its replicated shared experts and router.
    """
    if block == "attention":
        return _ceil_div(B, plan.deg_dp) * q
    if block == "moe_expert":
        ffn = model.ffn
        return _ceil_div(plan.skew * B * q * ffn.n_k, max(ffn.n_e, 1))
    if block == "shared":
        return _ceil_div(B * q, plan.n_acc)
    raise ValueError(f"unknown block {block!r}; expected attention, moe_expert or shared")


def heads_per_device(plan: DeploymentPlan, model: ModelSpec) -> int:
    return model.n_hd // plan.deg_tp


def experts_per_device(plan: DeploymentPlan, model: ModelSpec) -> int:
    if not model.is_moe or not model.ffn.n_e:
        return 0
    return math.ceil(model.ffn.n_e / plan.deg_ep)


def kv_split(plan: DeploymentPlan, model: ModelSpec) -> int:
    """Ways one request's cache is split across its TP group (1 for MLA)."""
    if model.is_mla:
        return 1
    h = heads_per_device(plan, model)
    return model.n_kv_heads // int(kv_heads_on_device(model, h))


def ckv_replication_bytes(plan: DeploymentPlan, model: ModelSpec, B, L):
    """Cache bytes held by one device for ``B`` system requests at length ``L``."""
    r = effective_batch("attention", B, plan, model)
    return r * kv_bytes_per_token(model) * L / kv_split(plan, model)


def attn_weight_bytes_per_device(plan: DeploymentPlan, model: ModelSpec) -> float:
    t = plan.deg_tp
    shapes = attn_weight_shapes(model)
    total = 0.0
    for name, (rows, cols) in shapes.items():
        n = rows * cols
        if model.is_mla and name in _MLA_REPLICATED:
            total += n
        elif name in ("W_K", "W_V"):
            total += n * int(kv_heads_on_device(model, model.n_hd // t)) / model.n_kv_heads
        else:
            total += n / t
    return total * model.dtype_bytes


def device_weight_bytes(plan: DeploymentPlan, model: ModelSpec) -> float:
    """All decoder-block weights resident on one device."""
    w = model.n_dec * attn_weight_bytes_per_device(plan, model)
    w += model.n_dense_blocks * dense_ffn_weight_bytes(model) / plan.deg_tp
    if model.is_moe:
        ffn = model.ffn
        per_block = (experts_per_device(plan, model) + ffn.n_shared) * expert_weight_bytes(model)
        per_block += model.d_emb * ffn.n_e * model.dtype_bytes
        w += model.n_moe_blocks * per_block
    return w


def system_weight_bytes(plan: DeploymentPlan, model: ModelSpec) -> float:
    return device_weight_bytes(plan, model) * plan.n_acc


def default_plan(model: ModelSpec, system: SystemSpec, stage: str = "decode",
                 **overrides) -> DeploymentPlan:
    """DP-only attention with full EP for MoE models. Dense models get the
    largest TP degree <= 8 that fits a group and divides heads and devices."""
    n = system.n_acc
    if model.is_moe or model.is_mla:
        tp = 1
    else:
        cap = min(8, system.interconnect.group_size, n)
        tp = max(d for d in range(1, cap + 1)
                 if n % d == 0 and model.n_hd % d == 0 and model.dense_ffn_width % d == 0)
    plan = DeploymentPlan(system=system, deg_tp=tp, deg_dp=n // tp,
                          deg_ep=n if model.is_moe else 1,
                          reorder=(stage == "decode"), fused=True, stage=stage)
    return plan.with_(**overrides) if overrides else plan
