"""Batch-size limits: ridge-point saturation, memory capacity and TPOT SLO."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .comm import moe_dispatch_combine, tp_allreduce
from .engine import activation_per_request, step_time
from .hw import ridge_point
from .model import ModelSpec, kv_bytes_per_token
from .parallel import (DeploymentPlan, check_plan, device_weight_bytes, effective_batch,
                       kv_split)

_EPS = 1e-9
_B_MAX = 1 << 40


@dataclass(frozen=True)
class BatchLimits:
    b_attn: int
    b_moe: int | None
    b_rp: int
    b_cap: int
    b_slo: int | None
    b_slo_engine: int | None
    binding: str
    notes: tuple = ()

    def as_dict(self) -> dict:
        return {"b_attn": self.b_attn, "b_moe": self.b_moe, "b_rp": self.b_rp,
                "b_cap": self.b_cap, "b_slo": self.b_slo, "b_slo_engine": self.b_slo_engine,
                "binding": self.binding, "notes": list(self.notes)}


def b_rp(model: ModelSpec, plan: DeploymentPlan) -> tuple[int, int | None, int]:
    """(b_attn, b_moe, b_rp): batches at which attention and expert projections
    reach the device ridge point. b_moe is None for dense models."""
    rp = ridge_point(plan.system.accelerator)
    b_attn = math.ceil(rp * plan.deg_dp - _EPS)
    b_moe = None
    if model.is_moe and model.ffn.n_k:
        b_moe = math.ceil(rp * model.ffn.n_e / model.ffn.n_k - _EPS)
    return b_attn, b_moe, max(b_attn, b_moe or 0)


def bytes_per_request(model: ModelSpec, plan: DeploymentPlan, L, act_model: str = "widest"):
    """System-wide bytes one decode request holds: its cache and activations on
    every device of its TP group."""
    per_dev = kv_bytes_per_token(model) * L / kv_split(plan, model)
    per_dev = per_dev + activation_per_request(model, plan, L, "decode", act_model)
    return plan.deg_tp * per_dev


def b_cap(model: ModelSpec, plan: DeploymentPlan, L: int, act_model: str = "widest") -> int:
    """Largest batch whose cache and activations fit next to the weights.

    Weights are summed over what each device actually holds (replicated
    attention, its share of experts, replicated shared experts and router).
    """
    n = plan.n_acc
    free = plan.system.accelerator.mem_cap * n - device_weight_bytes(plan, model) * n
    if free <= 0:
        return 0
    return max(0, math.floor(free / bytes_per_request(model, plan, L, act_model) + _EPS))


def b_cap_reason(model: ModelSpec, plan: DeploymentPlan) -> str | None:
    if device_weight_bytes(plan, model) >= plan.system.accelerator.mem_cap:
        return "weights exceed capacity"
    return None


def weight_load_time(model: ModelSpec, plan: DeploymentPlan) -> float:
    """Per-step time to stream one device's weights once."""
    return device_weight_bytes(plan, model) / plan.system.accelerator.mem_bw


def t_min(model: ModelSpec, plan: DeploymentPlan, B, L: int, act_model: str = "widest"):
    """Unavoidable per-step time beyond weight loading: cache and activation
    reads of the device's requests plus communication."""
    bw = plan.system.accelerator.mem_bw
    r = effective_batch("attention", B, plan, model)
    per_req = (kv_bytes_per_token(model) * L / kv_split(plan, model)
               + model.n_dec * activation_per_request(model, plan, L, "decode", act_model))
    comm = tp_allreduce(B, plan, model).time * (model.n_dec + model.n_dense_blocks)
    comm = comm + moe_dispatch_combine(B, plan, model).time * model.n_moe_blocks
    return r * per_req / bw + comm * (1.0 - plan.overlap)


def largest_satisfying(pred, hi: int = _B_MAX) -> int:
    """Largest B in [0, hi] with pred(B) true, for pred true then false as B grows.
    pred(0) is taken as true."""
    if not pred(1):
        return 0
    lo, step = 1, 1
    while lo + step <= hi and pred(lo + step):
        lo += step
        step *= 2
    top = min(lo + step, hi + 1)  # pred(top) is false or top is past hi
    while top - lo > 1:
        mid = (lo + top) // 2
        if pred(mid):
            lo = mid
        else:
            top = mid
    return lo


def b_slo(model: ModelSpec, plan: DeploymentPlan, L: int, tpot_slo: float,
          act_model: str = "widest") -> int:
    """Largest B with weight_load + T_min(B, L) <= tpot_slo; 0 if even the
    weight load misses the target."""
    floor = weight_load_time(model, plan)
    if tpot_slo <= floor:
        return 0
    return largest_satisfying(lambda b: floor + t_min(model, plan, b, L, act_model) <= tpot_slo)


def b_slo_engine(model: ModelSpec, plan: DeploymentPlan, L: int, tpot_slo: float) -> int:
    """Largest B whose full modelled decode step meets ``tpot_slo``."""
    dec = plan.with_(stage="decode")
    return largest_satisfying(lambda b: float(step_time(model, dec, b, L, "decode")[0]) <= tpot_slo)


def batch_limits(model: ModelSpec, plan: DeploymentPlan, L: int, tpot_slo: float | None = None,
                 act_model: str = "widest") -> BatchLimits:
    check_plan(plan, model)
    b_attn, b_moe, rp = b_rp(model, plan)
    cap = b_cap(model, plan, L, act_model)
    notes = []
    reason = b_cap_reason(model, plan)
    if reason:
        notes.append(reason)
    slo = slo_eng = None
    if tpot_slo is not None:
        slo = b_slo(model, plan, L, tpot_slo, act_model)
        slo_eng = b_slo_engine(model, plan, L, tpot_slo)
        if slo == 0:
            notes.append("tpot_slo below weight-load floor")
    limit, which = cap, "capacity"
    if slo is not None and slo < cap:
        limit, which = slo, "slo"
    binding = "ridge_point" if limit >= rp else which
    return BatchLimits(b_attn, b_moe, rp, cap, slo, slo_eng, binding, tuple(notes))
