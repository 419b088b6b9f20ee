"""Per-stage latency, throughput, memory and breakdowns for a deployment.

A decode step (or a prefill pass) costs the sum over decoder blocks of every
layer's roofline time on the busiest device, plus communication. Layers run
back to back; nothing inside a block overlaps. Weight reads are part of each
projection's byte count, so they are not added separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .comm import moe_dispatch_combine, tp_allreduce
from .layers import (Phase, activation_bytes_per_request, attention_block_cost,
                     dense_ffn_cost, moe_ffn_cost)
from .model import ModelSpec, kv_bytes_per_token
from .parallel import (DeploymentPlan, check_plan, device_weight_bytes, effective_batch,
                       experts_per_device, heads_per_device, kv_split)

ACT_MODELS = ("widest", "zero")


@dataclass
class StageResult:
    stage: str
    B: int
    L: int
    tpot: float
    throughput_tok_s: float
    per_device_throughput: float
    breakdown: list = field(default_factory=list)
    feasible: bool = True
    infeasibility_reason: str | None = None
    memory_per_device: float = 0.0
    comm_s: float = 0.0

    def share(self, *labels: str) -> float:
        return sum(f for lab, _, f in self.breakdown if lab in labels)


@dataclass
class GridEval:
    """Vectorised evaluation: one column per (B, L) point, one row per layer."""

    stage: str
    B: np.ndarray
    L: np.ndarray
    labels: list
    groups: list
    blocks: list
    layer_times: np.ndarray  # already multiplied by block counts
    comm: np.ndarray
    memory: np.ndarray
    capacity: float
    n_acc: int

    @property
    def tpot(self) -> np.ndarray:
        return self.layer_times.sum(axis=0) + self.comm

    @property
    def feasible(self) -> np.ndarray:
        return self.memory <= self.capacity

    def result(self, j: int) -> StageResult:
        tpot = float(self.tpot[j])
        per_label: dict[str, float] = {}
        for lab, t in zip(self.labels, self.layer_times[:, j]):
            per_label[lab] = per_label.get(lab, 0.0) + float(t)
        if self.comm[j] or self.comm.any():
            per_label["comm"] = float(self.comm[j])
        breakdown = [(lab, t, t / tpot if tpot > 0 else 0.0) for lab, t in per_label.items()]
        ok = bool(self.feasible[j])
        B = int(self.B[j])
        thr = B / tpot if tpot > 0 else 0.0
        return StageResult(
            stage=self.stage, B=B, L=int(self.L[j]), tpot=tpot, throughput_tok_s=thr,
            per_device_throughput=thr / self.n_acc, breakdown=breakdown, feasible=ok,
            infeasibility_reason=None if ok else "capacity",
            memory_per_device=float(self.memory[j]), comm_s=float(self.comm[j]))

    def results(self) -> list[StageResult]:
        return [self.result(j) for j in range(len(self.B))]


def memory_required(model: ModelSpec, plan: DeploymentPlan, B, L, stage: str | None = None,
                    act_model: str = "widest"):
    """Bytes resident on the busiest device: its weights, its requests' cache
    and their live activations."""
    stage = stage or plan.stage
    h = heads_per_device(plan, model)
    r = effective_batch("attention", B, plan, model)
    per_req = kv_bytes_per_token(model) * L / kv_split(plan, model)
    per_req = per_req + activation_per_request(model, plan, L, stage, act_model, h)
    return device_weight_bytes(plan, model) + r * per_req


def activation_per_request(model: ModelSpec, plan: DeploymentPlan, L, stage: str,
                           act_model: str = "widest", heads=None):
    if act_model not in ACT_MODELS:
        raise ValueError(f"act_model must be one of {ACT_MODELS}, got {act_model!r}")
    if act_model == "zero":
        return 0 * L
    heads = heads_per_device(plan, model) if heads is None else heads
    return activation_bytes_per_request(model, Phase(stage, L), reorder=_reorder(model, plan),
                                        fused=plan.fused, heads=heads)


def _reorder(model: ModelSpec, plan: DeploymentPlan) -> bool:
    return plan.reorder and model.is_mla


def stage_layers(model: ModelSpec, plan: DeploymentPlan, B, L, stage: str):
    """(block, block count, layer costs) for one device, plus per-step comm."""
    phase = Phase(stage, L)
    q = phase.q_rows
    h = heads_per_device(plan, model)
    r = effective_batch("attention", B, plan, model)
    parts = [("attention", model.n_dec,
              attention_block_cost(model, phase, r, reorder=_reorder(model, plan),
                                   fused=plan.fused, heads=h))]
    comm = tp_allreduce(B, plan, model, q=q).scaled(model.n_dec)
    if model.n_dense_blocks:
        parts.append(("dense_ffn", model.n_dense_blocks,
                      dense_ffn_cost(model, r * q, tp=plan.deg_tp)))
        comm = comm + tp_allreduce(B, plan, model, q=q).scaled(model.n_dense_blocks)
    if model.n_moe_blocks:
        tpe = effective_batch("moe_expert", B, plan, model, q)
        rows = effective_batch("shared", B, plan, model, q)
        parts.append(("moe", model.n_moe_blocks,
                      moe_ffn_cost(model, rows, tpe, experts_per_device(plan, model))))
        comm = comm + moe_dispatch_combine(B, plan, model, q).scaled(model.n_moe_blocks)
    return parts, comm.scaled(1.0 - plan.overlap)


def evaluate_grid(model: ModelSpec, plan: DeploymentPlan, B, L, stage: str | None = None,
                  act_model: str = "widest") -> GridEval:
    """Evaluate every pair of the broadcast 1-D arrays ``B`` and ``L``."""
    check_plan(plan, model)
    stage = stage or plan.stage
    Bv, Lv = np.broadcast_arrays(np.atleast_1d(np.asarray(B)), np.atleast_1d(np.asarray(L)))
    Bv = Bv.astype(np.int64).ravel()
    Lv = Lv.astype(np.int64).ravel()
    if np.any(Bv < 1) or np.any(Lv < 1):
        raise ValueError("B and L must be >= 1")
    n = Bv.size
    Bf, Lf = Bv.astype(float), Lv.astype(float)
    parts, comm = stage_layers(model, plan, Bf, Lf, stage)

    labels, groups, blocks, mult, fl, by = [], [], [], [], [], []
    for block, count, costs in parts:
        for c in costs:
            labels.append(c.label)
            groups.append(c.group)
            blocks.append(block)
            mult.append(count)
            fl.append(np.broadcast_to(np.asarray(c.flops, dtype=float), (n,)))
            by.append(np.broadcast_to(np.asarray(c.bytes, dtype=float), (n,)))
    spec = plan.system.accelerator
    times = _kernels.roofline_times(np.vstack(fl), np.vstack(by), spec.effective_flops, spec.mem_bw)
    times *= np.asarray(mult, dtype=float)[:, None]
    comm_t = np.broadcast_to(np.asarray(comm.time, dtype=float), (n,)).copy()
    mem = np.broadcast_to(np.asarray(memory_required(model, plan, Bf, Lf, stage, act_model),
                                     dtype=float), (n,)).copy()
    return GridEval(stage, Bv, Lv, labels, groups, blocks, times, comm_t, mem,
                    spec.mem_cap, plan.n_acc)


def step_time(model: ModelSpec, plan: DeploymentPlan, B, L, stage: str | None = None):
    """Total step time over a grid via the fused roofline reduction (no breakdown)."""
    check_plan(plan, model)
    stage = stage or plan.stage
    Bv, Lv = np.broadcast_arrays(np.atleast_1d(np.asarray(B, dtype=float)),
                                 np.atleast_1d(np.asarray(L, dtype=float)))
    n = Bv.size
    parts, comm = stage_layers(model, plan, Bv.ravel(), Lv.ravel(), stage)
    fl, by, mult = [], [], []
    for _, count, costs in parts:
        for c in costs:
            fl.append(np.broadcast_to(np.asarray(c.flops, dtype=float), (n,)))
            by.append(np.broadcast_to(np.asarray(c.bytes, dtype=float), (n,)))
            mult.append(count)
    spec = plan.system.accelerator
    total = _kernels.roofline_total(np.vstack(fl), np.vstack(by), np.asarray(mult, dtype=float),
                                    spec.effective_flops, spec.mem_bw)
    return total + comm.time


def decode_tpot(model: ModelSpec, plan: DeploymentPlan, B: int, L: int, **kw) -> StageResult:
    return evaluate_grid(model, plan, B, L, "decode", **kw).result(0)


def prefill_time(model: ModelSpec, plan: DeploymentPlan, B: int, L_in: int, **kw) -> StageResult:
    """Prefill of ``B`` prompts of ``L_in`` tokens. ``tpot`` holds the whole pass
    time and ``throughput_tok_s`` counts requests per second (B / time)."""
    return evaluate_grid(model, plan, B, L_in, "prefill", **kw).result(0)


def block_time(model: ModelSpec, plan: DeploymentPlan, B: int, L: int, stage: str | None = None,
               block: str = "attention") -> float:
    """Time of a single block of the given kind (not multiplied by its count)."""
    ev = evaluate_grid(model, plan, B, L, stage)
    count = {"attention": model.n_dec, "dense_ffn": model.n_dense_blocks,
             "moe": model.n_moe_blocks}[block]
    rows = [i for i, b in enumerate(ev.blocks) if b == block]
    return float(ev.layer_times[rows, 0].sum()) / count


def breakdown(model: ModelSpec, plan: DeploymentPlan, B: int, L: int, stage: str | None = None,
              block: str | None = "attention") -> list[tuple[str, float, float]]:
    """Ordered (label, seconds, share) for one block kind, or the whole step when
    ``block`` is None. Seconds are per block instance; shares sum to 1."""
    ev = evaluate_grid(model, plan, B, L, stage)
    if block is None:
        return ev.result(0).breakdown
    count = {"attention": model.n_dec, "dense_ffn": model.n_dense_blocks,
             "moe": model.n_moe_blocks}[block]
    items = [(lab, float(ev.layer_times[i, 0]) / count)
             for i, (lab, b) in enumerate(zip(ev.labels, ev.blocks)) if b == block]
    total = sum(t for _, t in items)
    return [(lab, t, t / total if total > 0 else 0.0) for lab, t in items]


def group_shares(model: ModelSpec, plan: DeploymentPlan, B: int, L: int,
                 stage: str | None = None) -> dict[str, float]:
    """Attention-block time share per layer group (fc, decompress, core, other)."""
    ev = evaluate_grid(model, plan, B, L, stage)
    out: dict[str, float] = {}
    for i, (g, b) in enumerate(zip(ev.groups, ev.blocks)):
        if b == "attention":
            out[g] = out.get(g, 0.0) + float(ev.layer_times[i, 0])
    total = sum(out.values())
    return {g: t / total for g, t in out.items()}
