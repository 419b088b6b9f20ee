"""Grid sweeps, topology comparison and CSV/JSON writers."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import PlanEntry, SweepConfig
from .engine import evaluate_grid
from .hw import GIGA, InterconnectSpec, SystemSpec
from .limits import batch_limits
from .model import ModelSpec
from .parallel import default_plan

BASE_COLUMNS = ("model", "plan", "phase", "B", "L", "tpot_s", "throughput_tok_s",
                "per_device_tok_s", "feasible", "reason", "binding_limit",
                "mem_per_device_bytes", "comm_s")


@dataclass
class SweepRecord:
    model: str
    plan: str
    phase: str
    B: int
    L: int
    tpot_s: float
    throughput_tok_s: float
    per_device_tok_s: float
    feasible: bool
    reason: str
    binding_limit: str
    mem_per_device_bytes: float
    comm_s: float
    layer_times: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = {c: getattr(self, c) for c in BASE_COLUMNS}
        d.update({f"t_{k}": v for k, v in self.layer_times.items()})
        return d


def _plan_records(model: ModelSpec, entry: PlanEntry, batch_sizes, L: int, slo,
                  act_model: str) -> list[SweepRecord]:
    plan, k = entry.plan, entry.replicas
    B_sys = np.asarray(batch_sizes, dtype=np.int64)
    # each replica serves an equal share of the system batch
    B_rep = np.maximum(1, -(-B_sys // k))
    ev = evaluate_grid(model, plan, B_rep, L, plan.stage, act_model)
    binding = ""
    if plan.stage == "decode":
        binding = batch_limits(model, plan, L, slo, act_model).binding
    out = []
    for j, res in enumerate(ev.results()):
        thr = k * res.throughput_tok_s
        out.append(SweepRecord(
            model=model.name, plan=entry.id, phase=plan.stage, B=int(B_sys[j]), L=L,
            tpot_s=res.tpot, throughput_tok_s=thr, per_device_tok_s=thr / (k * plan.n_acc),
            feasible=res.feasible, reason=res.infeasibility_reason or "",
            binding_limit=binding, mem_per_device_bytes=res.memory_per_device,
            comm_s=res.comm_s, layer_times={lab: t for lab, t, _ in res.breakdown}))
    return out


def run_sweep(config: SweepConfig, jobs: int = 1) -> list[SweepRecord]:
    """One record per (plan, L, B), in that nesting order, whatever ``jobs`` is."""
    tasks = [(e, L) for e in config.plans for L in config.seq_lengths]

    def work(task):
        e, L = task
        return _plan_records(config.model, e, config.batch_sizes, L, config.slo, config.act_model)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(work, tasks))
    else:
        chunks = [work(t) for t in tasks]
    return [r for chunk in chunks for r in chunk]


def topology_plans(model: ModelSpec, acc, bandwidths_gbps=(900, 300, 100),
                   replica_size: int = 32, n_total: int = 256) -> list[PlanEntry]:
    """Independent ``replica_size``-device systems versus one ``n_total``-device
    system whose single fully connected fabric runs at each bandwidth."""
    k = n_total // replica_size
    small = SystemSpec(acc, replica_size, InterconnectSpec(900 * GIGA, 900 * GIGA, replica_size))
    entries = [PlanEntry(f"{replica_size}GPUx{k}",
                         default_plan(model, small).with_(name=f"{replica_size}GPUx{k}"), k)]
    for bw in bandwidths_gbps:
        big = SystemSpec(acc, n_total, InterconnectSpec(bw * GIGA, bw * GIGA, n_total))
        pid = f"{n_total}GPU@{bw:g}"
        entries.append(PlanEntry(pid, default_plan(model, big).with_(name=pid), 1))
    return entries


def peak_throughput(records: list[SweepRecord]) -> dict[tuple[str, int], tuple[float, int]]:
    """Best feasible per-device throughput and its batch, per (plan, L)."""
    best: dict[tuple[str, int], tuple[float, int]] = {}
    for r in records:
        if not r.feasible:
            continue
        key = (r.plan, r.L)
        if key not in best or r.per_device_tok_s > best[key][0]:
            best[key] = (r.per_device_tok_s, r.B)
    return best


def compare_topologies(model: ModelSpec, acc, seq_lengths, batch_sizes=None,
                       bandwidths_gbps=(900, 300, 100), jobs: int = 1) -> list[SweepRecord]:
    if batch_sizes is None:
        batch_sizes = list(range(256, 400_001, 256))
    cfg = SweepConfig(model=model, plans=topology_plans(model, acc, bandwidths_gbps),
                      batch_sizes=list(batch_sizes), seq_lengths=list(seq_lengths))
    return run_sweep(cfg, jobs)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ("inf" if v > 0 else "nan")
    return str(v)


def to_csv(records: list[SweepRecord]) -> str:
    labels: list[str] = []
    for r in records:
        for lab in r.layer_times:
            if lab not in labels:
                labels.append(lab)
    cols = list(BASE_COLUMNS) + [f"t_{lab}" for lab in labels]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        row = r.row()
        w.writerow([_fmt(row.get(c, 0.0)) for c in cols])
    return buf.getvalue()


def to_json(records: list[SweepRecord]) -> str:
    rows = []
    for r in records:
        d = {c: getattr(r, c) for c in BASE_COLUMNS}
        d["layer_times"] = r.layer_times
        rows.append(d)
    return json.dumps(rows, indent=1, allow_nan=True) + "\n"
