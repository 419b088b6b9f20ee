"""Bandwidth-bound communication times over a two-tier interconnect.

No congestion or contention is modelled beyond the split between links inside
a fully connected group and links between groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec
from .parallel import DeploymentPlan, effective_batch


@dataclass(frozen=True)
class CommCost:
    """Bytes on the busiest device's intra- and inter-group links, and the time they take."""

    bytes_intra: object
    bytes_inter: object
    time: object

    def __add__(self, other: "CommCost") -> "CommCost":
        return CommCost(self.bytes_intra + other.bytes_intra,
                        self.bytes_inter + other.bytes_inter, self.time + other.time)

    def scaled(self, k) -> "CommCost":
        return CommCost(self.bytes_intra * k, self.bytes_inter * k, self.time * k)


ZERO = CommCost(0.0, 0.0, 0.0)


def _transfer_time(intra, inter, plan: DeploymentPlan, n_phases: int):
    ic = plan.system.interconnect
    t = intra / ic.intra_group_bw
    if ic.inter_group_bw > 0:
        t = t + inter / ic.inter_group_bw
    else:
        t = t + np.where(np.asarray(inter) > 0, np.inf, 0.0)
    busy = np.asarray(intra) + np.asarray(inter) > 0
    t = t + np.where(busy, n_phases * ic.link_latency, 0.0)
    return float(t) if np.ndim(t) == 0 else t


def moe_dispatch_combine(B, plan: DeploymentPlan, model: ModelSpec, q=1) -> CommCost:
    """All-to-all that sends each token to its n_k experts and brings results back.

    Destinations are uniform over devices, so a token leaves its own device with
    probability (n_acc - 1)/n_acc, of which (n_acc - group)/n_acc crosses groups.
    The busiest device sends 1/n_acc of the wire traffic per direction.
    """
    if not model.is_moe or model.ffn.n_k == 0 or plan.n_acc == 1:
        return ZERO
    n = plan.n_acc
    g = plan.system.interconnect.group_size
    wire = 2 * B * q * model.ffn.n_k * model.d_emb * model.dtype_bytes
    per_dev = wire / n
    intra = per_dev * (g - 1) / n
    inter = per_dev * (n - g) / n
    return CommCost(intra, inter, _transfer_time(intra, inter, plan, 2))


def tp_allreduce(B, plan: DeploymentPlan, model: ModelSpec, bytes_per_row=None, q=1) -> CommCost:
    """Ring all-reduce of one activation row per token across the TP group."""
    t = plan.deg_tp
    if t == 1:
        return ZERO
    if bytes_per_row is None:
        bytes_per_row = model.d_emb * model.dtype_bytes
    rows = effective_batch("attention", B, plan, model, q)
    vol = 2 * (t - 1) / t * rows * bytes_per_row
    return CommCost(vol, 0.0 * vol, _transfer_time(vol, 0.0, plan, 2 * (t - 1)))
