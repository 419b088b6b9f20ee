"""Accelerators, interconnects and the roofline time primitive."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TERA = 1e12
GIGA = 1e9


@dataclass(frozen=True)
class AcceleratorSpec:
    """One device: peak compute (op/s), main-memory bandwidth (B/s), capacity (B).

    ``mfu`` scales ``peak_flops`` for calibration; 1.0 is the ideal roofline.
    """

    name: str
    peak_flops: float
    mem_bw: float
    mem_cap: float
    mfu: float = 1.0

    def __post_init__(self):
        for attr in ("peak_flops", "mem_bw", "mem_cap"):
            value = getattr(self, attr)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{self.name}: {attr} must be positive and finite, got {value!r}")
        if not 0 < self.mfu <= 1:
            raise ValueError(f"{self.name}: mfu must be in (0, 1], got {self.mfu!r}")

    @property
    def effective_flops(self) -> float:
        return self.peak_flops * self.mfu

    @classmethod
    def from_table(cls, name: str, tflops: float, mem_bw_gbps: float, mem_cap_gb: float,
                   mfu: float = 1.0) -> "AcceleratorSpec":
        """Build from datasheet units: TFLOPS, GB/s, GB (decimal)."""
        return cls(name, tflops * TERA, mem_bw_gbps * GIGA, mem_cap_gb * GIGA, mfu)


@dataclass(frozen=True)
class InterconnectSpec:
    """Two-tier fabric. Bandwidths are unidirectional per device, in B/s."""

    intra_group_bw: float
    inter_group_bw: float
    group_size: int
    link_latency: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {self.group_size}")
        if not self.intra_group_bw >= self.inter_group_bw >= 0:
            raise ValueError("need intra_group_bw >= inter_group_bw >= 0")
        if self.intra_group_bw <= 0:
            raise ValueError("intra_group_bw must be positive")
        if self.link_latency < 0:
            raise ValueError("link_latency must be >= 0")


@dataclass(frozen=True)
class SystemSpec:
    accelerator: AcceleratorSpec
    n_acc: int
    interconnect: InterconnectSpec = field(
        default_factory=lambda: InterconnectSpec(900 * GIGA, 900 * GIGA, 1))

    def __post_init__(self):
        if self.n_acc < 1:
            raise ValueError(f"n_acc must be >= 1, got {self.n_acc}")
        if self.n_acc % self.interconnect.group_size:
            raise ValueError(
                f"n_acc={self.n_acc} is not a multiple of group_size={self.interconnect.group_size}")

    @property
    def n_groups(self) -> int:
        return self.n_acc // self.interconnect.group_size


def ridge_point(spec: AcceleratorSpec) -> float:
    """Arithmetic intensity (op/B) where the device turns compute-bound."""
    return spec.effective_flops / spec.mem_bw


def roofline_time(flops, nbytes, spec: AcceleratorSpec):
    """max(flops / peak, bytes / bandwidth). Works elementwise on arrays."""
    t = np.maximum(flops / spec.effective_flops, nbytes / spec.mem_bw)
    return float(t) if np.ndim(t) == 0 else t


# Datasheet rows: (TFLOPS BF16, GB/s, GB)
_TABLE = {
    "V100": (125, 900, 32),
    "A100": (312, 2039, 80),
    "H200": (989.5, 4800, 141),
    "B200": (2250, 8000, 192),
    "TPUv5p": (459, 2765, 95),
    "TPUv7": (2307, 7400, 192),
    "MI325X": (1307.4, 6000, 256),
}

ACCELERATORS = {name: AcceleratorSpec.from_table(name, *row) for name, row in _TABLE.items()}

INTERCONNECTS = {
    "nvlink5": 900 * GIGA,
    "ib-xdr": 100 * GIGA,
}


def accelerator(name: str) -> AcceleratorSpec:
    key = {k.lower(): k for k in ACCELERATORS}.get(name.lower().replace(" ", ""))
    if key is None:
        raise KeyError(f"unknown accelerator preset {name!r}; known: {', '.join(ACCELERATORS)}")
    return ACCELERATORS[key]


def nvlink_system(n_acc: int, acc: AcceleratorSpec | str = "B200", *, bw: float = 900 * GIGA,
                  group_size: int | None = None, inter_bw: float | None = None) -> SystemSpec:
    """n_acc devices; groups of ``group_size`` fully connected at ``bw``.

    With no group_size the whole system is one fully connected group.
    """
    if isinstance(acc, str):
        acc = accelerator(acc)
    group = n_acc if group_size is None else group_size
    inter = bw if inter_bw is None else inter_bw
    return SystemSpec(acc, n_acc, InterconnectSpec(bw, inter, group))
