"""Analytical roofline simulator for LLM inference serving with MLA and MoE."""

from .engine import StageResult, breakdown, decode_tpot, memory_required, prefill_time
from .hw import AcceleratorSpec, InterconnectSpec, SystemSpec, accelerator, ridge_point, roofline_time
from .layers import LayerCost, Phase, fc_cost, mla_block_cost
from .limits import BatchLimits, batch_limits
from .model import DEEPSEEK_R1, GPT3, ModelSpec, kv_bytes_per_token, model_preset
from .parallel import DeploymentPlan, default_plan, validate_plan

__version__ = "0.1.0"

__all__ = [
    "AcceleratorSpec", "InterconnectSpec", "SystemSpec", "accelerator", "ridge_point",
    "roofline_time", "ModelSpec", "DEEPSEEK_R1", "GPT3", "model_preset", "kv_bytes_per_token",
    "Phase", "LayerCost", "fc_cost", "mla_block_cost", "DeploymentPlan", "default_plan",
    "validate_plan", "StageResult", "decode_tpot", "prefill_time", "memory_required",
    "breakdown", "BatchLimits", "batch_limits",
]
