"""Sweep configuration from TOML or JSON.

Sections: ``[hardware]``, ``[interconnect]``, ``[model]``, ``[plan]`` (or an
array ``[[plans]]``) and ``[sweep]``. See the README for every key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .hw import GIGA, AcceleratorSpec, InterconnectSpec, SystemSpec, accelerator
from .model import GQA, MHA, MLA, DenseFfn, ModelSpec, MoeFfn, model_preset
from .parallel import DeploymentPlan, default_plan, validate_plan


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlanEntry:
    """A plan plus how many identical independent copies of it serve traffic."""

    id: str
    plan: DeploymentPlan
    replicas: int = 1


@dataclass
class SweepConfig:
    model: ModelSpec
    plans: list
    batch_sizes: list
    seq_lengths: list
    slo: float | None = None
    act_model: str = "widest"
    output: str | None = None
    fmt: str = "csv"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.batch_sizes or not self.seq_lengths:
            raise ConfigError("[sweep] batch_sizes and seq_lengths must be nonempty")
        if not self.plans:
            raise ConfigError("at least one plan is required")
        for v, name in ((self.batch_sizes, "batch_sizes"), (self.seq_lengths, "seq_lengths")):
            if any((not isinstance(x, int)) or x < 1 for x in v):
                raise ConfigError(f"[sweep] {name}: entries must be positive integers")
        for e in self.plans:
            errs = validate_plan(e.plan, self.model)
            if errs:
                raise ConfigError(f"[plan] {e.id}: " + "; ".join(errs))


def _take(section: dict, where: str, key: str, kind, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"[{where}] missing required key {key!r}")
        return default
    value = section[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ConfigError(f"[{where}] {key}: expected {kind.__name__}, got {value!r}")
    return value


def _check_keys(section: dict, where: str, allowed) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {', '.join(unknown)}")


def parse_hardware(sec: dict) -> AcceleratorSpec:
    _check_keys(sec, "hardware", ("preset", "name", "tflops", "mem_bw_gbps", "mem_cap_gb", "mfu"))
    mfu = _take(sec, "hardware", "mfu", float, 1.0)
    if "preset" in sec and not {"tflops", "mem_bw_gbps", "mem_cap_gb"} & set(sec):
        base = _preset_or_error(_take(sec, "hardware", "preset", str), accelerator, "hardware")
        return AcceleratorSpec(base.name, base.peak_flops, base.mem_bw, base.mem_cap, mfu)
    name = _take(sec, "hardware", "name", str, "custom")
    try:
        return AcceleratorSpec.from_table(
            name,
            _take(sec, "hardware", "tflops", float, required=True),
            _take(sec, "hardware", "mem_bw_gbps", float, required=True),
            _take(sec, "hardware", "mem_cap_gb", float, required=True), mfu)
    except ValueError as exc:
        raise ConfigError(f"[hardware] {exc}") from None


def _preset_or_error(name, lookup, where):
    try:
        return lookup(name)
    except KeyError as exc:
        raise ConfigError(f"[{where}] {exc.args[0]}") from None


_MODEL_KEYS = ("preset", "name", "n_dec", "d_emb", "n_hd", "d_hd", "dtype_bytes", "attention",
               "group_size", "d_qco", "d_kvco", "d_rope", "ffn", "d_ffn", "gated", "n_e", "n_k",
               "n_shared", "d_moe", "n_dense_blocks", "d_ffn_dense")


def parse_model(sec: dict) -> ModelSpec:
    _check_keys(sec, "model", _MODEL_KEYS)
    if "preset" in sec and len(sec) == 1:
        return _preset_or_error(sec["preset"], model_preset, "model")
    if "preset" in sec:
        base = _preset_or_error(sec["preset"], model_preset, "model")
        sec = {**_model_to_dict(base), **{k: v for k, v in sec.items() if k != "preset"}}

    def i(key, default=None, required=True):
        return _take(sec, "model", key, int, default, required and default is None)

    att = _take(sec, "model", "attention", str, "mha").lower()
    if att == "mha":
        attention = MHA()
    elif att == "gqa":
        attention = GQA(i("group_size"))
    elif att == "mla":
        attention = MLA(i("d_qco"), i("d_kvco"), i("d_rope"))
    else:
        raise ConfigError(f"[model] attention: expected mha, gqa or mla, got {att!r}")
    kind = _take(sec, "model", "ffn", str, "dense").lower()
    if kind == "dense":
        ffn = DenseFfn(i("d_ffn"), _take(sec, "model", "gated", bool, True))
    elif kind == "moe":
        ffn = MoeFfn(i("n_e"), i("n_k"), i("n_shared", 0), i("d_moe"), i("n_dense_blocks", 0),
                     i("d_ffn_dense", 0))
    else:
        raise ConfigError(f"[model] ffn: expected dense or moe, got {kind!r}")
    try:
        return ModelSpec(_take(sec, "model", "name", str, "custom"), i("n_dec"), i("d_emb"),
                         i("n_hd"), i("d_hd"), attention, ffn, i("dtype_bytes", 2))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[model] {exc}") from None


def _model_to_dict(m: ModelSpec) -> dict:
    d = {"name": m.name, "n_dec": m.n_dec, "d_emb": m.d_emb, "n_hd": m.n_hd, "d_hd": m.d_hd,
         "dtype_bytes": m.dtype_bytes, "attention": m.attention.kind}
    if isinstance(m.attention, GQA):
        d["group_size"] = m.attention.group_size
    if isinstance(m.attention, MLA):
        d.update(d_qco=m.attention.d_qco, d_kvco=m.attention.d_kvco, d_rope=m.attention.d_rope)
    if isinstance(m.ffn, DenseFfn):
        d.update(ffn="dense", d_ffn=m.ffn.d_ffn, gated=m.ffn.gated)
    else:
        f = m.ffn
        d.update(ffn="moe", n_e=f.n_e, n_k=f.n_k, n_shared=f.n_shared, d_moe=f.d_moe,
                 n_dense_blocks=f.n_dense_blocks, d_ffn_dense=f.d_ffn_dense)
    return d


_IC_KEYS = ("intra_gbps", "inter_gbps", "group_size", "latency_us")
_PLAN_KEYS = ("id", "n_acc", "deg_tp", "deg_dp", "deg_ep", "reorder", "fused", "stage", "skew",
              "overlap", "replicas") + _IC_KEYS


def build_system(acc: AcceleratorSpec, n_acc: int, ic: dict, where: str) -> SystemSpec:
    intra = _take(ic, where, "intra_gbps", float, 900.0)
    inter = _take(ic, where, "inter_gbps", float, intra)
    group = _take(ic, where, "group_size", int, n_acc)
    lat = _take(ic, where, "latency_us", float, 0.0)
    try:
        return SystemSpec(acc, n_acc, InterconnectSpec(intra * GIGA, inter * GIGA, group, lat * 1e-6))
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def parse_plan(sec: dict, model: ModelSpec, acc: AcceleratorSpec, ic: dict, index: int) -> PlanEntry:
    where = f"plans.{index}" if index else "plan"
    _check_keys(sec, where, _PLAN_KEYS)
    n_acc = _take(sec, where, "n_acc", int, required=True)
    merged_ic = {**ic, **{k: sec[k] for k in _IC_KEYS if k in sec}}
    system = build_system(acc, n_acc, merged_ic, where)
    stage = _take(sec, where, "stage", str, "decode")
    plan = default_plan(model, system, stage if stage in ("prefill", "decode") else "decode")
    changes = {"stage": stage}
    if "deg_tp" in sec:
        tp = _take(sec, where, "deg_tp", int)
        changes.update(deg_tp=tp, deg_dp=_take(sec, where, "deg_dp", int, max(n_acc // max(tp, 1), 1)))
    elif "deg_dp" in sec:
        dp = _take(sec, where, "deg_dp", int)
        changes.update(deg_dp=dp, deg_tp=max(n_acc // max(dp, 1), 1))
    for key, kind in (("deg_ep", int), ("reorder", bool), ("fused", bool), ("skew", float),
                      ("overlap", float)):
        if key in sec:
            changes[key] = _take(sec, where, key, kind)
    pid = _take(sec, where, "id", str, f"plan{index}")
    replicas = _take(sec, where, "replicas", int, 1)
    if replicas < 1:
        raise ConfigError(f"[{where}] replicas must be >= 1")
    return PlanEntry(pid, plan.with_(name=pid, **changes), replicas)


def parse_config(doc: dict) -> SweepConfig:
    _check_keys(doc, "top level", ("hardware", "interconnect", "model", "plan", "plans", "sweep"))
    acc = parse_hardware(doc.get("hardware", {"preset": "B200"}))
    ic = doc.get("interconnect", {})
    _check_keys(ic, "interconnect", _IC_KEYS)
    model = parse_model(doc.get("model", {"preset": "deepseek-r1"}))
    raw_plans = doc.get("plans") or [doc.get("plan", {"n_acc": 32})]
    if "plan" in doc and "plans" in doc:
        raise ConfigError("use either [plan] or [[plans]], not both")
    plans = [parse_plan(p, model, acc, ic, i if "plans" in doc else 0)
             for i, p in enumerate(raw_plans, start=1 if "plans" in doc else 0)]
    sw = doc.get("sweep", {})
    _check_keys(sw, "sweep", ("batch_sizes", "seq_lengths", "slo_ms", "act_model", "out", "format"))
    slo_ms = _take(sw, "sweep", "slo_ms", float)
    fmt = _take(sw, "sweep", "format", str, "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"[sweep] format: expected csv or json, got {fmt!r}")
    act = _take(sw, "sweep", "act_model", str, "widest")
    if act not in ("widest", "zero"):
        raise ConfigError(f"[sweep] act_model: expected widest or zero, got {act!r}")
    return SweepConfig(
        model=model, plans=plans,
        batch_sizes=list(_take(sw, "sweep", "batch_sizes", list, [1, 64, 256, 1024, 4096])),
        seq_lengths=list(_take(sw, "sweep", "seq_lengths", list, [1024, 4096])),
        slo=None if slo_ms is None else slo_ms / 1000.0, act_model=act,
        output=_take(sw, "sweep", "out", str), fmt=fmt)


def load_config(path: str | Path) -> SweepConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(text)
        else:
            doc = tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return parse_config(doc)
