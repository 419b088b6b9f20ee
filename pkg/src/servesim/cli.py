"""Command-line entry point: ``servesim {sweep,breakdown,limits,verify,presets,compare}``.

Exit codes: 0 success, 1 bad input or failed verification, 2 when every
point of a sweep is infeasible.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, PlanEntry, SweepConfig, build_system, load_config
from .engine import breakdown as layer_breakdown
from .hw import ACCELERATORS, accelerator
from .limits import batch_limits
from .model import MODELS, model_preset
from .oracle import verify_suite
from .parallel import check_plan, default_plan
from .sweep import compare_topologies, peak_throughput, run_sweep, to_csv, to_json

log = logging.getLogger("servesim")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _add_target(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON file; flags below override nothing in it")
    p.add_argument("--model", default="deepseek-r1", help="model preset (default deepseek-r1)")
    p.add_argument("--hardware", default="B200", help="accelerator preset (default B200)")
    p.add_argument("--n-acc", type=int, default=32, help="devices (default 32)")
    p.add_argument("--deg-tp", type=int, help="tensor-parallel degree for attention")
    p.add_argument("--group-size", type=int, help="devices per fully connected group")
    p.add_argument("--intra-gbps", type=float, default=900.0)
    p.add_argument("--inter-gbps", type=float)
    p.add_argument("--stage", choices=("decode", "prefill"), default="decode")
    p.add_argument("--no-reorder", action="store_true", help="disable MLA reordering")
    p.add_argument("--unfused", action="store_true", help="cost score/softmax/context separately")


def _plan_from_args(args):
    model = model_preset(args.model)
    acc = accelerator(args.hardware)
    ic = {"intra_gbps": args.intra_gbps}
    if args.inter_gbps is not None:
        ic["inter_gbps"] = args.inter_gbps
    if args.group_size is not None:
        ic["group_size"] = args.group_size
    system = build_system(acc, args.n_acc, ic, "flags")
    plan = default_plan(model, system, args.stage)
    changes = {"fused": not args.unfused}
    if args.no_reorder:
        changes["reorder"] = False
    if args.deg_tp:
        changes.update(deg_tp=args.deg_tp, deg_dp=max(args.n_acc // args.deg_tp, 1))
    plan = plan.with_(name="cli", **changes)
    check_plan(plan, model)
    return model, plan


def _config_from_args(args) -> SweepConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        model, plan = _plan_from_args(args)
        cfg = SweepConfig(model=model, plans=[PlanEntry("cli", plan)],
                          batch_sizes=args.batch_sizes or [1, 64, 256, 1024, 4096],
                          seq_lengths=args.seq_lengths or [1024, 4096])
    if args.config and args.batch_sizes:
        cfg.batch_sizes = args.batch_sizes
    if args.config and args.seq_lengths:
        cfg.seq_lengths = args.seq_lengths
    if args.slo_ms is not None:
        cfg.slo = args.slo_ms / 1000.0
    if args.format:
        cfg.fmt = args.format
    if args.out:
        cfg.output = args.out
    return cfg


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    records = run_sweep(cfg, jobs=args.jobs)
    _emit(to_json(records) if cfg.fmt == "json" else to_csv(records), cfg.output)
    if records and not any(r.feasible for r in records):
        log.warning("every grid point is infeasible")
        return 2
    return 0


def cmd_breakdown(args) -> int:
    model, plan = _plan_from_args(args)
    block = None if args.block == "all" else args.block
    rows = layer_breakdown(model, plan, args.batch, args.seq_len, args.stage, block)
    if args.format == "json":
        text = json.dumps([{"label": lab, "seconds": t, "fraction": f} for lab, t, f in rows],
                          indent=1) + "\n"
    else:
        text = "label,seconds,fraction\n" + "".join(f"{lab},{t!r},{f!r}\n" for lab, t, f in rows)
    _emit(text, args.out)
    return 0


def cmd_limits(args) -> int:
    model, plan = _plan_from_args(args)
    slo = None if args.slo_ms is None else args.slo_ms / 1000.0
    lim = batch_limits(model, plan.with_(stage="decode"), args.seq_len, slo)
    _emit(json.dumps(lim.as_dict(), indent=1) + "\n", args.out)
    return 0


def cmd_verify(args) -> int:
    ok = True
    for name, passed, detail in verify_suite(args.seeds):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return 0 if ok else 1


def cmd_presets(args) -> int:
    print("hardware:")
    for name, a in ACCELERATORS.items():
        print(f"  {name:8s} {a.peak_flops / 1e12:8.1f} TFLOPS {a.mem_bw / 1e9:7.0f} GB/s "
              f"{a.mem_cap / 1e9:5.0f} GB")
    print("models:")
    for name, m in MODELS.items():
        print(f"  {name:12s} {m.attention.kind} n_dec={m.n_dec} d_emb={m.d_emb} "
              f"ffn={'moe' if m.is_moe else 'dense'}")
    return 0


def cmd_compare(args) -> int:
    model = model_preset(args.model)
    records = compare_topologies(model, accelerator(args.hardware), args.seq_lengths or [2048, 16384],
                                 jobs=args.jobs)
    if args.out:
        _emit(to_json(records) if args.format == "json" else to_csv(records), args.out)
    for (plan, L), (thr, B) in sorted(peak_throughput(records).items(), key=lambda kv: (kv[0][1], kv[0][0])):
        print(f"L={L:<6d} {plan:14s} peak {thr:10.1f} tok/s/device at B={B}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="servesim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="evaluate a (plan, L, B) grid")
    _add_target(p)
    p.add_argument("--batch-sizes", type=_int_list)
    p.add_argument("--seq-lengths", type=_int_list)
    p.add_argument("--slo-ms", type=float)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("breakdown", help="per-layer time shares at one (B, L)")
    _add_target(p)
    p.add_argument("-B", "--batch", type=int, default=128, help="system batch")
    p.add_argument("-L", "--seq-len", type=int, default=4096)
    p.add_argument("--block", choices=("attention", "dense_ffn", "moe", "all"), default="attention")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_breakdown)

    p = sub.add_parser("limits", help="B_attn, B_MoE, B_RP, B_cap, B_SLO as JSON")
    _add_target(p)
    p.add_argument("-L", "--seq-len", type=int, default=8192)
    p.add_argument("--slo-ms", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("verify", help="check reordering equivalence and cost formulas")
    p.add_argument("--seeds", type=int, default=100)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("presets", help="list built-in hardware and models")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("compare", help="32-device replicas vs one 256-device system")
    p.add_argument("--model", default="deepseek-r1")
    p.add_argument("--hardware", default="B200")
    p.add_argument("--seq-lengths", type=_int_list)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
