"""Command-line front end: generate, label, simulate, compare, verify, inspect."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, SimConfig, apply_overrides, parse_config, set_key
from .reservation import run_verification
from .sim import compare_baselines, emit_csv, run_full
from .trace import (
    TraceFormatError,
    generate_trace,
    label_key_frames,
    load_trace,
    save_trace,
)
from .twin import profile_snapshot


def _build_config(args) -> SimConfig:
    cfg = parse_config(args.config) if args.config else SimConfig()
    cfg = apply_overrides(cfg, getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        cfg = set_key(cfg, "generator.seed", str(args.seed))
        cfg = set_key(cfg, "sim.seed", str(args.seed))
    if getattr(args, "epsilon", None) is not None:
        cfg = set_key(cfg, "radio.epsilon", str(args.epsilon))
    if getattr(args, "trace", None):
        cfg = set_key(cfg, "sim.trace", args.trace)
    return cfg


def _add_common(p, out_required=False):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.add_argument("--seed", type=int, help="seed for the generator and model init")
    p.add_argument("--epsilon", type=float, help="required reliability")
    p.add_argument("--trace", help="JSON-lines trace path")
    p.add_argument("--out", required=out_required, help="output path")


def _summary_lines(name: str, m) -> list[str]:
    lines = [
        f"[{name}] slots={m.slots} total_rbs={m.total_rbs} "
        f"over_rbs={m.total_over_provision_rbs} reliability={m.empirical_reliability:.4f} "
        f"count_mae={m.mean_abs_count_err:.3f}"
    ]
    if m.burst_mean_abs_count_err is not None:
        lines.append(f"[{name}] burst_count_mae={m.burst_mean_abs_count_err:.3f}")
    if m.measured_p is not None:
        lines.append(
            f"[{name}] measured p={m.measured_p:.4f} q={m.measured_q:.4f} "
            f"lambda={m.measured_lambda:.4f}"
        )
    return lines


def cmd_generate(args) -> int:
    cfg = _build_config(args)
    cfg.generator.validate()
    trace = generate_trace(cfg.generator)
    save_trace(trace, args.out)
    print(f"wrote {len(trace)} frames to {args.out}")
    return 0


def cmd_label(args) -> int:
    cfg = _build_config(args)
    if not args.trace:
        raise ConfigError("label requires --trace")
    trace = load_trace(args.trace)
    labeled = label_key_frames(trace, cfg.labeling, cfg.radio.frames_per_slot)
    save_trace(labeled, args.out)
    n_keys = sum(1 for f in labeled if f.key)
    print(f"labeled {len(labeled)} frames ({n_keys} key frames) -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _build_config(args)
    init_models = _load_models(args.load_models) if args.load_models else None
    result = run_full(cfg, init_models=init_models)
    if args.out:
        emit_csv(result.records, args.out)
        print(f"wrote {len(result.records)} slot rows to {args.out}")
    if args.save_models:
        _save_models(result, args.save_models)
    for line in _summary_lines("mudt", result.metrics):
        print(line)
    return 0


def _load_models(path) -> dict:
    from .predictors import ModelParams

    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return {name: ModelParams.from_json(obj) for name, obj in payload.items()}


def _save_models(result, path) -> None:
    payload = {}
    if result.params_detailed is not None:
        payload["detailed"] = result.params_detailed.to_json()
    if result.params_simplified is not None:
        payload["simplified"] = result.params_simplified.to_json()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    print(f"saved model parameters to {path}")


def cmd_compare(args) -> int:
    cfg = _build_config(args)
    results = compare_baselines(cfg)
    for name, res in results.items():
        if args.out:
            path = f"{args.out}.{name}.csv"
            emit_csv(res.records, path)
        for line in _summary_lines(name, res.metrics):
            print(line)
    if args.out:
        print(f"per-method CSVs written with prefix {args.out}.")
    return 0


def cmd_verify(args) -> int:
    rows = run_verification(mc_trials=args.trials)
    failed = 0
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    return 1 if failed else 0


def cmd_inspect(args) -> int:
    cfg = _build_config(args)
    if args.slots:
        cfg = set_key(cfg, "sim.max_slots", str(args.slots))
    result = run_full(cfg)
    snapshot = json.dumps(profile_snapshot(result.profile), indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(snapshot + "\n")
        print(f"profile snapshot written to {args.out}")
    else:
        print(snapshot)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="martwin",
        description="Digital-twin driven uplink spectrum reservation simulator",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a trace to JSON-lines")
    _add_common(p, out_required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("label", help="assign ground-truth key-frame flags")
    _add_common(p, out_required=True)
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("simulate", help="run the reservation loop, write slot CSV")
    _add_common(p)
    p.add_argument("--save-models", help="dump fitted model parameters to JSON")
    p.add_argument("--load-models", help="warm-start predictors from a JSON dump")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("compare", help="run the twin and both baselines on one trace")
    _add_common(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("verify", help="run the reservation oracle suites")
    p.add_argument("--trials", type=int, default=100_000, help="Monte Carlo trials")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("inspect", help="dump the user-profile snapshot as JSON")
    _add_common(p)
    p.add_argument("--slots", type=int, default=0, help="simulate only this many slots")
    p.set_defaults(fn=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, TraceFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
