"""Command-line entry point: ``sidtok {gen-synth,train,encode,diagnose,sweep}``.

Failures exit with a single stderr line ``error: <Class>: <message>`` and a
status code per class: usage 2, data 3, numeric 4, io 5.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .config import TrainConfig, apply_overrides, load_config, parse_value, save_config
from .data import SynthConfig, gen_synthetic, load_features, load_pairs, save_features, save_pairs
from .diagnostics import DiagnosticsReport, codebook_report, export_landscape
from .errors import ConfigError, SidTokError, UsageError
from .trainer import LossBreakdown, encode_corpus, train

log = logging.getLogger("sidtok")

SWEEP_AXES = {
    "f_max": ("regulation.f_max",),
    "eta_set": ("regulation.eta",),
    "schedule": ("schedule.t_start", "schedule.t_end"),
    "lambda_col_min": ("schedule.lambda_col_min",),
    "lambda_cf_max": ("schedule.lambda_cf_max",),
}


def _effective_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return cfg.with_overrides(overrides)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_train(cfg: TrainConfig, features, pairs_path, out: Path) -> DiagnosticsReport:
    """Train, then write config echo, loss log, checkpoint, SID table and report to ``out``."""
    table = load_features(features)
    pairs = load_pairs(pairs_path, table)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    with open(out / "loss_log.jsonl", "w") as fh:
        def sink(b: LossBreakdown):
            fh.write(b.to_json() + "\n")
        state = train(cfg, table, pairs, sink)
    ckpt.save_checkpoint(state, out / "checkpoint.bin")
    sids = encode_corpus(state, table)
    ckpt.write_sid_table(out / "sids.tsv", table.ids, sids)
    report = codebook_report(sids, cfg.tokenizer.K)
    _write_json(out / "report.json", report.to_dict())
    return report


def run_sweep(cfg: TrainConfig, axis: str, values: list, features, pairs_path,
              out: Path) -> list[tuple[object, DiagnosticsReport]]:
    """One full train + diagnose per value of ``axis``; other settings fixed."""
    if axis not in SWEEP_AXES:
        raise UsageError(f"invalid sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    if not values:
        raise UsageError("sweep needs at least one value")
    keys = SWEEP_AXES[axis]
    base = cfg.to_dict()
    results = []
    for k, value in enumerate(values):
        parts = value if len(keys) > 1 else [value]
        if len(parts) != len(keys):
            raise UsageError(f"axis {axis} expects values of length {len(keys)}, got {value!r}")
        data = apply_overrides(base, [f"{key}={json.dumps(v)}" for key, v in zip(keys, parts)])
        point_cfg = TrainConfig.from_dict(data)
        log.info("sweep %s point %d: %s", axis, k, value)
        report = run_train(point_cfg, features, pairs_path, out / f"point_{k:02d}")
        results.append((value, report))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", "sid_entropy", "avg_ppl", "min_ppl", "mean_top1"])
        for value, r in results:
            w.writerow([axis, json.dumps(value), repr(r.sid_entropy), repr(r.avg_perplexity),
                        repr(r.min_perplexity), repr(r.mean_top1_load)])
    export_landscape([(f"{axis}={json.dumps(v)}", r) for v, r in results], out / "landscape.csv")
    return results


def run_diagnose(tables: list[str], out, names=None, K=None) -> list[DiagnosticsReport]:
    if not tables:
        raise UsageError("diagnose needs at least one SID table")
    names = names or [Path(t).stem if Path(t).stem != "sids" else Path(t).parent.name or "sids"
                      for t in tables]
    if len(names) != len(tables):
        raise UsageError("--names must match the number of tables")
    reports = [codebook_report(ckpt.read_sid_table(t)[1], K) for t in tables]
    export_landscape(list(zip(names, reports)), out)
    return reports


def _cmd_gen_synth(args):
    data = SynthConfig().__dict__.copy()
    if args.seed is not None:
        data["seed"] = args.seed
    for item in args.set or []:
        key, _, raw = item.partition("=")
        if key not in data:
            raise ConfigError(f"unknown synth key {key!r}")
        data[key] = parse_value(raw)
    cfg = SynthConfig(**data)
    table, pairs = gen_synthetic(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_features(table, out / "features.bin")
    save_pairs(pairs, out / "pairs.tsv")
    (out / "labels.tsv").write_text("".join(f"{i}\t{int(c)}\n" for i, c in zip(table.ids, table.labels)))
    _write_json(out / "synth_config.json", cfg.__dict__)


def _cmd_train(args):
    report = run_train(_effective_config(args), args.features, args.pairs, Path(args.out))
    print(json.dumps(report.to_dict()))


def _cmd_encode(args):
    state = ckpt.load_checkpoint(args.checkpoint)
    table = load_features(args.features)
    ckpt.write_sid_table(args.out, table.ids, encode_corpus(state, table))


def _cmd_diagnose(args):
    reports = run_diagnose(args.tables, args.out, args.names, args.codebook_size)
    for r in reports:
        print(json.dumps(r.to_dict()))


def _cmd_sweep(args):
    values = parse_value(args.values)
    if not isinstance(values, list):
        raise UsageError("--values must be a JSON list")
    cfg = _effective_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    for value, r in run_sweep(cfg, args.axis, values, args.features, args.pairs, out):
        print(json.dumps({"value": value, **r.to_dict()}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sidtok", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON config file (defaults when omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field; repeatable")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)
        if data:
            sp.add_argument("--features", required=True)
            sp.add_argument("--pairs", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic clustered dataset")
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_synth)

    t = sub.add_parser("train", help="train a tokenizer and export SIDs")
    common(t)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("encode", help="encode a feature file with a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--features", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_encode)

    d = sub.add_parser("diagnose", help="codebook statistics and landscape CSV")
    d.add_argument("tables", nargs="+")
    d.add_argument("--names", nargs="+")
    d.add_argument("--codebook-size", type=int)
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_diagnose)

    s = sub.add_parser("sweep", help="train + diagnose across values of one setting")
    common(s)
    s.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    s.add_argument("--values", required=True, help="JSON list of values")
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SidTokError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: IOError: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
