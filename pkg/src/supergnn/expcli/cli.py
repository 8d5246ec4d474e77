"""Command line entry point: ``supergnn <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from pathlib import Path

from supergnn.errors import ConfigError
from supergnn.expcli.config import (
    ExperimentConfig,
    build_dataset,
    default_config,
    load_config,
    parse_seeds,
)
from supergnn.expcli.runner import (
    AGGREGATE_COLUMNS,
    aggregate,
    read_csv,
    run_study,
    write_csv,
    write_study,
)
from supergnn.graphgen import save_dataset
from supergnn.model import ModelConfig, init_model, save_checkpoint
from supergnn.trainer import TrainConfig, train

STUDY_COMMANDS = {
    "sweep-width": "width_sweep",
    "conjunction": "conjunction_study",
    "sweep-pooling": "pooling_sweep",
    "rank-track": "rank_track",
    "noise-probe": "noise_probe",
}


def _config_for(study: str, args) -> ExperimentConfig:
    cfg = load_config(args.config, study) if args.config else default_config(study)
    raw = cfg.to_dict()
    if args.seeds:
        raw["sweep"]["seeds"] = parse_seeds(args.seeds)
    if args.arch:
        raw["sweep"]["archs"] = [a.strip().upper() for a in args.arch.split(",")]
    if args.out:
        raw["out_dir"] = args.out
    return ExperimentConfig.from_dict(raw)


def cmd_study(study: str, args) -> int:
    cfg = _config_for(study, args)

    def progress(outcome):
        status = "FAILED " + outcome.failure if outcome.failure else "ok"
        print(f"[{outcome.spec.index + 1}] {outcome.spec.run_id}: {status}", file=sys.stderr,
              flush=True)

    result = run_study(cfg, jobs=args.jobs, progress=None if args.quiet else progress)
    out = write_study(result, cfg.out_dir)
    print(f"{len(result.records)} runs completed, {len(result.failures)} failed -> {out}")
    return 0


def cmd_gen(args) -> int:
    spec = json.loads(Path(args.config).read_text()) if args.config else {}
    spec = spec.get("dataset", spec)
    spec.setdefault("family", args.family)
    if args.seed is not None:
        spec["seed"] = args.seed
    data = build_dataset(spec)
    out = Path(args.out or f"{spec['family']}_s{spec.get('seed', 0)}.jsonl")
    save_dataset(data, out)
    print(f"wrote {len(data.graphs)} graphs to {out}")
    return 0


def cmd_train(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    data = build_dataset(raw.get("dataset", {"family": "pairwise"}))
    model_raw = dict(raw.get("model", {}))
    model_raw.setdefault("arch", (args.arch or "GCN").upper())
    if args.arch:
        model_raw["arch"] = args.arch.upper()
    model_raw.setdefault("layer_widths", [data.feature_dim, 16])
    model_raw["in_dim"] = data.feature_dim
    model_raw["num_outputs"] = data.num_classes
    model_raw["pooling"] = model_raw.get("pooling", {})
    mc = ModelConfig.from_dict(model_raw)
    mc.validate()
    seeds = parse_seeds(args.seeds) if args.seeds else [int(raw.get("train", {}).get("seed", 0))]
    out = Path(args.out or "train_out")
    out.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        tc = TrainConfig(**{**raw.get("train", {}), "seed": seed})
        model = init_model(mc, seed)
        record = train(model, data, tc)
        record.save(out / f"run_s{seed}.jsonl")
        save_checkpoint(model, out / f"model_s{seed}.npz")
        last = record.final()
        state = "FAILED " + record.failure if record.failed else "ok"
        print(f"seed {seed}: train_acc={last['train_acc']:.4f} test_acc={last['test_acc']:.4f} {state}")
    return 0


def cmd_analyze(args) -> int:
    """Recompute aggregate.csv from geometry.csv and print a per-group summary."""
    src = Path(args.input or args.out or ".")
    rows = read_csv(src / "geometry.csv")
    if rows and "quantity" in rows[0]:
        by = defaultdict(list)
        for r in rows:
            by[(r["quantity"], r["angle_deg"])].append(float(r["value"]) if r["value"] else float("nan"))
        for (q, a), vals in by.items():
            label = q if a is None else f"{q}@{a}deg"
            print(f"{label:24s} mean={sum(vals) / len(vals):.4f} n={len(vals)}")
        return 0
    failures = []
    fpath = src / "failures.jsonl"
    if fpath.exists():
        failures = [json.loads(line) for line in fpath.read_text().splitlines() if line.strip()]
    typed = [_typed(r) for r in rows]
    for f in failures:
        for axis in ("d", "p"):
            if f.get(axis) is not None:
                f[axis] = _typed({axis: str(f[axis])})[axis]
    agg = aggregate(typed, failures)
    write_csv(Path(args.out or src) / "aggregate.csv", AGGREGATE_COLUMNS, agg)
    for a in agg:
        label = " ".join(f"{c}={a[c]}" for c in ("arch", "d", "pooling", "p", "scope", "variant")
                         if a[c] is not None)
        print(f"{label} {a['level']}/{a['family']}: n={a['n_runs']} k_a={a['k_a_mean']:.2f} "
              f"si={a['si_mean']:.3f} ai={a['ai_mean']:.3f} one={a['frac_one']:.2f} "
              f"all={a['frac_all']:.2f}")
    return 0


_INT_FIELDS = {"seed", "d", "k_a", "r", "dropped_rows", "r_tau", "r_eta", "dead_columns"}
_BOOL_FIELDS = {"degenerate", "cos_any", "cos_all", "collapsed", "perfect"}
_STR_FIELDS = {"run", "study", "arch", "pooling", "scope", "variant", "level", "kind", "family"}


def _typed(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        if v is None or k in _STR_FIELDS:
            out[k] = v
        elif k in _BOOL_FIELDS:
            out[k] = v == "true"
        elif k in _INT_FIELDS:
            out[k] = int(v)
        else:
            out[k] = float(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supergnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (or file for gen)")
        if seeds:
            p.add_argument("--seeds", help="seed range a..b (inclusive) or comma list")
            p.add_argument("--arch", help="architecture(s), comma separated: GCN,GIN,GATV2")
            p.add_argument("--jobs", type=int, default=1, help="worker processes")

    g = sub.add_parser("gen", help="generate a dataset as JSON lines")
    common(g, seeds=False)
    g.add_argument("--family", choices=("pairwise", "conjunction"), default="pairwise")
    g.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train models and save records and checkpoints")
    common(t)

    for name, study in STUDY_COMMANDS.items():
        s = sub.add_parser(name, help=f"run the {study} study")
        common(s)
        s.add_argument("--quiet", action="store_true", help="no per-run progress lines")

    a = sub.add_parser("analyze", help="re-aggregate a results directory")
    a.add_argument("input", nargs="?", help="results directory")
    a.add_argument("--out", help="where to write aggregate.csv (default: input)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "analyze":
            return cmd_analyze(args)
        return cmd_study(STUDY_COMMANDS[args.command], args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
