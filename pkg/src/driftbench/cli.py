"""Command line entry point: ``driftbench {bench,detect,synth,ablate,report}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (METHODS, PROPOSED, BenchConfig, ConfigError, build_detector,
                    build_sequence, dump_config, emit_report, format_summary, load_config,
                    run_ablation, run_benchmark, summary_from_records, summary_rows,
                    write_ablation)
from .datasets import SyntheticDriftScenario, load_csv, write_sequence
from .trees import fit_random_forest


def _parse_methods(text: str) -> list:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    if not methods:
        raise ConfigError("--methods needs at least one name")
    return methods


def _parse_grid(text: str) -> list:
    """``"1-8"`` or ``"1,2,5"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def resolve_config(args) -> BenchConfig:
    cfg = load_config(args.config) if args.config else BenchConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.methods is not None:
        cfg.methods = _parse_methods(args.methods)
    if args.reps is not None:
        cfg.repetitions = args.reps
    return cfg


def cmd_bench(args, cfg: BenchConfig) -> int:
    cfg.validate()

    def progress(msg):
        if args.verbose:
            print(msg, file=sys.stderr)

    report = run_benchmark(cfg, progress=progress)
    paths = emit_report(report, cfg.out_dir)
    print(format_summary(summary_rows(report)))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def cmd_detect(args, cfg: BenchConfig) -> int:
    methods = cfg.methods if args.methods is not None else ["cfpt"]
    label_map: dict = {}
    d0 = load_csv(args.reference, args.label_column, label_map=label_map)
    d1 = load_csv(args.incoming, None if args.unlabeled else args.label_column,
                  label_map=label_map, batch_id=1)
    if d1.n_features != d0.n_features:
        raise ConfigError("reference and incoming files have different feature counts")
    seed = cfg.seed
    m0 = fit_random_forest(d0, rng_seed=seed, **cfg.forest)
    for method in methods:
        params = dict(cfg.method_params.get(method, {}))
        if args.threshold is not None:
            if method not in PROPOSED:
                raise ConfigError("--threshold applies to cfpt and tabautodrift only")
            params["utility_threshold"] = args.threshold
        det = build_detector(method, params, seed)
        det.calibrate(m0, d0)
        v = det.detect(m0, d0, d1)
        print(f"{method}: retrain={'yes' if v.retrain else 'no'} utility={v.utility:.6g} "
              f"threshold={v.threshold_used:.6g}")
    return 0


def cmd_synth(args, cfg: BenchConfig) -> int:
    seq = build_sequence(cfg.resolved_source(), cfg.seed)
    path = write_sequence(seq, cfg.out_dir)
    flags = "".join("D" if d else "." for d in seq.ground_truth_drift)
    print(f"wrote {len(seq.incoming) + 1} batches to {path.parent} (drift pattern {flags})")
    print(f"manifest: {path}")
    return 0


def cmd_ablate(args, cfg: BenchConfig) -> int:
    if args.premise == "fingerprinting":
        premise = "fingerprinting"
    else:
        premise = SyntheticDriftScenario(kind=args.premise, magnitude=args.magnitude)
    grid = _parse_grid(args.grid)
    method = cfg.methods[0] if args.methods is not None else "cfpt"
    rows = run_ablation(method, grid, premise, range(cfg.seed, cfg.seed + args.seeds),
                        vary=args.vary, fixed_epochs=args.fixed,
                        params=cfg.method_params.get(method), forest=cfg.forest)
    path = write_ablation(rows, Path(cfg.out_dir) / f"ablation_{method}_{args.vary}.csv")
    print("train_epochs  retrain_epochs  median_utility")
    for tr, re, u in rows:
        print(f"{tr:<12d}  {re:<14d}  {u:.6f}")
    print(f"wrote {path}")
    return 0


def cmd_report(args, cfg: BenchConfig) -> int:
    path = Path(args.records) if args.records else Path(cfg.out_dir) / "records.json"
    if not path.exists():
        raise FileNotFoundError(f"no records file at {path}; run `bench` first")
    print(format_summary(summary_from_records(path)))
    return 0


COMMANDS = {"bench": cmd_bench, "detect": cmd_detect, "synth": cmd_synth,
            "ablate": cmd_ablate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (see --dump-config for the schema)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
    common.add_argument("--reps", type=int, help="repetitions per method (at least 3)")
    common.add_argument("--dump-config", action="store_true",
                        help="print the resolved config as JSON and exit")

    parser = argparse.ArgumentParser(prog="driftbench",
                                     description="Retraining-alarm benchmark for drift detectors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", parents=[common], help="run the full repeated benchmark")
    p.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")

    p = sub.add_parser("detect", parents=[common], help="one reference/incoming pair")
    p.add_argument("--reference", required=True, help="labeled reference CSV")
    p.add_argument("--incoming", required=True, help="incoming CSV")
    p.add_argument("--label-column", default="label")
    p.add_argument("--unlabeled", action="store_true", help="incoming file has no label column")
    p.add_argument("--threshold", type=float, help="fixed utility threshold (skips calibration)")

    sub.add_parser("synth", parents=[common], help="write the configured sequence as CSV files")

    p = sub.add_parser("ablate", parents=[common], help="epoch sweep of a proposed detector")
    p.add_argument("--vary", choices=("train", "retrain"), default="train")
    p.add_argument("--grid", default="1-8", help="epoch counts, e.g. 1-8 or 1,5,10")
    p.add_argument("--fixed", type=int, default=5, help="epochs of the phase not swept")
    p.add_argument("--seeds", type=int, default=8, help="number of seeds (from --seed on)")
    p.add_argument("--premise", default="fingerprinting",
                   help="fingerprinting, or a synthetic drift kind such as new_class")
    p.add_argument("--magnitude", type=float, default=1.0, help="synthetic drift magnitude")

    p = sub.add_parser("report", parents=[common], help="summarize a records.json file")
    p.add_argument("--records", help="records file (default: <out>/records.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            cfg.validate()
            sys.stdout.write(dump_config(cfg))
            return 0
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError, OSError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"driftbench: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
