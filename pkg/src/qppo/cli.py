"""Command-line front end: run / evaluate / plot / verify-tables.

Exit codes: 0 ok, 1 runtime refusal (e.g. existing run without --force),
2 invalid configuration, 3 training abort (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config, load_preset, list_presets
from .ppo import TrainingAbort


def _parse_seeds(text: str) -> list[int]:
    return [int(s) for s in text.replace(",", " ").split()]


def _backend_mode_from_args(args):
    if args.backend is None:
        return None
    from .backend import Exact, Noisy, Shots

    if args.backend == "exact":
        return Exact()
    if args.backend == "shots":
        return Shots(args.shots, args.backend_seed)
    if args.backend == "noisy":
        return Noisy(args.shots, args.depolarizing, args.readout, args.backend_seed)
    raise ConfigError(f"unknown backend {args.backend!r}")


def _add_backend_flags(parser):
    parser.add_argument("--backend", choices=("exact", "shots", "noisy"), default=None)
    parser.add_argument("--shots", type=int, default=1000)
    parser.add_argument("--depolarizing", type=float, default=0.01)
    parser.add_argument("--readout", type=float, default=0.02)
    parser.add_argument("--backend-seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qppo",
        description="Hybrid quantum-classical PPO experiments on classic-control tasks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train a config across its seed list")
    p_run.add_argument("--config", help="path to a YAML experiment config")
    p_run.add_argument("--preset", help=f"built-in preset name ({', '.join(list_presets())})")
    p_run.add_argument("--seeds", type=_parse_seeds, help="override seed list, e.g. '0,1,2'")
    p_run.add_argument("--out", help="output directory (default $QPPO_OUT_ROOT/<name>)")
    p_run.add_argument("--force", action="store_true", help="overwrite an existing run")
    p_run.add_argument("--workers", type=int, default=1, help="parallel seed jobs")
    _add_backend_flags(p_run)

    p_eval = sub.add_parser("evaluate", help="evaluate a stored checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.add_argument("--deterministic", action="store_true")
    p_eval.add_argument("--seed", type=int, default=0)
    _add_backend_flags(p_eval)

    p_plot = sub.add_parser("plot", help="render learning-curve figures from run records")
    p_plot.add_argument("records", nargs="+", help="run directories (record.json + aggregate.csv)")
    p_plot.add_argument("--out", help="directory for the PNG files")

    sub.add_parser("verify-tables", help="check all eight network parameter counts")

    return parser


def cmd_run(args) -> int:
    from .runner import RunExistsError, run

    if bool(args.config) == bool(args.preset):
        print("exactly one of --config or --preset is required", file=sys.stderr)
        return 2
    try:
        config = load_config(args.config) if args.config else load_preset(args.preset)
        if args.seeds:
            config.seeds = args.seeds
        backend = _backend_mode_from_args(args)
        if backend is not None:
            from .config import BackendSection

            config.backend = BackendSection(
                mode=args.backend,
                shots=args.shots,
                depolarizing_prob=args.depolarizing,
                readout_flip_prob=args.readout,
            )
        config.validate(for_run=True)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        record = run(config, out_root=args.out, force=args.force, workers=args.workers)
    except RunExistsError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except TrainingAbort as exc:
        print(f"training aborted: {exc}; diagnostics: {exc.diagnostics}", file=sys.stderr)
        return 3
    solved = sum(1 for s in record.seed_summaries if s["solved_at_steps"] is not None)
    print(f"run complete: {record.out_dir} ({solved}/{len(record.seed_summaries)} seeds solved)")
    return 0


def cmd_evaluate(args) -> int:
    from .runner import evaluate_checkpoint

    try:
        stats = evaluate_checkpoint(
            args.checkpoint,
            episodes=args.episodes,
            backend_mode=_backend_mode_from_args(args),
            deterministic=args.deterministic,
            seed=args.seed,
        )
    except (ConfigError, FileNotFoundError) as exc:
        print(f"invalid evaluation request: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(stats, indent=2))
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_records

    try:
        written = plot_records([Path(p) for p in args.records], args.out)
    except (FileNotFoundError, ValueError) as exc:
        print(f"cannot plot: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


def cmd_verify_tables(_args) -> int:
    from .runner import format_verify_report, verify_tables

    rows, all_pass = verify_tables()
    print(format_verify_report(rows))
    return 0 if all_pass else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "run": cmd_run,
        "evaluate": cmd_evaluate,
        "plot": cmd_plot,
        "verify-tables": cmd_verify_tables,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
