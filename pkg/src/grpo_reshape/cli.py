"""
Command-line entry point: ``grpo-reshape <command>``.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .config import ARM_PRESETS, AUDIT_JUDGE, SCALE_PRESETS, settings
from .core.policy import PolicyParams
from .core.stats import audit_report, read_audit_labels
from .core.tasks import generate_tasks, read_tasks, write_tasks
from .exceptions import ConfigError, ReshapeError
from .models.audit import AuditTable
from .models.run import RunConfig
from .runner import ExperimentRunner, export_metrics_csv, replay

logger = logging.getLogger(__name__)


def _parse_assignments(pairs: Sequence[str], flag: str) -> Dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"{flag} expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(args: argparse.Namespace) -> RunConfig:
    """
    Build the run configuration from an arm preset, a config file and flags.

    The scale preset applies first, then the arm preset, then the config
    file, then ``--set`` pairs, then ``--seed``.
    """
    base: Dict[str, Any] = dict(SCALE_PRESETS[args.scale])
    if getattr(args, "arm", None):
        base.update(ARM_PRESETS[args.arm])
    overrides: Dict[str, Any] = _parse_assignments(getattr(args, "set", None) or [], "--set")
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    config_file = args.config or settings.config_file
    if config_file:
        return RunConfig.from_file(config_file, overrides=overrides, base=base)
    return RunConfig.from_flat({**base, **overrides})


def _print_json(data: Any) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def cmd_gen_tasks(args: argparse.Namespace) -> int:
    exclude = read_tasks(args.exclude) if args.exclude else None
    tasks = generate_tasks(
        args.num_tasks,
        seed=args.seed or 0,
        length=args.length,
        corruptions=args.corruptions,
        exclude=exclude,
    )
    path = Path(args.out) / args.name
    write_tasks(path, tasks)
    print(path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    runner = ExperimentRunner(cfg, out_dir=args.out)
    records = runner.run_training()
    _print_json(records[-1].to_record())
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    runner = ExperimentRunner(cfg)
    params = PolicyParams.load(args.params) if args.params else None
    summary = runner.run_eval(params)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(summary.to_line() + "\n")
    _print_json(summary.to_record())
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    for result in replay(args.dump):
        print(
            f"update {result.update}: stored {result.stored_loss:.12f} "
            f"replayed {result.replayed_loss:.12f} ({result.trajectories} trajectories)"
        )
    return 0


def cmd_audit_stats(args: argparse.Namespace) -> int:
    labels = read_audit_labels(args.labels) if args.labels else None
    table = None
    if args.table:
        tp, fp, fn, tn = args.table
        table = AuditTable(tp=tp, fp=fp, fn=fn, tn=tn)
    if table is None and labels is None:
        raise ConfigError("audit-stats needs --labels or --table")
    observed = {k: float(v) for k, v in _parse_assignments(args.observed or [], "--observed").items()}
    report = audit_report(
        table=table,
        labels=labels,
        discordant=tuple(args.discordant) if args.discordant else None,
        observed_rates=observed,
        sensitivity=args.sensitivity,
        specificity=args.specificity,
        z=args.z,
        resamples=args.resamples,
        seed=args.seed or 0,
    )
    _print_json(report.to_record())
    return 0


def cmd_export_csv(args: argparse.Namespace) -> int:
    metrics = Path(args.metrics)
    out = Path(args.out) if args.out else metrics.with_suffix(".csv")
    rows = export_metrics_csv(metrics, out)
    print(f"{out} ({rows} rows)")
    return 0


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="line-oriented dotted.key = value file")
    parser.add_argument("--seed", type=int, help="overrides train.seed")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted config override (repeatable)")
    parser.add_argument("--scale", choices=sorted(SCALE_PRESETS), default="desk",
                        help="group size and step preset (default desk: K=4, lr=10)")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per operation."""
    parser = argparse.ArgumentParser(
        prog="grpo-reshape",
        description="GRPO signal reshaping under weak feedback on a toy repair task.",
    )
    parser.add_argument("--log-level", default=None, help=f"default {settings.log_level}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tasks", help="generate a verified task split")
    p.add_argument("--num-tasks", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=5)
    p.add_argument("--corruptions", type=int, default=1)
    p.add_argument("--name", default="tasks.jsonl", help="file name under --out")
    p.add_argument("--exclude", help="task file the new split must stay disjoint from")
    p.add_argument("--out", default=settings.out_dir)
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("train", help="train one experiment arm")
    _add_run_flags(p)
    p.add_argument("--arm", choices=sorted(ARM_PRESETS), help="experiment arm preset")
    p.add_argument("--out", default=settings.out_dir)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a parameter table on the eval split")
    _add_run_flags(p)
    p.add_argument("--params", help="params.json written by train")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="recompute losses from a trajectory dump")
    p.add_argument("dump", help="trajectories.jsonl written by train")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("audit-stats", help="judge-reliability statistics")
    p.add_argument("--labels", help="delimited (judge_label, human_label) file")
    p.add_argument("--table", type=int, nargs=4, metavar=("TP", "FP", "FN", "TN"))
    p.add_argument("--discordant", type=int, nargs=2, metavar=("B", "C"))
    p.add_argument("--observed", action="append", metavar="NAME=RATE",
                   help="observed pass rate to correct (repeatable)")
    p.add_argument("--sensitivity", type=float, default=AUDIT_JUDGE["sensitivity"])
    p.add_argument("--specificity", type=float, default=AUDIT_JUDGE["specificity"])
    p.add_argument("--z", type=float, default=1.96)
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_audit_stats)

    p = sub.add_parser("export-csv", help="flatten a metrics log to CSV")
    p.add_argument("metrics", help="metrics.jsonl")
    p.add_argument("--out", help="CSV path (defaults next to the log)")
    p.set_defaults(func=cmd_export_csv)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ReshapeError as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
