"""
Command-line entry points.

    python -m sste toy     [--mode hard_ste] [--check]
    python -m sste train   --config run.json [--mode s_ste --lambda-w 2e-4 ...]
    python -m sste ablate  --preset beta [--workers 4] [--strict]
    python -m sste report  runs/<dir> [--strict]

Exit codes: 0 success, 1 configuration or runtime error, 2 sparsity
violation in a sparse forward, 3 failed ``--check`` or ``--strict``.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from loguru import logger

from .config import ExperimentConfig
from .exceptions import SparsityViolationError, SSTEError
from .experiments import PRESETS, preset_matrix, report, run_and_store, run_ablation_matrix, toy_check
from .logging_config import add_file_sink, configure_logging
from .models import Expectation, LayerMode, OptimizerKind, RescaleRecipe, ScheduleKind, Task
from .runstore import LOG_FILE, RunStore
from .settings import get_settings

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SPARSITY = 2
EXIT_CHECK_FAILED = 3

# argparse dest -> flat config key
FLAG_KEYS: Dict[str, str] = {
    "name": "name",
    "task": "task",
    "mode": "mode",
    "seed": "seed",
    "dtype": "dtype",
    "output_dir": "output_dir",
    "prune_n": "prune.n",
    "prune_m": "prune.m",
    "gamma": "prune.gamma",
    "rescale": "rescale.recipe",
    "lambda_w": "sr_ste.lambda_w",
    "mvue_gradz": "mvue.gradz",
    "mvue_weights": "mvue.weights",
    "fp8_forward": "fp8.forward",
    "fp8_backward": "fp8.backward",
    "optimizer": "optim.kind",
    "lr": "optim.lr",
    "schedule": "optim.schedule",
    "warmup_steps": "optim.warmup_steps",
    "steps": "train.steps",
    "batch_size": "train.batch_size",
    "trace_stride": "train.trace_stride",
    "dense_finetune": "train.dense_finetune_fraction",
    "resume": "train.resume_from",
    "hidden": "model.hidden",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="Flat JSON config file")
    parser.add_argument("--name", type=str, default=None, help="Run name (directory under the output root)")
    parser.add_argument("--task", choices=[t.value for t in Task], default=None)
    parser.add_argument("--mode", choices=[m.value for m in LayerMode], default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--dtype", choices=["float32", "float64"], default=None)
    parser.add_argument("--output-dir", type=str, default=None, help="Explicit run or matrix directory")
    parser.add_argument("--prune-n", type=int, default=None)
    parser.add_argument("--prune-m", type=int, default=None)
    parser.add_argument("--gamma", type=float, default=None, help="Soft threshold interpolation in [0, 1]")
    parser.add_argument("--rescale", choices=[r.value for r in RescaleRecipe], default=None)
    parser.add_argument("--dynamic-beta", action="store_true", help="Recompute beta every step (ablation)")
    parser.add_argument("--lambda-w", type=float, default=None, help="SR-STE decay strength (required for sr_ste)")
    parser.add_argument("--mvue-gradz", action="store_const", const=True, default=None, help="MVUE on grad Z")
    parser.add_argument("--mvue-weights", action="store_const", const=True, default=None, help="MVUE on S(W) (ablation)")
    parser.add_argument("--fp8-forward", type=str, default=None, help="e4m3, e5m2, e3m4 or none")
    parser.add_argument("--fp8-backward", type=str, default=None, help="e4m3, e5m2, e3m4 or none")
    parser.add_argument("--optimizer", choices=[o.value for o in OptimizerKind], default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--schedule", choices=[s.value for s in ScheduleKind], default=None)
    parser.add_argument("--warmup-steps", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--trace-stride", type=int, default=None)
    parser.add_argument("--dense-finetune", type=float, default=None, help="Final fraction of dense steps")
    parser.add_argument("--resume", type=str, default=None, help="Checkpoint directory to resume from")
    parser.add_argument("--hidden", type=int, nargs="+", default=None, help="MLP hidden widths")


def build_config(args: argparse.Namespace, defaults: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Config file (or verb defaults) with command-line flags applied on top."""
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_flat({**(defaults or {})})
    overrides = {key: getattr(args, dest, None) for dest, key in FLAG_KEYS.items()}
    if getattr(args, "dynamic_beta", False):
        overrides["rescale.freeze"] = False
    return cfg.with_overrides(overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sste", description="N:M sparse training experiments")
    parser.add_argument("--log-level", type=str, default=None, help="Override SSTE_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    toy = sub.add_parser("toy", help="Gradient descent on g(w1, w2) = (w1 - w2)^2")
    _add_config_flags(toy)
    toy.add_argument("--start", type=float, nargs=2, default=None, metavar=("W1", "W2"))
    toy.add_argument("--check", action="store_true", help="Assert dense convergence and hard-STE oscillation")

    train = sub.add_parser("train", help="Train a small network")
    _add_config_flags(train)

    ablate = sub.add_parser("ablate", help="Run an ablation matrix")
    _add_config_flags(ablate)
    ablate.add_argument("--preset", choices=PRESETS, required=True)
    ablate.add_argument("--workers", type=int, default=None, help="Process pool size (default SSTE_WORKERS)")
    ablate.add_argument("--strict", action="store_true", help="Exit 3 when a soft expectation fails")

    rep = sub.add_parser("report", help="Summarize a run or matrix directory")
    rep.add_argument("directory", type=Path)
    rep.add_argument("--strict", action="store_true", help="Exit 3 when a soft expectation fails")
    return parser


def _print_table(frame: pd.DataFrame) -> None:
    print(frame.to_string(index=False))


def _print_expectations(expectations: Sequence[Expectation]) -> None:
    for e in expectations:
        print(f"[{'ok' if e.holds else 'FLAGGED'}] {e.name}: {e.detail}")


def _with_run_log(run_dir: Path, fn, *args):
    handler = add_file_sink(run_dir / LOG_FILE)
    try:
        return fn(*args)
    finally:
        logger.remove(handler)


def cmd_toy(args: argparse.Namespace) -> int:
    defaults = {"task": "toy", "name": "toy", "optim.lr": 0.25, "optim.schedule": "constant", "train.steps": 100}
    cfg = build_config(args, defaults)
    if args.start is not None:
        cfg = cfg.with_overrides({"data.toy_start": list(args.start)})
    run_dir = RunStore.run_directory(cfg)
    record = _with_run_log(run_dir, run_and_store, cfg, run_dir)
    frame = pd.DataFrame(
        {"step": range(len(record.trajectory)), "w": record.trajectory, "w_eff": record.effective_trajectory}
    )
    _print_table(frame.head(10))
    if args.check:
        expectations = toy_check(cfg)
        _print_expectations(expectations)
        if not all(e.holds for e in expectations):
            logger.error("Toy check failed")
            return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    cfg.require_explicit_lambda()
    run_dir = RunStore.run_directory(cfg)
    record = _with_run_log(run_dir, run_and_store, cfg, run_dir)
    _print_table(pd.DataFrame([record.summary.model_dump(exclude={"aod_ecdf"})]))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    base = build_config(args)
    base.require_explicit_lambda()
    configs = preset_matrix(args.preset, base)
    matrix_dir = Path(base.output_dir) if base.output_dir else get_settings().OUTPUT_ROOT / f"{base.name}-{args.preset}"
    workers = args.workers or get_settings().WORKERS
    result = _with_run_log(matrix_dir, run_ablation_matrix, configs, matrix_dir, workers)
    _print_table(pd.DataFrame([row.model_dump() for row in result.rows]))
    _print_expectations(result.expectations)
    if args.strict and not all(e.holds for e in result.expectations):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    table, expectations = report(args.directory)
    _print_table(table)
    _print_expectations(expectations)
    if args.strict and not all(e.holds for e in expectations):
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {"toy": cmd_toy, "train": cmd_train, "ablate": cmd_ablate, "report": cmd_report}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = get_settings()
    configure_logging(args.log_level or settings.LOG_LEVEL, settings.LOG_FILE)
    try:
        return COMMANDS[args.command](args)
    except SparsityViolationError as e:
        logger.error(f"{args.command}: sparsity violation: {e}")
        return EXIT_SPARSITY
    except SSTEError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
