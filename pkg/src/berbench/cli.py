"""Command-line entry points: run, score, plot-data, synth."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import GaussianMixtureSpec
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_plot_data,
    load_config,
    run_experiment,
    score_tables,
    synth_dataset,
)


def _common_flags(parser: argparse.ArgumentParser, need_config: bool) -> None:
    parser.add_argument("--config", required=need_config, help="experiment config file")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--threads", type=int, default=None, help="override worker threads")
    parser.add_argument("--out-dir", default="out", help="output directory (default: out)")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _parse_means(text: str, dim: int) -> np.ndarray:
    rows = [row for row in text.split(";") if row.strip()]
    means = np.array([[float(v) for v in row.split(",")] for row in rows])
    if means.shape[1] != dim:
        raise ConfigError(f"--means rows have {means.shape[1]} values, expected dim={dim}")
    return means


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="berbench",
        description="Benchmark Bayes-error-rate estimators by tracking bound "
        "curves under controlled label noise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the experiment grid, write trials.csv")
    _common_flags(p_run, need_config=True)
    p_run.add_argument(
        "--record-timing",
        action="store_true",
        help="write measured per-trial wall time (breaks byte-identical reruns)",
    )

    p_score = sub.add_parser("score", help="score a trial table, write scores.csv")
    _common_flags(p_score, need_config=True)
    p_score.add_argument("--trials", default=None, help="trial table (default: OUT_DIR/trials.csv)")

    p_plot = sub.add_parser("plot-data", help="emit curve/envelope/quantile JSON")
    _common_flags(p_plot, need_config=True)
    p_plot.add_argument("--trials", default=None, help="trial table (default: OUT_DIR/trials.csv)")

    p_synth = sub.add_parser("synth", help="write a Gaussian-mixture dataset with known BER")
    _common_flags(p_synth, need_config=False)
    p_synth.add_argument("--classes", type=int, required=True)
    p_synth.add_argument("--dim", type=int, required=True)
    p_synth.add_argument("--means", required=True, help="per-class rows, e.g. '0,0;2,0'")
    p_synth.add_argument("--std", type=float, required=True, help="shared isotropic std")
    p_synth.add_argument("--priors", default=None, help="comma list, defaults to equal")
    p_synth.add_argument("--train-n", type=int, required=True)
    p_synth.add_argument("--eval-n", type=int, required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            run_experiment(_load(args), args.out_dir, record_timing=args.record_timing)
        elif args.command == "score":
            cfg = _load(args)
            trials = args.trials or Path(args.out_dir) / "trials.csv"
            score_tables(cfg, trials, args.out_dir)
        elif args.command == "plot-data":
            cfg = _load(args)
            trials = args.trials or Path(args.out_dir) / "trials.csv"
            emit_plot_data(cfg, trials, Path(args.out_dir) / "plot_data.json")
        elif args.command == "synth":
            if args.classes < 2:
                raise ConfigError(f"--classes must be >= 2, got {args.classes}")
            means = _parse_means(args.means, args.dim)
            if means.shape[0] != args.classes:
                raise ConfigError(f"--means has {means.shape[0]} rows for {args.classes} classes")
            if args.priors is None:
                priors = np.full(args.classes, 1.0 / args.classes)
            else:
                priors = np.array([float(v) for v in args.priors.split(",")])
            try:
                spec = GaussianMixtureSpec(
                    num_classes=args.classes,
                    dim=args.dim,
                    means=means,
                    std=args.std,
                    priors=priors,
                    n_train=args.train_n,
                    n_eval=args.eval_n,
                )
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            synth_dataset(spec, args.seed if args.seed is not None else 0, args.out_dir)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
