"""Command-line driver.

Subcommands:
    run                 one experiment, full artifact set
    sweep               lambda x gamma grid for one alignment loss
    compare-alignments  all five losses on identical data/partition
    dimensionality      three sharing scenarios + spectral comparison
    selftest            fast built-in property checks

Every flag overrides the corresponding config field; without --config the
built-in defaults apply.  Exit codes: 0 ok, 2 bad configuration/arguments,
3 partition failure, 4 numeric failure, 1 selftest failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys

from .analysis import compare_scenarios, summary_rows, write_round_summary_csv
from .config import ExperimentConfig, load_config, validate_config
from .errors import ContractError, NumericFailureError, PartitionFailureError
from .runner import execute_run, run_scenario, write_rounds_jsonl


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults apply if omitted)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--loss", help="alignment loss: mse|cosine|gcsa|rcsa|contrastive")
    p.add_argument("--lambda", dest="lam", type=float, help="prototype-term weight")
    p.add_argument("--gamma", type=float, help="instance-term weight")
    p.add_argument("--tau", type=float, help="contrastive temperature")
    p.add_argument("--rounds", type=int, help="communication rounds")
    p.add_argument("--clients", type=int, help="number of clients")
    p.add_argument("--alpha", type=float, help="Dirichlet concentration")
    p.add_argument("--scenario", help="hetero|homo_local|homo_shared")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--snapshots", action="store_true", help="write per-round prototype CSVs")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedstruct",
        description="Prototype-based federated learning with structural alignment losses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "run one experiment and write artifacts"),
        ("sweep", "lambda x gamma sensitivity grid for one loss"),
        ("compare-alignments", "run all five alignment losses on identical data"),
        ("dimensionality", "compare prototype spectra across sharing scenarios"),
        ("selftest", "run built-in property checks"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--grid", default="0.1,1,5",
                           help="comma-separated weights tried for lambda and gamma")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        if args.seed < 0:
            raise ContractError("--seed must be nonnegative")
        cfg.seed = args.seed
    if args.loss is not None:
        cfg.training.alignment = args.loss
    if args.lam is not None:
        cfg.training.lam = args.lam
    if args.gamma is not None:
        cfg.training.gamma = args.gamma
    if args.tau is not None:
        cfg.training.temperature = args.tau
    if args.rounds is not None:
        cfg.training.rounds = args.rounds
    if args.clients is not None:
        cfg.partition.clients = args.clients
    if args.alpha is not None:
        cfg.partition.alpha = args.alpha
    if args.scenario is not None:
        cfg.model.scenario = args.scenario
    if args.out is not None:
        cfg.output.directory = args.out
    if args.snapshots:
        cfg.output.prototype_snapshots = True
    return validate_config(cfg)


def _cmd_run(args) -> int:
    cfg = _load(args)
    run = execute_run(cfg)
    if not run.reports:
        print(f"run complete: 0 rounds -> {cfg.output.directory}")
        return 0
    final = run.reports[-1]
    print(
        f"run complete: {len(run.reports)} rounds, "
        f"final mean accuracy {final.mean_accuracy:.4f}, "
        f"best {final.best_mean_accuracy:.4f} -> {cfg.output.directory}"
    )
    return 0


def _require_rounds(cfg: ExperimentConfig, command: str) -> None:
    if cfg.training.rounds < 1:
        raise ContractError(f"{command} compares trained runs and needs rounds >= 1")


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    _require_rounds(cfg, "sweep")
    try:
        grid = [float(x) for x in args.grid.split(",") if x.strip()]
    except ValueError as exc:
        raise ContractError(f"bad --grid value: {args.grid!r}") from exc
    if not grid:
        raise ContractError("--grid must name at least one weight")
    out_dir = cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)

    base_cfg = copy.deepcopy(cfg)
    base_cfg.training.lam = 0.0
    base_cfg.training.gamma = 0.0
    baseline = run_scenario(base_cfg).best_mean_accuracy

    rows = []
    for lam in grid:
        for gamma in grid:
            point = copy.deepcopy(cfg)
            point.training.lam = lam
            point.training.gamma = gamma
            # A diverged grid point is a result, not a crash: record it as NaN
            # and keep sweeping.  (`run` stays strict and aborts instead.)
            try:
                best = run_scenario(point).best_mean_accuracy
            except NumericFailureError as exc:
                rows.append((cfg.training.alignment, lam, gamma, cfg.seed, baseline,
                             float("nan"), float("nan")))
                print(
                    f"sweep {cfg.training.alignment} lambda={lam} gamma={gamma}: "
                    f"diverged ({exc})"
                )
                continue
            rows.append((cfg.training.alignment, lam, gamma, cfg.seed, baseline,
                         best, best - baseline))
            print(
                f"sweep {cfg.training.alignment} lambda={lam} gamma={gamma}: "
                f"best {best:.4f} (baseline {baseline:.4f}, delta {best - baseline:+.4f})"
            )
    import csv

    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["loss", "lambda", "gamma", "seed", "baseline_best", "best_accuracy", "improvement"]
        )
        for row in rows:
            writer.writerow(row)
    print(f"wrote {path}")
    return 0


def _cmd_compare_alignments(args) -> int:
    cfg = _load(args)
    _require_rounds(cfg, "compare-alignments")
    out_dir = cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for loss in ("mse", "cosine", "gcsa", "rcsa", "contrastive"):
        point = copy.deepcopy(cfg)
        point.training.alignment = loss
        run = run_scenario(point)
        loss_dir = os.path.join(out_dir, loss)
        os.makedirs(loss_dir, exist_ok=True)
        write_rounds_jsonl(run.reports, os.path.join(loss_dir, "rounds.jsonl"))
        final = run.reports[-1]
        rows.append((loss, cfg.seed, final.best_mean_accuracy, final.mean_accuracy))
        print(
            f"{loss:12s} best {final.best_mean_accuracy:.4f} "
            f"final {final.mean_accuracy:.4f}"
        )
    import csv

    path = os.path.join(out_dir, "comparison.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loss", "seed", "best_accuracy", "final_accuracy"])
        for row in rows:
            writer.writerow(row)
    print(f"wrote {path}")
    return 0


def _cmd_dimensionality(args) -> int:
    cfg = _load(args)
    _require_rounds(cfg, "dimensionality")
    # isolate the sharing effect: local training stays purely supervised
    # unless weights were requested explicitly
    if args.lam is None:
        cfg.training.lam = 0.0
    if args.gamma is None:
        cfg.training.gamma = 0.0
    out_dir = cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    runs = {}
    all_rows = []
    for scenario in ("homo_shared", "homo_local", "hetero"):
        run = run_scenario(cfg, scenario=scenario)
        runs[scenario] = run
        sdir = os.path.join(out_dir, scenario)
        os.makedirs(sdir, exist_ok=True)
        write_rounds_jsonl(run.reports, os.path.join(sdir, "rounds.jsonl"))
        all_rows.extend(summary_rows(run))
        print(
            f"{scenario:12s} final threshold dim {run.final_effective_dimensionality} "
            f"participation ratio {run.final_participation_ratio:.3f}"
        )
    write_round_summary_csv(all_rows, os.path.join(out_dir, "dimensionality.csv"))
    comparison = compare_scenarios(runs["homo_shared"], runs["homo_local"], runs["hetero"])
    print(json.dumps(comparison.to_json_dict(), sort_keys=True))
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = run_selftest(verbose=True)
    return 1 if failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "compare-alignments": _cmd_compare_alignments,
        "dimensionality": _cmd_dimensionality,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except ContractError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except PartitionFailureError as exc:
        print(f"partition failure: {exc}", file=sys.stderr)
        return 3
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
