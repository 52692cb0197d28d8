"""Glue between a validated ExperimentConfig and the protocol engine.

Seed discipline: the master seed fans out through SeedSequence tags so every
stage has an independent stream — data (seed, 3), partition parent (seed, 5),
model init (seed, 0, i), batch order (seed, 1, round, client), participation
(seed, 2, round), hypersphere start (seed, 4).  Two runs with the same config
produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .analysis import ScenarioRun, summary_rows, write_round_summary_csv
from .config import ExperimentConfig, echo_config
from .data import generate_mixture, partition_dirichlet, partition_domain_shift
from .federation import RoundConfig, run_experiment
from .losses import AlignmentKind
from .models import ArchitectureSpec


def architectures(cfg: ExperimentConfig) -> list[ArchitectureSpec]:
    return [
        ArchitectureSpec(tuple(widths), cfg.model.feature_dim)
        for widths in cfg.model.hidden_widths
    ]


def build_shards(cfg: ExperimentConfig):
    """Generate the dataset and partition it according to the config."""
    ds = generate_mixture(
        num_classes=cfg.dataset.classes,
        input_dim=cfg.dataset.input_dim,
        samples_per_class=cfg.dataset.samples_per_class,
        class_separation=cfg.dataset.separation,
        noise_scale=cfg.dataset.noise,
        seed=np.random.SeedSequence([cfg.seed, 3]),
    )
    part_seed = int(np.random.SeedSequence([cfg.seed, 5]).generate_state(1)[0])
    if cfg.partition.scheme == "dirichlet":
        shards = partition_dirichlet(ds, cfg.partition.alpha, cfg.partition.clients, part_seed)
    else:
        shards = partition_domain_shift(
            ds, cfg.partition.clients, cfg.partition.shift_scale, part_seed
        )
    return ds, shards


def round_config(cfg: ExperimentConfig) -> RoundConfig:
    tr = cfg.training
    return RoundConfig(
        alignment=AlignmentKind.parse(tr.alignment, tr.temperature),
        lam=tr.lam,
        gamma=tr.gamma,
        local_epochs=tr.local_epochs,
        batch_size=tr.batch_size,
        learning_rate=tr.learning_rate,
        participation_fraction=tr.participation_fraction,
        prototype_mode=tr.prototype_mode,
    )


def run_scenario(cfg: ExperimentConfig, scenario: str | None = None, snapshot_dir=None) -> ScenarioRun:
    """Run one experiment and wrap the reports with scenario/seed metadata."""
    scenario = scenario or cfg.model.scenario
    _, shards = build_shards(cfg)
    reports = run_experiment(
        shards,
        architectures(cfg),
        round_config(cfg),
        rounds=cfg.training.rounds,
        seed=cfg.seed,
        num_classes=cfg.dataset.classes,
        scenario=scenario,
        snapshot_dir=snapshot_dir,
        normalize_stacking=cfg.output.normalized_stacking,
    )
    return ScenarioRun(scenario=scenario, data_seed=cfg.seed, reports=reports)


def write_rounds_jsonl(reports, path) -> None:
    """One sorted-key JSON object per line; no timestamps, byte-stable."""
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_json_dict(), sort_keys=True))
            fh.write("\n")


def execute_run(cfg: ExperimentConfig, out_dir=None) -> ScenarioRun:
    """Full artifact-producing run: config.echo, rounds.jsonl, summary.csv
    and optional prototypes/round_<k>.csv snapshots."""
    out_dir = out_dir or cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    snapshot_dir = (
        os.path.join(out_dir, "prototypes") if cfg.output.prototype_snapshots else None
    )
    echo_config(cfg, os.path.join(out_dir, "config.echo"))
    run = run_scenario(cfg, snapshot_dir=snapshot_dir)
    write_rounds_jsonl(run.reports, os.path.join(out_dir, "rounds.jsonl"))
    write_round_summary_csv(summary_rows(run), os.path.join(out_dir, "summary.csv"))
    return run
