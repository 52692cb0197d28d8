"""Experiment configuration: JSON in, validated dataclasses out.

One file (or the built-in defaults) describes the dataset, the partition, the
model zoo, the training hyper-parameters, and the output layout, plus a
single top-level master seed from which every random draw in the run is
derived.  Unknown keys are rejected with their dotted path so typos never
silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ContractError


@dataclass
class DatasetConfig:
    classes: int = 10
    input_dim: int = 16
    samples_per_class: int = 100
    separation: float = 0.7
    noise: float = 0.32


@dataclass
class PartitionConfig:
    scheme: str = "dirichlet"  # "dirichlet" | "domain_shift"
    alpha: float = 0.1
    shift_scale: float = 1.0
    clients: int = 8


@dataclass
class ModelConfig:
    hidden_widths: list = field(
        default_factory=lambda: [[], [16], [32, 16], [64, 32, 16]]
    )
    feature_dim: int = 8
    scenario: str = "hetero"  # "hetero" | "homo_local" | "homo_shared"


@dataclass
class TrainingConfig:
    alignment: str = "gcsa"
    temperature: float = 0.5
    lam: float = 1.0
    gamma: float = 1.0
    local_epochs: int = 2
    batch_size: int = 32
    learning_rate: float = 0.18
    participation_fraction: float = 1.0
    prototype_mode: str = "aggregate"
    rounds: int = 30


@dataclass
class OutputConfig:
    directory: str = "results"
    prototype_snapshots: bool = False
    normalized_stacking: bool = False


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        # external key names: "lambda"/"gamma" match the CLI flags
        out["training"]["lambda"] = out["training"].pop("lam")
        return out


_BLOCKS = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "output": OutputConfig,
}
_KEY_ALIASES = {("training", "lambda"): "lam"}


def _fill_block(cls, block_name: str, payload: dict):
    if not isinstance(payload, dict):
        raise ContractError(f"config block {block_name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in payload.items():
        name = _KEY_ALIASES.get((block_name, key), key)
        if name not in known:
            raise ContractError(f"unknown config key {block_name}.{key}")
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(payload: dict) -> ExperimentConfig:
    if not isinstance(payload, dict):
        raise ContractError("config root must be a JSON object")
    cfg = ExperimentConfig()
    for key, value in payload.items():
        if key == "seed":
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ContractError(f"seed must be a nonnegative integer, got {value!r}")
            cfg.seed = value
        elif key in _BLOCKS:
            setattr(cfg, key, _fill_block(_BLOCKS[key], key, value))
        else:
            raise ContractError(f"unknown config key {key}")
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ContractError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    ds, pt, md, tr = cfg.dataset, cfg.partition, cfg.model, cfg.training
    if ds.classes < 2:
        raise ContractError(f"dataset.classes must be >= 2, got {ds.classes}")
    if ds.input_dim < 1:
        raise ContractError(f"dataset.input_dim must be >= 1, got {ds.input_dim}")
    if ds.samples_per_class < 2:
        raise ContractError(
            f"dataset.samples_per_class must be >= 2, got {ds.samples_per_class}"
        )
    if ds.separation < 0 or ds.noise < 0:
        raise ContractError("dataset.separation and dataset.noise must be >= 0")
    if pt.scheme not in ("dirichlet", "domain_shift"):
        raise ContractError(f"partition.scheme must be dirichlet|domain_shift, got {pt.scheme!r}")
    if not (pt.alpha > 0):
        raise ContractError(f"partition.alpha must be > 0, got {pt.alpha}")
    if pt.shift_scale < 0:
        raise ContractError(f"partition.shift_scale must be >= 0, got {pt.shift_scale}")
    if pt.clients < 2:
        raise ContractError(f"partition.clients must be >= 2, got {pt.clients}")
    if md.scenario not in ("hetero", "homo_local", "homo_shared"):
        raise ContractError(f"model.scenario invalid: {md.scenario!r}")
    if md.feature_dim < 1:
        raise ContractError(f"model.feature_dim must be >= 1, got {md.feature_dim}")
    if not md.hidden_widths or not isinstance(md.hidden_widths, list):
        raise ContractError("model.hidden_widths must be a non-empty list of width lists")
    for widths in md.hidden_widths:
        if not isinstance(widths, list) or any(
            (not isinstance(w, int)) or w < 1 for w in widths
        ):
            raise ContractError(f"model.hidden_widths entry {widths!r} invalid")
    if tr.alignment not in ("mse", "cosine", "gcsa", "rcsa", "contrastive"):
        raise ContractError(f"training.alignment invalid: {tr.alignment!r}")
    if not (tr.temperature > 0):
        raise ContractError(f"training.temperature must be > 0, got {tr.temperature}")
    if tr.lam < 0 or tr.gamma < 0:
        raise ContractError("training.lambda and training.gamma must be >= 0")
    if tr.local_epochs < 1 or tr.batch_size < 2 or tr.rounds < 0:
        raise ContractError("training.local_epochs >= 1, batch_size >= 2, rounds >= 0 required")
    if not (tr.learning_rate > 0):
        raise ContractError(f"training.learning_rate must be > 0, got {tr.learning_rate}")
    if not (0 < tr.participation_fraction <= 1):
        raise ContractError(
            f"training.participation_fraction must be in (0, 1], got {tr.participation_fraction}"
        )
    if tr.prototype_mode not in ("aggregate", "fixed_hypersphere"):
        raise ContractError(f"training.prototype_mode invalid: {tr.prototype_mode!r}")
    return cfg


def echo_config(cfg: ExperimentConfig, path) -> None:
    """Write the fully-resolved configuration (defaults + overrides applied)."""
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
