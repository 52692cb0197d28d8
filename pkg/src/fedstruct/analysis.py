"""Diagnostics over prototype geometry: effective dimensionality & comparisons.

The headline diagnostic stacks prototype vectors from all clients into one
matrix and asks how many singular directions carry 95% of the (uncentered,
unnormalized) energy.  Structurally-trained federations should keep more
directions alive than parameter-shared ones, whose prototypes collapse onto
a shared subspace.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError
from .tensor import as_matrix, normalize_rows, svd

ENERGY_QUANTILE = 0.95


@dataclass(frozen=True)
class EffectiveDimensionality:
    """threshold_dim is the headline number; participation_ratio a soft check."""

    threshold_dim: int
    participation_ratio: float


def effective_dimensionality(stacked, normalize_rows_first: bool = False) -> EffectiveDimensionality:
    """Spectral effective dimensionality of a stacked prototype matrix.

    threshold_dim = smallest k whose top-k squared singular values reach 95%
    of the total; participation_ratio = (sum s^2)^2 / sum s^4.  The matrix is
    used raw (uncentered); pass normalize_rows_first=True to remove row-scale
    effects first.  An all-zero matrix has no spectrum and is rejected.
    """
    m = as_matrix(stacked, "stacked prototypes")
    if m.shape[0] < 2:
        raise ContractError(f"need >= 2 stacked rows, got {m.shape[0]}")
    if normalize_rows_first:
        m = normalize_rows(m, "stacked prototypes")
    s = svd(m).singular_values
    top = float(s[0]) if s.size else 0.0
    if top <= 0.0:
        raise DegenerateInputError("all-zero prototype stack has no spectrum")
    # Work with energies relative to the leading one so fourth powers of very
    # large singular values cannot overflow double precision.
    energy = np.square(s / top)
    total = float(energy.sum())
    cum = np.cumsum(energy)
    threshold_dim = int(np.searchsorted(cum, ENERGY_QUANTILE * total) + 1)
    participation = total * total / float(np.sum(energy * energy))
    return EffectiveDimensionality(threshold_dim, float(participation))


@dataclass
class ScenarioRun:
    """A completed experiment: its scenario label, data seed, and round reports."""

    scenario: str
    data_seed: int
    reports: list

    @property
    def final_effective_dimensionality(self) -> int:
        if not self.reports:
            raise ContractError(f"scenario {self.scenario!r} has no rounds")
        return int(self.reports[-1].effective_dimensionality)

    @property
    def final_participation_ratio(self) -> float:
        if not self.reports:
            raise ContractError(f"scenario {self.scenario!r} has no rounds")
        return float(self.reports[-1].participation_ratio)

    @property
    def best_mean_accuracy(self) -> float:
        if not self.reports:
            raise ContractError(f"scenario {self.scenario!r} has no rounds")
        return float(self.reports[-1].best_mean_accuracy)


@dataclass(frozen=True)
class ScenarioComparison:
    homo_shared_dim: int
    homo_local_dim: int
    hetero_dim: int
    homo_shared_ratio: float
    homo_local_ratio: float
    hetero_ratio: float
    ordering_holds: bool  # hetero keeps strictly more directions than shared

    def to_json_dict(self) -> dict:
        return {
            "homo_shared_dim": self.homo_shared_dim,
            "homo_local_dim": self.homo_local_dim,
            "hetero_dim": self.hetero_dim,
            "homo_shared_ratio": self.homo_shared_ratio,
            "homo_local_ratio": self.homo_local_ratio,
            "hetero_ratio": self.hetero_ratio,
            "ordering_holds": self.ordering_holds,
        }


def compare_scenarios(
    homo_shared: ScenarioRun, homo_local: ScenarioRun, hetero: ScenarioRun
) -> ScenarioComparison:
    """Final-round dimensionality comparison across the three sharing regimes.

    All three runs must come from the same data seed, otherwise the
    comparison is meaningless and rejected.
    """
    runs = (homo_shared, homo_local, hetero)
    seeds = {r.data_seed for r in runs}
    if len(seeds) != 1:
        raise ContractError(f"scenario runs use different data seeds: {sorted(seeds)}")
    for run, expected in zip(runs, ("homo_shared", "homo_local", "hetero")):
        if run.scenario != expected:
            raise ContractError(f"expected scenario {expected!r}, got {run.scenario!r}")
    hs, hl, ht = (r.final_effective_dimensionality for r in runs)
    return ScenarioComparison(
        homo_shared_dim=hs,
        homo_local_dim=hl,
        hetero_dim=ht,
        homo_shared_ratio=homo_shared.final_participation_ratio,
        homo_local_ratio=homo_local.final_participation_ratio,
        hetero_ratio=hetero.final_participation_ratio,
        ordering_holds=bool(ht > hs),
    )


def write_round_summary_csv(rows, path) -> None:
    """rows: iterables of (scenario, seed, round, threshold_dim,
    participation_ratio, mean_accuracy)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario", "seed", "round", "threshold_dim", "participation_ratio", "mean_accuracy"]
        )
        for row in rows:
            writer.writerow(list(row))


def summary_rows(run: ScenarioRun):
    """Flatten a ScenarioRun into write_round_summary_csv rows."""
    for rep in run.reports:
        yield (
            run.scenario,
            run.data_seed,
            rep.round_index,
            rep.effective_dimensionality,
            repr(float(rep.participation_ratio)),
            repr(float(rep.mean_accuracy)),
        )
