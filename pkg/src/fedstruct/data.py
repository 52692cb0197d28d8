"""Synthetic labeled mixtures and non-IID client partitioners.

Datasets are Gaussian blobs around unit-direction class means scaled by a
separation factor, split 80/20 (stratified per class) at generation time so
every downstream partition sees a consistent train/test divide.  Two
partitioners are provided: symmetric-Dirichlet label skew and per-client
domain shift (rotation + translation of the feature space).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, PartitionFailureError
from .tensor import random_orthogonal

# Bounded retries for the Dirichlet partitioner before giving up.
MAX_PARTITION_ATTEMPTS = 200


@dataclass
class LabeledDataset:
    features: np.ndarray  # (N, input_dim)
    labels: np.ndarray  # (N,) ints in [0, num_classes)
    test_mask: np.ndarray  # (N,) bool; True rows are held out
    num_classes: int

    @property
    def train_indices(self) -> np.ndarray:
        return np.nonzero(~self.test_mask)[0]

    @property
    def test_indices(self) -> np.ndarray:
        return np.nonzero(self.test_mask)[0]


@dataclass
class DatasetShard:
    """One client's private slice, already materialized as arrays."""

    client_id: int
    train_features: np.ndarray
    train_labels: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray

    @property
    def num_train(self) -> int:
        return int(self.train_labels.shape[0])

    @property
    def num_test(self) -> int:
        return int(self.test_labels.shape[0])

    def train_class_counts(self) -> dict[int, int]:
        vals, counts = np.unique(self.train_labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


def generate_mixture(
    num_classes: int,
    input_dim: int,
    samples_per_class: int,
    class_separation: float,
    noise_scale: float,
    seed,
) -> LabeledDataset:
    """Isotropic Gaussian blobs around random unit directions.

    Class c's mean is class_separation * u_c with u_c a seeded random unit
    vector; samples are mean + noise_scale * N(0, I).  Rows are grouped by
    class; within each class block the last max(1, round(0.2 m)) rows are the
    test split (m >= 2 required so both splits are non-empty).
    """
    if num_classes < 2:
        raise ContractError(f"num_classes must be >= 2, got {num_classes}")
    if input_dim < 1:
        raise ContractError(f"input_dim must be >= 1, got {input_dim}")
    if samples_per_class < 2:
        raise ContractError(f"samples_per_class must be >= 2, got {samples_per_class}")
    if class_separation < 0 or noise_scale < 0:
        raise ContractError("class_separation and noise_scale must be nonnegative")
    rng = np.random.default_rng(seed)
    feats = []
    labs = []
    mask = []
    m = samples_per_class
    n_test = max(1, round(0.2 * m))
    for c in range(num_classes):
        direction = rng.standard_normal(input_dim)
        norm = np.linalg.norm(direction)
        while norm < 1e-8:  # pragma: no cover - probability zero
            direction = rng.standard_normal(input_dim)
            norm = np.linalg.norm(direction)
        mean = class_separation * direction / norm
        block = mean + noise_scale * rng.standard_normal((m, input_dim))
        feats.append(block)
        labs.append(np.full(m, c, dtype=np.int64))
        block_mask = np.zeros(m, dtype=bool)
        block_mask[m - n_test:] = True
        mask.append(block_mask)
    return LabeledDataset(
        features=np.concatenate(feats, axis=0),
        labels=np.concatenate(labs),
        test_mask=np.concatenate(mask),
        num_classes=num_classes,
    )


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of `total` items proportional to `weights`.

    Floor the ideal shares, then hand out the remainder by descending
    fractional part (ties broken by lower index, deterministically).
    """
    ideal = weights * total
    base = np.floor(ideal).astype(np.int64)
    leftover = int(total - base.sum())
    if leftover > 0:
        order = np.lexsort((np.arange(len(weights)), -(ideal - base)))
        base[order[:leftover]] += 1
    return base


def _split_by_counts(indices: np.ndarray, counts: np.ndarray) -> list[np.ndarray]:
    out = []
    start = 0
    for c in counts:
        out.append(indices[start : start + int(c)])
        start += int(c)
    return out


def partition_dirichlet(
    ds: LabeledDataset, alpha: float, num_clients: int, seed
) -> list[DatasetShard]:
    """Symmetric-Dirichlet label-skew partition.

    For each class one proportion vector w ~ Dir(alpha * 1) is drawn and
    applied to BOTH the train and test rows of that class, so each client's
    test split mirrors its own label distribution (personalized evaluation).
    Integer allocation uses largest remainders.  A draw is valid only if every
    client gets >= 2 train samples from >= 2 distinct classes and >= 1 test
    sample; up to MAX_PARTITION_ATTEMPTS seeded redraws are made before
    raising PartitionFailureError.
    """
    if not (alpha > 0) or not np.isfinite(alpha):
        raise ContractError(f"alpha must be positive and finite, got {alpha}")
    if num_clients < 2:
        raise ContractError(f"num_clients must be >= 2, got {num_clients}")
    for attempt in range(MAX_PARTITION_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))
        train_parts = [[] for _ in range(num_clients)]
        test_parts = [[] for _ in range(num_clients)]
        for c in range(ds.num_classes):
            class_rows = np.nonzero(ds.labels == c)[0]
            tr = class_rows[~ds.test_mask[class_rows]]
            te = class_rows[ds.test_mask[class_rows]]
            w = rng.dirichlet(np.full(num_clients, alpha))
            tr_counts = _largest_remainder(w, len(tr))
            te_counts = _largest_remainder(w, len(te))
            for i, chunk in enumerate(_split_by_counts(rng.permutation(tr), tr_counts)):
                train_parts[i].append(chunk)
            for i, chunk in enumerate(_split_by_counts(rng.permutation(te), te_counts)):
                test_parts[i].append(chunk)
        shards = []
        valid = True
        for i in range(num_clients):
            tr_idx = np.concatenate(train_parts[i]) if train_parts[i] else np.array([], dtype=np.int64)
            te_idx = np.concatenate(test_parts[i]) if test_parts[i] else np.array([], dtype=np.int64)
            tr_idx = np.sort(tr_idx)
            te_idx = np.sort(te_idx)
            if (
                len(tr_idx) < 2
                or len(np.unique(ds.labels[tr_idx])) < 2
                or len(te_idx) < 1
            ):
                valid = False
                break
            shards.append(
                DatasetShard(
                    client_id=i,
                    train_features=ds.features[tr_idx].copy(),
                    train_labels=ds.labels[tr_idx].copy(),
                    test_features=ds.features[te_idx].copy(),
                    test_labels=ds.labels[te_idx].copy(),
                )
            )
        if valid:
            return shards
    raise PartitionFailureError(
        f"no valid Dirichlet partition after {MAX_PARTITION_ATTEMPTS} attempts "
        f"(alpha={alpha}, clients={num_clients}); try a larger alpha or fewer clients"
    )


def partition_domain_shift(
    ds: LabeledDataset,
    num_clients: int,
    shift_scale: float,
    seed,
    rotate: bool = True,
) -> list[DatasetShard]:
    """Balanced label split with a per-client affine domain transform.

    Rows of each class are dealt round-robin into near-equal chunks, then
    client i's features are mapped x -> x @ R_i + t_i with R_i a seeded
    random orthogonal matrix (identity when rotate=False) and t_i a random
    direction of length shift_scale.  Label distributions stay IID; the
    input domains drift apart.
    """
    if num_clients < 2:
        raise ContractError(f"num_clients must be >= 2, got {num_clients}")
    if shift_scale < 0 or not np.isfinite(shift_scale):
        raise ContractError(f"shift_scale must be finite and >= 0, got {shift_scale}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    train_parts = [[] for _ in range(num_clients)]
    test_parts = [[] for _ in range(num_clients)]
    for c in range(ds.num_classes):
        class_rows = np.nonzero(ds.labels == c)[0]
        for pool, parts in (
            (class_rows[~ds.test_mask[class_rows]], train_parts),
            (class_rows[ds.test_mask[class_rows]], test_parts),
        ):
            perm = rng.permutation(pool)
            for i in range(num_clients):
                # offset the round-robin start per class so remainders spread out
                parts[i].append(perm[(i + c) % num_clients :: num_clients])
    dim = ds.features.shape[1]
    shards = []
    for i in range(num_clients):
        rot = (
            random_orthogonal(dim, np.random.SeedSequence([int(seed), 7, i]))
            if rotate
            else np.eye(dim)
        )
        direction = rng.standard_normal(dim)
        norm = np.linalg.norm(direction)
        shift = (shift_scale / norm) * direction if shift_scale > 0 and norm > 0 else np.zeros(dim)
        tr_idx = np.sort(np.concatenate(train_parts[i]))
        te_idx = np.sort(np.concatenate(test_parts[i]))
        if len(tr_idx) < 2 or len(te_idx) < 1:
            raise PartitionFailureError(
                f"domain-shift partition left client {i} with too little data; "
                f"reduce num_clients"
            )
        shards.append(
            DatasetShard(
                client_id=i,
                train_features=ds.features[tr_idx] @ rot + shift,
                train_labels=ds.labels[tr_idx].copy(),
                test_features=ds.features[te_idx] @ rot + shift,
                test_labels=ds.labels[te_idx].copy(),
            )
        )
    return shards


def export_labeled_csv(features, labels, path) -> None:
    """Write rows as f0,...,f{k-1},label with repr-exact floats."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise ContractError(
            f"features {features.shape} and labels {labels.shape} are inconsistent"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{k}" for k in range(features.shape[1])] + ["label"])
        for row, lab in zip(features, labels):
            writer.writerow([repr(float(x)) for x in row] + [int(lab)])
