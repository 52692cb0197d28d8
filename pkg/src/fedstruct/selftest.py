"""Built-in property checks behind `fedstruct selftest`.

Each check is a small seeded experiment that must hold by construction
(invariances, exact decompositions, determinism).  Kept fast enough to run
casually; the full test suite under tests/ is the real gate.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .analysis import effective_dimensionality
from .config import ExperimentConfig
from .errors import DegenerateInputError
from .federation import (
    PrototypeSet,
    aggregate_prototypes,
    fixed_hypersphere_prototypes,
)
from .losses import (
    AlignmentKind,
    check_gradient,
    loss_contrastive,
    loss_gcsa,
    loss_rcsa,
    procrustes_decompose,
)
from .runner import run_scenario
from .tensor import random_orthogonal, svd


def _check_gradients():
    rng = np.random.default_rng(2024)
    for name in ("mse", "cosine", "gcsa", "rcsa"):
        for _ in range(3):
            a = rng.standard_normal((5, 4))
            b = rng.standard_normal((5, 4))
            rep = check_gradient(name, a, b)
            assert rep.passed, f"{name} gradient rel err {rep.max_rel_err:.2e}"
    for _ in range(3):
        z = rng.standard_normal((6, 4))
        protos = rng.standard_normal((3, 4))
        labels = rng.integers(0, 3, 6)
        rep = check_gradient(AlignmentKind("contrastive", 0.5), z, protos, labels)
        assert rep.passed, f"contrastive gradient rel err {rep.max_rel_err:.2e}"


def _check_invariances():
    rng = np.random.default_rng(7)
    for _ in range(5):
        p = rng.standard_normal((6, 4))
        q = rng.standard_normal((6, 4))
        base = loss_gcsa(p, q).value
        rot = random_orthogonal(4, rng.integers(1 << 30))
        shift = rng.standard_normal(4)
        scale = float(rng.uniform(0.5, 3.0))
        moved = scale * (p @ rot) + shift
        assert abs(loss_gcsa(moved, q).value - base) < 1e-9, "gcsa rigid invariance"
        rbase = loss_rcsa(p, q).value
        assert abs(loss_rcsa(p @ rot, q).value - rbase) < 1e-9, "rcsa orthogonal invariance"


def _check_procrustes():
    rng = np.random.default_rng(11)
    for _ in range(5):
        z = rng.standard_normal((7, 4))
        p = rng.standard_normal((7, 4))
        dec = procrustes_decompose(z, p)
        assert abs(dec.l_coord - (dec.l_shape + dec.l_rigid)) < 1e-9, "additivity"
        assert dec.l_rigid >= -1e-12, "rigid part nonnegative"


def _check_contrastive_split():
    rng = np.random.default_rng(13)
    z = rng.standard_normal((6, 5))
    protos = rng.standard_normal((4, 5))
    labels = rng.integers(0, 4, 6)
    parts = loss_contrastive(z, protos, labels, 0.5)
    assert abs(parts.total.value - (parts.alignment.value + parts.uniformity.value)) < 1e-12
    assert parts.total.value >= -1e-12, "contrastive total is nonnegative"
    single = loss_contrastive(z, protos[:1], np.zeros(6, dtype=np.int64), 0.5)
    assert abs(single.total.value) < 1e-12, "single prototype cancels exactly"


def _check_aggregation():
    a = PrototypeSet()
    a.set(0, np.array([1.0, 0.0]), 1)
    a.set(2, np.array([0.0, 4.0]), 2)
    b = PrototypeSet()
    b.set(0, np.array([4.0, 0.0]), 3)
    prev = PrototypeSet()
    prev.set(5, np.array([9.0, 9.0]), 7)
    merged = aggregate_prototypes([a, b], previous=prev)
    assert np.allclose(merged.vectors[0], [3.25, 0.0]), "count-weighted mean"
    assert merged.counts[0] == 4
    assert np.allclose(merged.vectors[5], [9.0, 9.0]), "stale retention"


def _check_hypersphere():
    protos = fixed_hypersphere_prototypes(2, 5, 99)
    stacked = protos.stack()
    assert float(stacked[0] @ stacked[1]) <= -1.0 + 1e-6, "antipodal pair"
    norms = np.linalg.norm(stacked, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-12), "unit norms"


def _check_svd():
    rng = np.random.default_rng(17)
    m = rng.standard_normal((12, 7))
    res = svd(m)
    err = np.max(np.abs(res.reconstruct() - m)) / np.max(np.abs(m))
    assert err < 1e-12, f"svd reconstruction error {err:.2e}"
    rank1 = np.outer(np.arange(1.0, 5.0), np.ones(3))
    eff = effective_dimensionality(rank1)
    assert eff.threshold_dim == 1 and abs(eff.participation_ratio - 1.0) < 1e-9


def _tiny_config() -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.dataset.classes = 3
    cfg.dataset.input_dim = 6
    cfg.dataset.samples_per_class = 20
    cfg.partition.clients = 3
    cfg.partition.alpha = 1.0
    cfg.model.hidden_widths = [[], [8]]
    cfg.model.feature_dim = 4
    cfg.training.rounds = 2
    cfg.training.local_epochs = 1
    cfg.training.batch_size = 8
    cfg.seed = 5
    return cfg


def _check_determinism():
    blobs = []
    for _ in range(2):
        run = run_scenario(_tiny_config())
        blobs.append(
            "\n".join(json.dumps(r.to_json_dict(), sort_keys=True) for r in run.reports)
        )
    assert blobs[0] == blobs[1], "seeded runs must be byte-identical"


def _check_degenerate_rejection():
    flat = np.ones((4, 3))
    try:
        loss_gcsa(flat, np.random.default_rng(1).standard_normal((4, 3)))
    except DegenerateInputError:
        pass
    else:
        raise AssertionError("identical rows must be rejected as degenerate")


CHECKS = [
    ("analytic gradients match central differences", _check_gradients),
    ("structural-loss invariances", _check_invariances),
    ("coordinate-loss decomposition", _check_procrustes),
    ("contrastive split identities", _check_contrastive_split),
    ("prototype aggregation", _check_aggregation),
    ("hypersphere prototypes", _check_hypersphere),
    ("svd + effective dimensionality", _check_svd),
    ("deterministic replay", _check_determinism),
    ("degenerate input rejection", _check_degenerate_rejection),
]


def run_selftest(verbose: bool = True) -> int:
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report, don't crash
            failures += 1
            if verbose:
                print(f"FAIL {name}: {exc}")
        else:
            if verbose:
                print(f"ok   {name}")
    if verbose:
        print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return failures
