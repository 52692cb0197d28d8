"""Alignment losses over prototype/embedding matrices, with analytic gradients.

Five losses are provided.  Two compare coordinates directly (mse, cosine),
two compare second-order structure and are therefore invariant to rigid
motions of the representation space (gcsa over centered Gram matrices, rcsa
over pairwise-distance descriptors), and one is a prototype-anchored
contrastive loss that decomposes exactly into alignment + uniformity parts.

Gradients are always with respect to the FIRST argument (the trainable side);
the second argument is treated as a frozen target.  All gradients are derived
by hand and validated against central differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError
from .tensor import (
    EPS_NORM,
    as_matrix,
    center_rows,
    normalize_rows,
    svd,
)

# A matrix whose centered rows have Frobenius norm at or below
# GRAM_DEGENERATE_RTOL * max(1, ||P||_F) has no usable Gram structure
# (identical rows leave only round-off after centering, and near-zero Gram
# norms make the gradient blow up as 1/||K||).
GRAM_DEGENERATE_RTOL = 1e-10
# Distance descriptors with l2 norm at or below this are collapsed.
RDM_DEGENERATE_TOL = 1e-12

PAIRWISE_LOSSES = ("mse", "cosine", "gcsa", "rcsa")
KNOWN_LOSSES = PAIRWISE_LOSSES + ("contrastive",)


@dataclass(frozen=True)
class AlignmentKind:
    """A validated loss selector: one of mse/cosine/gcsa/rcsa/contrastive."""

    name: str
    temperature: float | None = None

    def __post_init__(self):
        if self.name not in KNOWN_LOSSES:
            raise ContractError(
                f"unknown alignment loss {self.name!r}; expected one of {KNOWN_LOSSES}"
            )
        if self.name == "contrastive":
            if self.temperature is None or not (self.temperature > 0.0):
                raise ContractError(
                    f"contrastive needs temperature > 0, got {self.temperature!r}"
                )
        elif self.temperature is not None:
            raise ContractError(f"temperature is only meaningful for contrastive")

    @property
    def is_structural(self) -> bool:
        return self.name in ("gcsa", "rcsa")

    @classmethod
    def parse(cls, text: str, temperature: float = 0.5) -> "AlignmentKind":
        name = str(text).strip().lower()
        if name == "contrastive":
            return cls(name, float(temperature))
        return cls(name)


@dataclass(frozen=True)
class LossValue:
    """A scalar loss and its gradient with respect to the first argument."""

    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class ContrastiveParts:
    """Exact decomposition total = alignment + uniformity (gradients included)."""

    total: LossValue
    alignment: LossValue
    uniformity: LossValue


@dataclass(frozen=True)
class ProcrustesDecomposition:
    """Split of the row-normalized coordinate loss into shape + rigid parts.

    l_coord = ||Z^ - P^||_F^2 equals l_shape + l_rigid exactly, where
    l_shape = ||Z^ - P^ R*||_F^2 under the best orthogonal R* and
    l_rigid >= 0 is the part an orthogonal transform can remove.
    """

    l_coord: float
    l_shape: float
    l_rigid: float
    rotation: np.ndarray


@dataclass(frozen=True)
class GradientCheckReport:
    loss_name: str
    max_rel_err: float
    max_abs_err: float
    tolerance: float
    passed: bool


def _check_pair(a, b, same_cols: bool):
    a = as_matrix(a, "first matrix")
    b = as_matrix(b, "second matrix")
    if a.shape[0] != b.shape[0]:
        raise ContractError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    if same_cols and a.shape[1] != b.shape[1]:
        raise ContractError(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def loss_mse(a, b) -> LossValue:
    """Mean (over rows) squared Frobenius error; grad = 2(A-B)/n."""
    a, b = _check_pair(a, b, same_cols=True)
    diff = a - b
    n = a.shape[0]
    return LossValue(float(np.sum(diff * diff)) / n, 2.0 * diff / n)


def loss_cosine(a, b) -> LossValue:
    """Mean (1 - cosine) over paired rows; zero rows are degenerate."""
    a, b = _check_pair(a, b, same_cols=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    for name, norms in (("first matrix", na), ("second matrix", nb)):
        bad = np.nonzero(norms <= EPS_NORM)[0]
        if bad.size:
            raise DegenerateInputError(
                f"{name} row {int(bad[0])} has near-zero norm {norms[bad[0]]:.3e}"
            )
    ah = a / na[:, None]
    bh = b / nb[:, None]
    cos = np.sum(ah * bh, axis=1)
    n = a.shape[0]
    value = float(np.mean(1.0 - cos))
    # d(1 - cos_i)/da_i = -(b^_i - cos_i a^_i)/||a_i||
    grad = -(bh - cos[:, None] * ah) / (n * na[:, None])
    return LossValue(value, grad)


def _centered_or_degenerate(m, name):
    c = center_rows(m)
    scale = max(1.0, float(np.linalg.norm(m)))
    cn = float(np.linalg.norm(c))
    if cn <= GRAM_DEGENERATE_RTOL * scale:
        raise DegenerateInputError(
            f"{name} rows are (numerically) identical: centered norm "
            f"{cn:.3e} vs scale {scale:.3e}"
        )
    return c


def loss_gcsa(p, q) -> LossValue:
    """Gram cosine structural loss: 1 - <K_P, K_Q> / (||K_P|| ||K_Q||).

    K is the centered Gram matrix, so the value is invariant to translation,
    rotation/reflection, and positive rescaling of either argument.  Column
    counts of p and q may differ; row counts must match and be >= 2.
    """
    p, q = _check_pair(p, q, same_cols=False)
    if p.shape[0] < 2:
        raise DegenerateInputError(f"need >= 2 rows, got {p.shape[0]}")
    pc = _centered_or_degenerate(p, "first matrix")
    qc = _centered_or_degenerate(q, "second matrix")
    kp = pc @ pc.T
    kq = qc @ qc.T
    s = float(np.sum(kp * kq))
    f = float(np.linalg.norm(kp))
    g = float(np.linalg.norm(kq))
    value = max(0.0, 1.0 - s / (f * g))
    # dL/dK_P = (s / f^3 g) K_P - K_Q / (f g); then dK_P pulled back through
    # K_P = C P (C P)^T with C the (symmetric, idempotent) centering map.
    gk = (s / (f ** 3 * g)) * kp - kq / (f * g)
    grad = 2.0 * center_rows(gk @ pc)
    return LossValue(value, grad)


def loss_rcsa(p, q) -> LossValue:
    """Distance-descriptor cosine structural loss.

    Rows are l2-normalized, the upper-triangular vector of squared pairwise
    distances is the descriptor, and the loss is 1 - cos(u, v).  Invariant to
    orthogonal transforms of either argument; translations change it.
    """
    p, q = _check_pair(p, q, same_cols=False)
    n = p.shape[0]
    if n < 2:
        raise DegenerateInputError(f"need >= 2 rows, got {n}")
    ph = normalize_rows(p, "first matrix")
    qh = normalize_rows(q, "second matrix")
    iu = np.triu_indices(n, k=1)

    def descriptor(mh):
        d = 2.0 - 2.0 * (mh @ mh.T)
        np.clip(d, 0.0, None, out=d)
        return d[iu]

    u = descriptor(ph)
    v = descriptor(qh)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= RDM_DEGENERATE_TOL:
        raise DegenerateInputError(f"first matrix distance descriptor collapsed (|u|={nu:.3e})")
    if nv <= RDM_DEGENERATE_TOL:
        raise DegenerateInputError(f"second matrix distance descriptor collapsed (|v|={nv:.3e})")
    cu = float(np.dot(u, v))
    value = max(0.0, 1.0 - cu / (nu * nv))
    # dL/du, scattered back into a symmetric weight matrix over pairs
    du = (cu / (nu ** 3 * nv)) * u - v / (nu * nv)
    w = np.zeros((n, n))
    w[iu] = du
    w = w + w.T
    # d u_ij / d ph_i = 2 (ph_i - ph_j)  =>  grad wrt ph = 2 (diag(W 1) - W) ph
    lap = np.diag(w.sum(axis=1)) - w
    grad_ph = 2.0 * (lap @ ph)
    # pull back through row normalization: project out the radial component
    radial = np.sum(grad_ph * ph, axis=1, keepdims=True)
    grad = (grad_ph - radial * ph) / np.linalg.norm(p, axis=1)[:, None]
    return LossValue(value, grad)


def loss_contrastive(z, prototypes, labels, temperature: float) -> ContrastiveParts:
    """Prototype-anchored contrastive loss with its exact two-term split.

    total_i = -cos(z_i, P_{y_i})/tau + log sum_j exp(cos(z_i, P_j)/tau),
    averaged over rows.  The first term (alignment) pulls each embedding to
    its class prototype; the second (uniformity) pushes away from all
    prototypes.  With a single prototype the two cancel exactly.  Gradients
    are with respect to z.
    """
    z = as_matrix(z, "embeddings")
    prototypes = as_matrix(prototypes, "prototypes")
    if z.shape[1] != prototypes.shape[1]:
        raise ContractError(
            f"embedding dim {z.shape[1]} != prototype dim {prototypes.shape[1]}"
        )
    if not (temperature > 0.0) or not np.isfinite(temperature):
        raise ContractError(f"temperature must be positive and finite, got {temperature!r}")
    labels = np.asarray(labels)
    if labels.shape != (z.shape[0],):
        raise ContractError(f"labels shape {labels.shape} != ({z.shape[0]},)")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractError(f"labels must be integers, got dtype {labels.dtype}")
    c = prototypes.shape[0]
    if labels.min() < 0 or labels.max() >= c:
        raise ContractError(f"labels must lie in [0, {c}), got range "
                            f"[{int(labels.min())}, {int(labels.max())}]")

    nz = np.linalg.norm(z, axis=1)
    bad = np.nonzero(nz <= EPS_NORM)[0]
    if bad.size:
        raise DegenerateInputError(f"embedding row {int(bad[0])} has near-zero norm")
    zh = z / nz[:, None]
    ph = normalize_rows(prototypes, "prototypes")

    n = z.shape[0]
    sims = zh @ ph.T  # (n, c) cosines in [-1, 1]
    scaled = sims / temperature
    shift = scaled.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.sum(np.exp(scaled - shift), axis=1))
    picked = sims[np.arange(n), labels]

    align_val = float(np.mean(-picked / temperature))
    unif_val = float(np.mean(lse))
    total_val = align_val + unif_val

    # d cos(z_i, P_j) / d z_i = (ph_j - sims_ij zh_i) / ||z_i||
    inv = 1.0 / (n * temperature)
    ga = -inv * (ph[labels] - picked[:, None] * zh) / nz[:, None]
    probs = np.exp(scaled - shift)
    probs /= probs.sum(axis=1, keepdims=True)
    mix = probs @ ph
    mix_sim = np.sum(probs * sims, axis=1)
    gu = inv * (mix - mix_sim[:, None] * zh) / nz[:, None]

    return ContrastiveParts(
        total=LossValue(total_val, ga + gu),
        alignment=LossValue(align_val, ga),
        uniformity=LossValue(unif_val, gu),
    )


def pairwise_loss(kind: AlignmentKind | str, a, b) -> LossValue:
    """Dispatch one of the pairwise losses (everything except contrastive)."""
    name = kind.name if isinstance(kind, AlignmentKind) else str(kind)
    if name == "mse":
        return loss_mse(a, b)
    if name == "cosine":
        return loss_cosine(a, b)
    if name == "gcsa":
        return loss_gcsa(a, b)
    if name == "rcsa":
        return loss_rcsa(a, b)
    raise ContractError(f"{name!r} is not a pairwise loss")


def procrustes_decompose(z, p) -> ProcrustesDecomposition:
    """Split the row-normalized coordinate loss into shape + rigid parts.

    Both inputs are row-normalized; R* = U V^T from the SVD of P^^T Z^ is the
    orthogonal transform minimizing ||Z^ - P^ R||_F.  The returned parts
    satisfy l_coord = l_shape + l_rigid exactly and l_rigid >= 0.
    """
    z, p = _check_pair(z, p, same_cols=True)
    zh = normalize_rows(z, "first matrix")
    ph = normalize_rows(p, "second matrix")
    res = svd(ph.T @ zh)
    r = res.left_factor @ res.right_factor.T
    pr = ph @ r
    l_coord = float(np.sum((zh - ph) ** 2))
    l_shape = float(np.sum((zh - pr) ** 2))
    l_rigid = 2.0 * float(np.sum(zh * pr) - np.sum(zh * ph))
    return ProcrustesDecomposition(l_coord, l_shape, l_rigid, r)


def numerical_gradient(f, x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x (same shape as x)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += step
        xm[idx] -= step
        grad[idx] = (f(xp) - f(xm)) / (2.0 * step)
        it.iternext()
    return grad


def check_gradient(kind, *args, step: float = 1e-5, tolerance: float = 1e-4) -> GradientCheckReport:
    """Validate an analytic gradient against central differences.

    For pairwise losses pass (a, b); for contrastive pass (z, prototypes,
    labels) and the total-loss gradient is checked.  The error measure is
    max|ga - gn| / max(max|gn|, 1e-12).
    """
    kind = kind if isinstance(kind, AlignmentKind) else AlignmentKind.parse(kind)
    if kind.name == "contrastive":
        z, protos, labels = args
        analytic = loss_contrastive(z, protos, labels, kind.temperature).total.grad
        fn = lambda x: loss_contrastive(x, protos, labels, kind.temperature).total.value
        base = np.asarray(z, dtype=np.float64)
    else:
        a, b = args
        analytic = pairwise_loss(kind, a, b).grad
        fn = lambda x: pairwise_loss(kind, x, b).value
        base = np.asarray(a, dtype=np.float64)
    numerical = numerical_gradient(fn, base, step=step)
    abs_err = float(np.max(np.abs(analytic - numerical)))
    rel_err = abs_err / max(float(np.max(np.abs(numerical))), 1e-12)
    return GradientCheckReport(
        loss_name=kind.name,
        max_rel_err=rel_err,
        max_abs_err=abs_err,
        tolerance=tolerance,
        passed=bool(rel_err <= tolerance),
    )
