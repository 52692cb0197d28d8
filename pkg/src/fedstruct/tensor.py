"""Dense matrix kernel: validation, factorizations, row-geometry helpers.

All public functions take and return plain float64 numpy arrays.  Inputs are
validated against the operation contracts and rejected with ContractError /
DegenerateInputError rather than silently propagating NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError, NumericFailureError

# Row norms at or below this are treated as zero when normalizing.
EPS_NORM = 1e-12


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and return `m` as a finite 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


def frob_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product <A, B> = sum_ij A_ij B_ij."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def frob_norm(a: np.ndarray) -> float:
    a = as_matrix(a, "a")
    return float(np.linalg.norm(a))


def center_rows(m: np.ndarray) -> np.ndarray:
    """Subtract the mean row: output columns each sum to zero."""
    m = as_matrix(m)
    return m - m.mean(axis=0, keepdims=True)


def normalize_rows(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Scale each row to unit l2 norm; zero rows are rejected."""
    m = as_matrix(m, name)
    norms = np.linalg.norm(m, axis=1)
    bad = np.nonzero(norms <= EPS_NORM)[0]
    if bad.size:
        raise DegenerateInputError(
            f"{name} row {int(bad[0])} has norm {norms[bad[0]]:.3e} <= {EPS_NORM}"
        )
    return m / norms[:, None]


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.linalg.norm(as_matrix(m), axis=1)


def gram_centered(m: np.ndarray) -> np.ndarray:
    """Centered Gram matrix K = C(M) C(M)^T; symmetric PSD, rows/cols sum to 0."""
    m = as_matrix(m)
    if m.shape[0] < 2:
        raise DegenerateInputError(
            f"centered Gram needs at least 2 rows, got {m.shape[0]}"
        )
    c = center_rows(m)
    k = c @ c.T
    return 0.5 * (k + k.T)


def rdm_squared(m: np.ndarray) -> np.ndarray:
    """Squared pairwise distances of row-normalized rows, i<j row-major vector.

    Length n(n-1)/2.  Entries lie in [0, 4] for unit rows; tiny negative
    round-off is clamped to zero.
    """
    m = as_matrix(m)
    if m.shape[0] < 2:
        raise DegenerateInputError(f"pairwise descriptor needs >= 2 rows, got {m.shape[0]}")
    mh = normalize_rows(m)
    d = 2.0 - 2.0 * (mh @ mh.T)
    np.clip(d, 0.0, None, out=d)
    iu = np.triu_indices(m.shape[0], k=1)
    return d[iu]


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD A = U diag(s) V^T with s sorted descending and s >= 0."""

    singular_values: np.ndarray  # (k,)
    left_factor: np.ndarray  # (n, k), orthonormal columns
    right_factor: np.ndarray  # (d, k), orthonormal columns

    def reconstruct(self) -> np.ndarray:
        return (self.left_factor * self.singular_values) @ self.right_factor.T


def svd(m: np.ndarray) -> SvdResult:
    """Thin SVD with a deterministic sign convention.

    Each (u_k, v_k) pair is jointly flipped so the largest-magnitude entry of
    u_k is positive; U diag(s) V^T is unchanged by joint flips.
    """
    m = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - numpy rarely fails
        raise NumericFailureError(f"SVD failed on shape {m.shape}: {exc}") from exc
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s)) and np.all(np.isfinite(vt))):
        raise NumericFailureError(f"SVD produced non-finite factors on shape {m.shape}")
    v = vt.T
    # sign fix: pivot on the largest-|entry| of each left singular vector
    pivot = np.abs(u).argmax(axis=0)
    signs = np.where(u[pivot, np.arange(u.shape[1])] < 0.0, -1.0, 1.0)
    return SvdResult(singular_values=s, left_factor=u * signs, right_factor=v * signs)


def random_orthogonal(dim: int, seed) -> np.ndarray:
    """Seeded random orthogonal matrix (QR of a Gaussian, sign-fixed).

    Columns are flipped so the result's own diagonal is nonnegative; column
    sign flips preserve orthogonality, the draw is deterministic, and dim=1
    always yields [[1.0]].
    """
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise ContractError(f"dim must be a positive int, got {dim!r}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, dim))
    q, _ = np.linalg.qr(g)
    return q * np.where(np.diag(q) < 0.0, -1.0, 1.0)
