"""Dense linear-algebra helpers shared by the solvers and the diagnostics.

Matrices are plain ``float64`` numpy arrays.  ``vec`` stacks columns
(column-first), so Kronecker identities read
``kron(B.T, A) @ vec(M) == vec(A @ M @ B)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = np.finfo(np.float64).eps

# Explicit Kronecker operators are only built for tiny problems.
MAX_EXPLICIT_MN = 400


class LinalgError(ValueError):
    """Raised for inputs a routine cannot handle (non-finite, wrong shape, rank deficient)."""


@dataclass(frozen=True)
class SpectralSummary:
    singular_values: np.ndarray
    rank: int
    cond: float

    @property
    def sigma1(self) -> float:
        return float(self.singular_values[0]) if self.singular_values.size else 0.0

    def sigma(self, k: int) -> float:
        """k-th largest singular value, 1-based; zero past the end."""
        if k < 1:
            raise ValueError("k is 1-based")
        if k > self.singular_values.size:
            return 0.0
        return float(self.singular_values[k - 1])


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise LinalgError(f"{name} must be a non-empty 2-D array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise LinalgError(f"{name} has non-finite entries")
    return M


def rank_tolerance(shape: tuple[int, int], sigma1: float) -> float:
    return max(shape) * EPS * sigma1


def summarize(s: np.ndarray, shape: tuple[int, int]) -> SpectralSummary:
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0 or s[0] == 0.0:
        return SpectralSummary(s, 0, float("inf"))
    rank = int(np.count_nonzero(s > rank_tolerance(shape, s[0])))
    return SpectralSummary(s, rank, float(s[0] / s[rank - 1]))


def svd(M) -> tuple[np.ndarray, SpectralSummary, np.ndarray]:
    """Thin SVD ``M = U @ diag(s) @ Vt`` returned as ``(U, summary, Vt)``."""
    M = as_matrix(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return U, summarize(s, M.shape), Vt


def spectrum(M) -> SpectralSummary:
    M = as_matrix(M)
    return summarize(np.linalg.svd(M, compute_uv=False), M.shape)


def left_frame(M, rank: int | None = None) -> np.ndarray:
    """Orthonormal basis of colspan(M), using the numerical rank unless given."""
    U, summary, _ = svd(M)
    k = summary.rank if rank is None else rank
    return U[:, :k]


def random_source(seed: int) -> np.random.Generator:
    """All randomness in the package flows through generators made here."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def gaussian_matrix(rows: int, cols: int, variance: float, rng: np.random.Generator) -> np.ndarray:
    if variance <= 0:
        raise LinalgError("variance must be positive")
    return rng.standard_normal((rows, cols)) * np.sqrt(variance)


def haar_frame(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthonormal columns from the QR factor of a Gaussian matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((rows, cols)))
    return Q * np.sign(np.diag(R))


def orthonormalize(M, allow_rank_deficient: bool = False) -> np.ndarray:
    """Closest matrix with orthonormal columns (polar factor ``U @ Vt``).

    Spans colspan(M) and returns M itself when M already has orthonormal
    columns.  With ``allow_rank_deficient`` the nonzero singular values are
    set to one and the rest dropped, so a rank-k input gives a partial
    isometry with k unit singular values.
    """
    U, summary, Vt = svd(M)
    k = summary.rank
    if k < M.shape[1] and not allow_rank_deficient:
        raise LinalgError(f"matrix has numerical rank {k} < {M.shape[1]} columns")
    return U[:, :k] @ Vt[:k]


def frobenius_norm(M) -> float:
    return float(np.linalg.norm(M, "fro"))


def spectral_norm(M) -> float:
    return float(np.linalg.norm(M, 2))


def vec(M) -> np.ndarray:
    return np.asarray(M).reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape((rows, cols), order="F")


def apply_H(X, Y, R, gram=None) -> np.ndarray:
    """Matrix form of ``((Y Y^T) kron I + I kron (X X^T)) vec(R)``.

    ``gram`` (an n x n symmetric matrix S) gives the data-weighted operator
    ``((S Y Y^T) kron I + S kron (X X^T))`` used for linear networks, whose
    matrix form is ``(R Y Y^T + X X^T R) S``.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    R = np.asarray(R)
    m, n = R.shape
    if X.shape[0] != m or Y.shape[0] != n or X.shape[1] != Y.shape[1]:
        raise LinalgError(f"shape mismatch: X {X.shape}, Y {Y.shape}, R {R.shape}")
    out = (R @ Y) @ Y.T + X @ (X.T @ R)
    if gram is not None:
        out = out @ gram
    return out


def explicit_H(X, Y, gram=None) -> np.ndarray:
    """Materialized mn x mn operator; oracle use only."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    m, n = X.shape[0], Y.shape[0]
    if m * n > MAX_EXPLICIT_MN:
        raise LinalgError(f"refusing to materialize a {m * n} x {m * n} operator")
    YY = Y @ Y.T
    XX = X @ X.T
    if gram is None:
        return np.kron(YY, np.eye(m)) + np.kron(np.eye(n), XX)
    return np.kron(gram @ YY, np.eye(m)) + np.kron(gram, XX)
