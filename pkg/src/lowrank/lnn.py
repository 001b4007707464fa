"""Two-layer linear networks ``min 1/2 ||X Y^T D - LBL||_F^2`` under exact interpolation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import TheoryBound
from .init import ConfigError, colspan_leakage, interior_spectrum
from .linalg import as_matrix, gaussian_matrix, haar_frame, random_source, rank_tolerance, svd


@dataclass(frozen=True, eq=False)
class LinearNetworkProblem:
    D: np.ndarray  # n x N inputs
    LBL: np.ndarray  # m x N labels
    A_gen: np.ndarray  # m x n, LBL = A_gen @ D
    r: int  # rank(LBL)
    U_L: np.ndarray  # left frame of LBL, m x r
    U_D: np.ndarray  # left frame of D, n x rank(D)
    D_singular_values: np.ndarray
    gram: np.ndarray  # D D^T
    LDt: np.ndarray  # LBL D^T

    kind = "lnn"

    @classmethod
    def from_data(cls, D, A_gen) -> LinearNetworkProblem:
        D = as_matrix(D, "D")
        A_gen = as_matrix(A_gen, "A_gen")
        if A_gen.shape[1] != D.shape[0]:
            raise ConfigError(f"A_gen {A_gen.shape} incompatible with D {D.shape}")
        LBL = A_gen @ D
        UL, sl, _ = svd(LBL)
        UD, sd, _ = svd(D)
        if sd.rank == 0 or sl.rank == 0:
            raise ConfigError("data and labels must be nonzero")
        return cls(D, LBL, A_gen, sl.rank, UL[:, : sl.rank], UD[:, : sd.rank],
                   sd.singular_values, D @ D.T, LBL @ D.T)

    @property
    def shape(self) -> tuple[int, int]:
        """Factor row counts (m, n): X is m x d, Y is n x d."""
        return self.LBL.shape[0], self.D.shape[0]

    @property
    def rank_D(self) -> int:
        return self.U_D.shape[1]

    @property
    def lam_max(self) -> float:
        return float(self.D_singular_values[0] ** 2)

    @property
    def lam_min(self) -> float:
        """Smallest nonzero eigenvalue of D D^T."""
        return float(self.D_singular_values[self.rank_D - 1] ** 2)

    @property
    def sigma_min_D(self) -> float:
        return float(self.D_singular_values[self.rank_D - 1])

    @property
    def kappa(self) -> float:
        return self.lam_max / self.lam_min

    @property
    def cond_labels(self) -> float:
        s = np.linalg.svd(self.LBL, compute_uv=False)
        return float(s[0] / s[self.r - 1])

    @property
    def cond_A_gen(self) -> float:
        s = np.linalg.svd(self.A_gen, compute_uv=False)
        tol = rank_tolerance(self.A_gen.shape, s[0])
        return float(s[0] / s[s > tol][-1])

    @property
    def target(self) -> np.ndarray:
        return self.LBL

    @property
    def target_norm(self) -> float:
        return float(np.linalg.norm(self.LBL))

    @property
    def data(self) -> np.ndarray:
        return self.D

    def residual(self, X, Y) -> np.ndarray:
        return (X @ Y.T) @ self.D - self.LBL

    def project(self, R) -> np.ndarray:
        return R @ self.D.T

    def loss(self, X, Y) -> float:
        R = self.residual(X, Y)
        return 0.5 * float(np.sum(R * R))

    def interpolation_error(self) -> float:
        """Relative mismatch of LBL against A_gen @ D."""
        return float(np.linalg.norm(self.A_gen @ self.D - self.LBL) / np.linalg.norm(self.LBL))


def make_lnn_problem(m, n, N, rank_D=5, sigma1_D=1.0, sigmar_D=0.5, seed=0) -> LinearNetworkProblem:
    """``D = U diag(s) V^T`` with orthonormal U (n x k) and Gaussian V (N x k), labels ``A_gen D``."""
    if min(m, n, N) < 1 or not 1 <= rank_D <= min(n, N):
        raise ConfigError(f"invalid dimensions m={m} n={n} N={N} rank_D={rank_D}")
    if not sigma1_D >= sigmar_D > 0:
        raise ConfigError("need sigma1_D >= sigmar_D > 0")
    rng = random_source(seed)
    U = haar_frame(n, rank_D, rng)
    V = gaussian_matrix(N, rank_D, 1.0 / N, rng)
    s = interior_spectrum(rank_D, sigma1_D, sigmar_D)
    D = (U * s) @ V.T
    A_gen = gaussian_matrix(m, n, 1.0 / n, rng)
    return LinearNetworkProblem.from_data(D, A_gen)


def tilde_constants(X0, k: int, problem: LinearNetworkProblem) -> tuple[float, float]:
    """(L~, mu~) = (sigma_1^2(X0) lam_max, sigma_k^2(X0) lam_min)."""
    s = np.linalg.svd(X0, compute_uv=False)
    sk = s[k - 1] if k <= s.size else 0.0
    return float(s[0] ** 2 * problem.lam_max), float(sk**2 * problem.lam_min)


def premise_scale(X0, k: int, problem: LinearNetworkProblem) -> float:
    """Smallest factor s such that ``s * X0`` satisfies the linear-network premise.

    p is invariant to the scale of X0 and mu~ grows like s^2, so the
    inequality ``mu~ p >= 4 sqrt(2) ||L D^T||_F (1 + p)`` solves in closed form.
    """
    Lt, mut = tilde_constants(X0, k, problem)
    if mut <= 0:
        raise ConfigError("X0 has sigma_k = 0; no scaling satisfies the premise")
    p = math.sqrt(mut / Lt) / 144.0
    rhs = 4.0 * math.sqrt(2.0) * float(np.linalg.norm(problem.LDt)) * (1.0 + p)
    return math.sqrt(rhs / (mut * p))


@dataclass(frozen=True)
class PremiseReport:
    leakage: float  # ||(I - P_X0) LBL||_F
    lhs: float  # mu~ p
    rhs: float  # 4 sqrt(2) ||L D^T||_F (1 + p)
    p: float
    L_tilde: float
    mu_tilde: float
    min_scale: float  # factor on X0 that makes lhs == rhs
    min_c: float

    @property
    def satisfied(self) -> bool:
        return self.lhs >= self.rhs


def check_thm3_premise(init, problem: LinearNetworkProblem) -> PremiseReport:
    k = init.rank_index
    U, summary, _ = svd(init.X0)
    frame = U[:, : max(summary.rank, 1)]
    Lt, mut = tilde_constants(init.X0, k, problem)
    p = math.sqrt(mut / Lt) / 144.0 if mut > 0 else 0.0
    rhs = 4.0 * math.sqrt(2.0) * float(np.linalg.norm(problem.LDt)) * (1.0 + p)
    scale = premise_scale(init.X0, k, problem) if mut > 0 else math.inf
    return PremiseReport(colspan_leakage(problem.LBL, frame), mut * p, rhs, p, Lt, mut,
                         scale, init.c * scale)


@dataclass(frozen=True)
class CorollaryRate:
    scheme: str
    bound: TheoryBound
    iterations: float  # order-of-magnitude T with unit constant
    cond_X0: float


def corollary_rate(scheme, problem: LinearNetworkProblem, d, tau, cond_X0=None, eps=1e-8,
                   sigma_r_X0=None) -> CorollaryRate:
    """Per-iteration NAG rate and iteration estimate for the three width regimes.

    ``cond_X0`` is the measured cond(X0) for lnn-1/lnn-3 (lnn-2 is exactly 1).
    ``sigma_r_X0`` only feeds the residual-bound prefactor; NaN when omitted.
    """
    m = problem.shape[0]
    r = problem.r
    root_kappa = math.sqrt(problem.lam_max / problem.lam_min)
    log_term = math.log(1.0 / eps)
    if scheme == "lnn-1":
        if d < r:
            raise ConfigError(f"lnn-1 needs d >= r={r}")
        width = d * problem.cond_labels / (tau * (d - r + 1))
    elif scheme == "lnn-2":
        if d < r:
            raise ConfigError(f"lnn-2 needs d >= r={r}")
        width = 1.0
        cond_X0 = 1.0
    elif scheme == "lnn-3":
        if d < m:
            raise ConfigError(f"lnn-3 needs d >= m={m}")
        width = d / (tau * (d - m + 1))
    else:
        raise ConfigError(f"unknown linear-network scheme {scheme!r}")
    if cond_X0 is None:
        raise ConfigError(f"{scheme} needs a measured cond(X0)")
    rate = 1.0 - 1.0 / (2.0 * cond_X0 * root_kappa)
    prefactor = math.nan if sigma_r_X0 is None else sigma_r_X0**2 * problem.sigma_min_D / 576.0
    bound = TheoryBound(rate, prefactor, "lnn-thm3")
    return CorollaryRate(scheme, bound, width * root_kappa * log_term, cond_X0)
