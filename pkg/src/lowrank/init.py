"""Problem instances, unbalanced initializations and their threshold constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    LinalgError,
    SpectralSummary,
    as_matrix,
    gaussian_matrix,
    haar_frame,
    orthonormalize,
    random_source,
    rank_tolerance,
    svd,
)

MF_SCHEMES = ("mf-sketch", "mf-general")
LNN_SCHEMES = ("lnn-1", "lnn-2", "lnn-3")
SCHEMES = MF_SCHEMES + LNN_SCHEMES


class ConfigError(ValueError):
    pass


def interior_spectrum(r: int, sigma1: float, sigma_r: float, profile="geometric") -> np.ndarray:
    """r singular values running from sigma1 down to sigma_r.

    ``profile`` is "geometric", "linear", or a callable mapping
    ``(r, sigma1, sigma_r)`` to the r values.
    """
    if callable(profile):
        s = np.asarray(profile(r, sigma1, sigma_r), dtype=np.float64)
    elif r == 1:
        s = np.array([sigma1])
    elif profile == "geometric":
        s = np.geomspace(sigma1, sigma_r, r)
    elif profile == "linear":
        s = np.linspace(sigma1, sigma_r, r)
    else:
        raise ConfigError(f"unknown spectrum profile {profile!r}")
    if s.shape != (r,) or np.any(np.diff(s) > 0) or s[-1] <= 0:
        raise ConfigError("spectrum must be r positive values in descending order")
    return s


@dataclass(frozen=True, eq=False)
class FactorizationProblem:
    """Target ``A`` of exact rank ``r`` with its cached thin SVD."""

    A: np.ndarray
    r: int
    U: np.ndarray  # left singular frame, m x r
    s: np.ndarray  # all min(m, n) singular values
    Vt: np.ndarray  # r x n

    kind = "mf"

    @classmethod
    def from_matrix(cls, A, r: int | None = None, check: bool = True) -> FactorizationProblem:
        A = as_matrix(A, "A")
        U, summary, Vt = svd(A)
        if r is None:
            r = summary.rank
        if check:
            if not 1 <= r <= min(A.shape):
                raise ConfigError(f"rank {r} outside [1, {min(A.shape)}]")
            if summary.rank != r:
                raise ConfigError(f"A has numerical rank {summary.rank}, expected {r}")
        return cls(A, r, U[:, :r], summary.singular_values, Vt[:r])

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    @property
    def spectrum(self) -> SpectralSummary:
        return SpectralSummary(self.s, self.r, self.kappa)

    @property
    def sigma1(self) -> float:
        return float(self.s[0])

    @property
    def sigma_r(self) -> float:
        return float(self.s[self.r - 1])

    @property
    def kappa(self) -> float:
        return self.sigma1 / self.sigma_r if self.sigma_r > 0 else math.inf

    @property
    def fro(self) -> float:
        return float(np.linalg.norm(self.A))

    @property
    def target(self) -> np.ndarray:
        return self.A

    @property
    def target_norm(self) -> float:
        return self.fro

    gram = None
    data = None

    def residual(self, X, Y) -> np.ndarray:
        return X @ Y.T - self.A

    def project(self, R) -> np.ndarray:
        return R

    def loss(self, X, Y) -> float:
        R = self.residual(X, Y)
        return 0.5 * float(np.sum(R * R))


def make_mf_problem(m, n, r, sigma1=1.0, sigma_r=0.2, spectrum_profile="geometric", seed=0):
    """Random ``A = U diag(s) V^T`` with Haar-like frames and pinned extreme singular values."""
    if not (1 <= r <= min(m, n)):
        raise ConfigError(f"need 1 <= r <= min(m, n), got m={m} n={n} r={r}")
    if not sigma1 >= sigma_r > 0:
        raise ConfigError("need sigma1 >= sigma_r > 0")
    rng = random_source(seed)
    U = haar_frame(m, r, rng)
    V = haar_frame(n, r, rng)
    s = interior_spectrum(r, sigma1, sigma_r, spectrum_profile)
    return FactorizationProblem.from_matrix((U * s) @ V.T, r)


@dataclass(frozen=True)
class InitConfig:
    scheme: str = "mf-sketch"
    d: int = 10
    c: float | str = "default"  # number, "default" (50 sqrt(d)), or "auto"
    c2: float = 0.0
    seed: int = 0
    tau: float = 0.1  # only used by c="auto"
    auto_method: str = "gd"  # which threshold "auto" resolves to

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if isinstance(self.c, str):
            if self.c not in ("default", "auto"):
                raise ConfigError(f"c must be a positive number, 'default' or 'auto', got {self.c!r}")
        elif not self.c > 0:
            raise ConfigError("c must be positive")
        if self.c2 < 0:
            raise ConfigError("c2 must be nonnegative")
        if self.c2 > 0 and self.scheme != "mf-general":
            raise ConfigError("c2 only applies to the mf-general scheme")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")

    def resolved_c(self) -> float | None:
        if self.c == "default":
            return 50.0 * math.sqrt(self.d)
        if self.c == "auto":
            return None
        return float(self.c)


@dataclass(frozen=True, eq=False)
class InitOutcome:
    X0: np.ndarray
    Y0: np.ndarray
    spectrum: SpectralSummary  # of X0
    rank_index: int  # which singular value defines mu (r, or m for lnn-3)
    c: float
    scheme: str
    seed: int
    extras: dict = field(default_factory=dict)

    @property
    def L(self) -> float:
        return self.spectrum.sigma1**2

    @property
    def mu(self) -> float:
        return self.spectrum.sigma(self.rank_index) ** 2

    @property
    def cond(self) -> float:
        return math.sqrt(self.L / self.mu) if self.mu > 0 else math.inf

    @property
    def d(self) -> int:
        return self.X0.shape[1]


def _outcome(X0, Y0, k, c, cfg, **extras) -> InitOutcome:
    _, summary, _ = svd(X0)
    return InitOutcome(X0, Y0, summary, k, c, cfg.scheme, cfg.seed, extras)


def _unit_sketch(problem: FactorizationProblem, d: int, rng) -> np.ndarray:
    n = problem.shape[1]
    return problem.A @ gaussian_matrix(n, d, 1.0 / d, rng)


def _resolve_auto(problem, cfg, unit_cond: float) -> float:
    if cfg.auto_method == "nag":
        return c_threshold_nag(problem, cfg.d, cfg.tau)
    return c_threshold_gd(problem, cfg.d, cfg.tau, unit_cond)


def init_mf(problem: FactorizationProblem, cfg: InitConfig) -> InitOutcome:
    """Sketch initialization ``X0 = c A Phi``, ``Y0 = 0``."""
    if cfg.scheme != "mf-sketch":
        raise ConfigError(f"init_mf needs scheme mf-sketch, got {cfg.scheme}")
    return _init_mf_common(problem, cfg, c2=0.0)


def init_mf_general(problem: FactorizationProblem, cfg: InitConfig) -> InitOutcome:
    """``X0 = c A Phi1`` with ``Phi1 ~ N(0, 1/d)``, ``Y0 = c2 Phi2`` with ``Phi2 ~ N(0, 1/n)``."""
    if cfg.scheme != "mf-general":
        raise ConfigError(f"init_mf_general needs scheme mf-general, got {cfg.scheme}")
    return _init_mf_common(problem, cfg, c2=cfg.c2)


def _init_mf_common(problem, cfg, c2):
    if cfg.d < problem.r:
        raise ConfigError(f"d={cfg.d} below rank r={problem.r}")
    rng = random_source(cfg.seed)
    unit = _unit_sketch(problem, cfg.d, rng)
    n = problem.shape[1]
    # Phi2 is drawn after Phi1 from the same stream, so c2 = 0 reproduces mf-sketch exactly.
    Y0 = c2 * gaussian_matrix(n, cfg.d, 1.0 / n, rng) if c2 > 0 else np.zeros((n, cfg.d))
    c = cfg.resolved_c()
    extras = {}
    if c is None:
        unit_cond = _outcome(unit, Y0, problem.r, 1.0, cfg).cond
        c = _resolve_auto(problem, cfg, unit_cond)
        extras["c_threshold"] = c
    return _outcome(c * unit, Y0, problem.r, c, cfg, **extras)


def init_lnn(problem, cfg: InitConfig) -> InitOutcome:
    """Linear-network initializations; ``Y0 = 0`` for all three.

    lnn-1: ``c L Phi``; lnn-2: ``c Orth(L Phi)``; lnn-3: ``c Phi`` with d >= m.
    """
    m, N = problem.LBL.shape
    n = problem.D.shape[0]
    r = problem.r
    rng = random_source(cfg.seed)
    Y0 = np.zeros((n, cfg.d))
    if cfg.scheme in ("lnn-1", "lnn-2"):
        if cfg.d < r:
            raise ConfigError(f"{cfg.scheme} needs d >= r={r}, got {cfg.d}")
        unit = problem.LBL @ gaussian_matrix(N, cfg.d, 1.0 / cfg.d, rng)
        if cfg.scheme == "lnn-2":
            unit = orthonormalize(unit, allow_rank_deficient=True)
        k = r
    elif cfg.scheme == "lnn-3":
        if cfg.d < m:
            raise ConfigError(f"lnn-3 needs d >= m={m}, got {cfg.d}")
        unit = gaussian_matrix(m, cfg.d, 1.0 / cfg.d, rng)
        k = m
    else:
        raise ConfigError(f"init_lnn cannot handle scheme {cfg.scheme}")
    c = cfg.resolved_c()
    extras = {}
    if c is None:
        from .lnn import premise_scale

        c = 2.0 * premise_scale(unit, k, problem)
        extras["c_threshold"] = c / 2.0
    return _outcome(c * unit, Y0, k, c, cfg, **extras)


def initialize(problem, cfg: InitConfig) -> InitOutcome:
    if cfg.scheme == "mf-sketch":
        return init_mf(problem, cfg)
    if cfg.scheme == "mf-general":
        return init_mf_general(problem, cfg)
    return init_lnn(problem, cfg)


def c_threshold_gd(problem: FactorizationProblem, d: int, tau: float, cond_X0: float) -> float:
    """Smallest c covered by the GD rate guarantee (needs cond(X0) > 1)."""
    r = problem.r
    if tau <= 0:
        raise ConfigError("tau must be positive")
    if d < r:
        raise ConfigError("d must be >= r")
    if not cond_X0 > 1:
        raise ConfigError("threshold is singular for cond(X0) <= 1")
    gap = math.sqrt(d) - math.sqrt(r - 1)
    lead = math.sqrt(d) * problem.sigma_r / (12.0 * tau * gap)
    return lead * math.sqrt(cond_X0**4 * problem.fro / (cond_X0**2 - 1.0))


def c_threshold_nag(problem: FactorizationProblem, d: int, tau: float) -> float:
    r = problem.r
    if tau <= 0:
        raise ConfigError("tau must be positive")
    if d < r:
        raise ConfigError("d must be >= r")
    gap = math.sqrt(d) - math.sqrt(r - 1)
    num = d * (2.0 * math.sqrt(d) + math.sqrt(r)) * problem.fro * problem.kappa
    return 29.0 * math.sqrt(num / (tau**3 * gap**3 * problem.sigma_r**2))


@dataclass(frozen=True)
class Prop1Check:
    sigma_1: float
    sigma_r: float
    cond: float
    lower: float
    upper: float
    cond_bound: float
    lower_ok: bool
    upper_ok: bool
    cond_ok: bool
    failure_probability = "not computable"  # depends on unspecified universal constants

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok and self.cond_ok


def prop1_bounds(problem: FactorizationProblem, d: int, tau: float, c: float) -> tuple[float, float, float]:
    """(lower bound on sigma_r(X0), upper bound on sigma_1(X0), bound on cond(X0))."""
    r = problem.r
    rd = math.sqrt(d)
    gap = rd - math.sqrt(r - 1)
    lower = tau * gap / rd * c * problem.sigma_r
    upper = (2.0 * rd + math.sqrt(r)) / rd * c * problem.sigma1
    cond_bound = (2.0 * rd + math.sqrt(r)) / (tau * gap) * problem.kappa
    return lower, upper, cond_bound


def check_prop1_bounds(problem, d, tau, c, seed) -> Prop1Check:
    X0 = c * _unit_sketch(problem, d, random_source(seed))
    s = np.linalg.svd(X0, compute_uv=False)
    lower, upper, cond_bound = prop1_bounds(problem, d, tau, c)
    s1, sr = float(s[0]), float(s[problem.r - 1])
    cond = s1 / sr if sr > rank_tolerance(X0.shape, s1) else math.inf
    return Prop1Check(s1, sr, cond, lower, upper, cond_bound, sr >= lower, s1 <= upper, cond <= cond_bound)


def prop1_violation_rate(problem, d, tau, c, seeds) -> float:
    seeds = list(seeds)
    failures = sum(not check_prop1_bounds(problem, d, tau, c, s).passed for s in seeds)
    return failures / len(seeds)


def colspan_leakage(M, frame) -> float:
    """Frobenius mass of M outside the span of the orthonormal ``frame``."""
    return float(np.linalg.norm(M - frame @ (frame.T @ M)))


__all__ = [
    "ConfigError",
    "FactorizationProblem",
    "InitConfig",
    "InitOutcome",
    "LinalgError",
    "Prop1Check",
    "c_threshold_gd",
    "c_threshold_nag",
    "check_prop1_bounds",
    "colspan_leakage",
    "init_lnn",
    "init_mf",
    "init_mf_general",
    "initialize",
    "interior_spectrum",
    "make_mf_problem",
    "prop1_bounds",
    "prop1_violation_rate",
]
