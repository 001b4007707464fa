"""Numerical certificates for the residual dynamics of GD and NAG.

Residuals are handled in matrix form: ``r_t = vec(G_t)`` where ``G_t`` is the
update-driving residual (``X Y^T - A`` for factorization, ``(X Y^T D - L) D^T``
for linear networks).  The operator ``H_t`` is only ever applied through
:func:`lowrank.linalg.apply_H`; explicit Kronecker matrices appear solely in the
oracle helpers at the bottom of this module.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import MAX_EXPLICIT_MN, LinalgError, apply_H, explicit_H

RESIDUAL_KINDS = ("gd-thm1", "nag-thm2", "lnn-thm3")
LOSS_KINDS = ("loss-curve-gd", "loss-curve-nag")
RANK_RTOL = 1e-10  # eigenvalues of H_0 below this fraction of the largest count as zero


@dataclass(frozen=True)
class DynamicsCheck:
    decomposition_residual: float
    xi_norm: float
    leakage: float
    contraction_measured: float
    xi_leakage: float = 0.0
    residual_norm: float = 0.0  # ||r_t||
    zeta_norm: float = math.nan
    iota_norm: float = math.nan


@dataclass(frozen=True)
class TheoryBound:
    rate: float  # theta, per iteration
    prefactor: float
    kind: str

    @property
    def power(self) -> int:
        return 2 if self.kind in LOSS_KINDS else 1

    def curve(self, t_max: int) -> np.ndarray:
        t = np.arange(t_max + 1, dtype=np.float64)
        return self.prefactor * self.rate ** (self.power * t)

    def slope(self) -> float:
        """Predicted decay of log(value) per iteration (positive)."""
        return -self.power * math.log(self.rate)


def _X0_constants(init, problem):
    """(L, mu) of the problem-appropriate theorem: plain for MF, data-weighted for LNN."""
    if problem.kind == "lnn":
        return init.L * problem.lam_max, init.mu * problem.lam_min
    return init.L, init.mu


def theory_bound(kind: str, init, problem) -> TheoryBound:
    L, mu = _X0_constants(init, problem)
    if kind == "gd-thm1":
        return TheoryBound(1.0 - mu / L, 3.0 * init.c**2 * problem.sigma1**2 / 64.0, kind)
    if kind == "nag-thm2":
        return TheoryBound(1.0 - math.sqrt(mu / L) / 2.0,
                           init.c**2 * problem.sigma1**2 / (64.0 * init.cond), kind)
    if kind == "lnn-thm3":
        if problem.kind != "lnn":
            raise ValueError("lnn-thm3 needs a linear-network problem")
        return TheoryBound(1.0 - math.sqrt(mu / L) / 2.0, init.mu * problem.sigma_min_D / 576.0, kind)
    f0 = problem.loss(init.X0, init.Y0)
    if kind == "loss-curve-gd":
        return TheoryBound(1.0 - mu / L, f0, kind)
    if kind == "loss-curve-nag":
        return TheoryBound(1.0 - math.sqrt(mu / L) / 2.0, f0, kind)
    raise ValueError(f"unknown bound kind {kind!r}")


def theory_bound_curve(kind: str, init, problem, t_max: int) -> np.ndarray:
    return theory_bound(kind, init, problem).curve(t_max)


def default_bound_kind(method: str, problem) -> str:
    if problem.kind == "lnn":
        return "lnn-thm3"
    return "nag-thm2" if method == "nag" else "gd-thm1"


def _nag_root_radius(a: float, beta: float) -> float:
    # largest |z| solving z^2 - (1 + beta) a z + beta a = 0
    s = (1.0 + beta) * a
    disc = s * s - 4.0 * beta * a
    if abs(disc) <= 64.0 * np.finfo(float).eps * max(s * s, 4.0 * abs(beta * a)):
        return abs(s) / 2.0
    if disc < 0:
        return math.sqrt(beta * a)
    root = math.sqrt(disc)
    return max(abs(s + root), abs(s - root)) / 2.0


def contraction_factor(method: str, L: float, mu: float, eta: float, beta: float = 0.0) -> float:
    """Guaranteed per-iteration contraction of the linear part on the contraction subspace.

    GD (and AltGD): ``max(|1 - eta L|, |1 - eta mu|)``, a norm bound.  NAG:
    the spectral radius of the two-step linear map, maximized over the two
    extreme curvatures; at ``eta = 1/L`` with the matching momentum this is
    ``1 - sqrt(mu / L)``.
    """
    if not L >= mu > 0:
        raise ValueError("need L >= mu > 0")
    if method in ("gd", "altgd"):
        if not 0 < eta < 2.0 / L:
            warnings.warn(f"eta={eta:g} outside (0, 2/L): no contraction guaranteed", stacklevel=2)
        return max(abs(1.0 - eta * L), abs(1.0 - eta * mu))
    if method == "nag":
        theory_beta = (math.sqrt(L) - math.sqrt(mu)) / (math.sqrt(L) + math.sqrt(mu))
        if math.isclose(eta * L, 1.0, rel_tol=1e-12) and math.isclose(beta, theory_beta, rel_tol=1e-12, abs_tol=1e-15):
            return 1.0 - math.sqrt(mu / L)
        rho = max(_nag_root_radius(1.0 - eta * lam, beta) for lam in (mu, L))
        if rho >= 1.0:
            warnings.warn("NAG hyperparameters give no contraction", stacklevel=2)
        return rho
    raise ValueError(f"unknown method {method!r}")


def subspace_leakage(R, problem) -> float:
    """Frobenius mass of R outside the contraction subspace.

    Factorization: columns outside colspan(A).  Linear network: R is the
    projected residual (m x n) and the subspace is ``{U_L C U_D^T}``.
    """
    R = np.asarray(R)
    if problem.kind == "lnn":
        UL, UD = problem.U_L, problem.U_D
        return float(np.linalg.norm(R - UL @ ((UL.T @ R @ UD) @ UD.T)))
    U = problem.U
    return float(np.linalg.norm(R - U @ (U.T @ R)))


def _grad_residual(state, problem):
    return state.G if state.G is not None else problem.project(state.R)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def gd_decomposition_check(state_t, state_t1, init, hp, problem) -> DynamicsCheck:
    """Residual of ``r_{t+1} = (I - eta H_0) r_t + xi_t`` on one GD step."""
    S = problem.gram
    eta = hp.eta
    Gt = _grad_residual(state_t, problem)
    Gt1 = _grad_residual(state_t1, problem)
    X0, Y0 = init.X0, init.Y0
    H0r = apply_H(X0, Y0, Gt, S)
    linear = Gt - eta * H0r
    P = state_t1.X - state_t.X
    Q = state_t1.Y - state_t.Y
    PQ = P @ Q.T
    if S is not None:
        PQ = PQ @ S
    xi = eta * (H0r - apply_H(state_t.X, state_t.Y, Gt, S)) + PQ
    return DynamicsCheck(
        decomposition_residual=float(np.linalg.norm(Gt1 - linear - xi)),
        xi_norm=float(np.linalg.norm(xi)),
        leakage=subspace_leakage(Gt, problem),
        contraction_measured=_ratio(float(np.linalg.norm(linear)), float(np.linalg.norm(Gt))),
        xi_leakage=subspace_leakage(xi, problem),
        residual_norm=float(np.linalg.norm(Gt)),
    )


def nag_decomposition_check(state_prev, state_t, state_t1, init, hp, problem) -> DynamicsCheck:
    """Residual of the two-step NAG recursion at step t.

    ``state_prev`` is the iterate at t-1 (equal to ``state_t`` at t = 0).
    """
    S = problem.gram
    eta, beta = hp.eta, hp.beta
    X0, Y0 = init.X0, init.Y0

    def w(M):
        return M if S is None else M @ S

    Gt = _grad_residual(state_t, problem)
    Gp = _grad_residual(state_prev, problem)
    Gt1 = _grad_residual(state_t1, problem)
    P, Q = state_t1.X - state_t.X, state_t1.Y - state_t.Y
    Pp, Qp = state_t.X - state_prev.X, state_t.Y - state_prev.Y
    Xp, Yp = state_prev.X, state_prev.Y

    H0_t = apply_H(X0, Y0, Gt, S)
    H0_p = apply_H(X0, Y0, Gp, S)
    Tt = Gt - eta * H0_t
    Tp = Gp - eta * H0_p
    linear = (1.0 + beta) * Tt - beta * Tp
    zeta = w(P @ Q.T) + beta * w(Pp @ Qp.T) + beta * eta * w(Gp @ Yp @ Qp.T + Pp @ Xp.T @ Gp)
    iota = (1.0 + beta) * eta * (H0_t - apply_H(state_t.X, state_t.Y, Gt, S)) \
        - beta * eta * (H0_p - apply_H(Xp, Yp, Gp, S))
    xi = zeta + iota
    top = float(np.linalg.norm(linear))
    stacked_in = math.hypot(float(np.linalg.norm(Gt)), float(np.linalg.norm(Gp)))
    return DynamicsCheck(
        decomposition_residual=float(np.linalg.norm(Gt1 - linear - xi)),
        xi_norm=float(np.linalg.norm(xi)),
        leakage=subspace_leakage(Gt, problem),
        contraction_measured=_ratio(math.hypot(top, float(np.linalg.norm(Gt))), stacked_in),
        xi_leakage=subspace_leakage(xi, problem),
        residual_norm=float(np.linalg.norm(Gt)),
        zeta_norm=float(np.linalg.norm(zeta)),
        iota_norm=float(np.linalg.norm(iota)),
    )


def iteration_complexity(kind: str, cond_values: dict, tau: float, d: int, r: int, eps: float) -> float:
    """Big-O iteration counts evaluated with unit constants (order of magnitude only).

    ``cond_values`` carries ``kappa`` and, where the log constant needs it,
    ``cond_X0``.  Kinds: "gd" and "nag" for factorization.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    kappa = cond_values["kappa"]
    width = d / (tau * (d - r + 1))
    if kind == "gd":
        scale = width**2 * kappa**2
        rate = 1.0 - 1.0 / scale
    elif kind == "nag":
        scale = width * kappa
        rate = 1.0 - 1.0 / (2.0 * scale)
    else:
        raise ValueError(f"unknown complexity kind {kind!r}")
    cX = cond_values.get("cond_X0")
    if cX is not None and cX > 1:
        if kind == "gd":
            C = 27.0 * tau**2 * (d - r + 1) ** 2 / (16.0 * d**2) * cX**4 * kappa**2 / (cX**2 - 1.0)
        else:
            gap = math.sqrt(d) - math.sqrt(r - 1)
            C = 841.0 * d * (2 * math.sqrt(d) + math.sqrt(r)) / (64.0 * tau**3 * gap**3) * kappa**3 / cX
    else:
        C = 1.0
    return scale * math.log(max(C, 1.0) / eps) if rate > 0 else math.inf


# ---------------------------------------------------------------------------
# Explicit-operator oracles (tiny instances only)


def _check_size(m, n):
    if m * n > MAX_EXPLICIT_MN:
        raise LinalgError(f"explicit operators are limited to mn <= {MAX_EXPLICIT_MN}")


def _mp_explicit_H(mp, X, Y, gram):
    """explicit_H formed entrywise in mpmath from the float64 inputs."""
    X, Y = mp.matrix(X.tolist()), mp.matrix(Y.tolist())
    m, n = X.rows, Y.rows
    XX, YY = X * X.T, Y * Y.T
    if gram is not None:
        S = mp.matrix(np.asarray(gram).tolist())
        left, right = S * YY, S
    else:
        left, right = YY, mp.eye(n)
    H = mp.zeros(m * n, m * n)
    # column-major vec: block (j, l) of size m x m
    for j in range(n):
        for l in range(n):
            for i in range(m):
                H[j * m + i, l * m + i] += left[j, l]
                for k in range(m):
                    H[j * m + i, l * m + k] += right[j, l] * XX[i, k]
    return H


def contraction_basis(init, problem, rel_tol=RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of the positive eigenspace of the explicit H_0."""
    m, n = problem.shape
    _check_size(m, n)
    w, V = np.linalg.eigh(explicit_H(init.X0, init.Y0, problem.gram))
    return V[:, w > rel_tol * w[-1]]


def explicit_T_gd(init, hp, problem) -> np.ndarray:
    m, n = problem.shape
    _check_size(m, n)
    return np.eye(m * n) - hp.eta * explicit_H(init.X0, init.Y0, problem.gram)


def explicit_T_nag(init, hp, problem) -> np.ndarray:
    m, n = problem.shape
    _check_size(m, n)
    T = explicit_T_gd(init, hp, problem)
    I = np.eye(m * n)
    return np.block([[(1.0 + hp.beta) * T, -hp.beta * T], [I, np.zeros_like(I)]])


def restricted_gd_spectrum(init, hp, problem) -> np.ndarray:
    """Eigenvalues of (I - eta H_0) restricted to the contraction subspace."""
    Q = contraction_basis(init, problem)
    return np.linalg.eigvalsh(Q.T @ explicit_T_gd(init, hp, problem) @ Q)


def restricted_nag_radius(init, hp, problem) -> float:
    """Spectral radius of the explicit NAG block map on H x H, in float64.

    At the theory hyperparameters the extreme eigenvalue is a double root,
    so this float64 value carries errors of order sqrt(machine epsilon);
    :func:`restricted_nag_radius_mp` is the accurate oracle.
    """
    Q = contraction_basis(init, problem)
    Z = np.zeros_like(Q)
    B = np.block([[Q, Z], [Z, Q]])
    return float(np.max(np.abs(np.linalg.eigvals(B.T @ explicit_T_nag(init, hp, problem) @ B))))


def restricted_nag_radius_mp(init, problem, dps: int = 60) -> tuple[float, float]:
    """High-precision spectral radius of the NAG block map on H x H at theory settings.

    H_0, its spectrum, (L, mu), eta = 1/L, beta and the block map are all
    formed in ``dps``-digit arithmetic from the float64 entries of X_0, so
    the double root at the smallest curvature is resolved.  Returns
    ``(radius, 1 - sqrt(mu / L))`` from the same high-precision (L, mu).
    """
    import mpmath as mp

    m, n = problem.shape
    _check_size(m, n)
    with mp.workdps(dps):
        H = _mp_explicit_H(mp, init.X0, init.Y0, problem.gram)
        w, V = mp.eigsy(H)
        w = [w[i] for i in range(len(w))]
        top = max(w)
        keep = [i for i, x in enumerate(w) if x > top * RANK_RTOL]
        Q = mp.matrix(V.rows, len(keep))
        for j, i in enumerate(keep):
            for k in range(V.rows):
                Q[k, j] = V[k, i]
        Lmp = top
        mump = min(w[i] for i in keep)
        eta = 1 / Lmp
        beta = (mp.sqrt(Lmp) - mp.sqrt(mump)) / (mp.sqrt(Lmp) + mp.sqrt(mump))
        k = len(keep)
        M = mp.eye(k) - eta * (Q.T * H * Q)
        T = mp.zeros(2 * k, 2 * k)
        for i in range(k):
            for j in range(k):
                T[i, j] = (1 + beta) * M[i, j]
                T[i, k + j] = -beta * M[i, j]
            T[k + i, i] = 1
        ev = mp.eig(T, left=False, right=False)
        radius = max(abs(e) for e in ev)
        return float(radius), float(1 - mp.sqrt(mump / Lmp))
