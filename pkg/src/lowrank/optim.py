"""GD, AltGD and NAG on factorization and linear-network problems.

The ``*_step`` functions are small functional reference implementations.
:func:`run` drives the fast engine from :mod:`lowrank._kernels` and only
materializes state snapshots where diagnostics need them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import dynamics
from ._kernels import CONVERGED, DIVERGED, engine_class
from .init import ConfigError

METHODS = ("gd", "altgd", "nag")
SOURCES = ("theory-gd", "theory-nag", "manual")
STEP_RULES = ("theory", "1/L", "scaled", "manual")
DIAGNOSTICS = ("off", "sampled", "full")
REASONS = ("converged", "max-iters", "diverged")
SAMPLE_EVERY_LARGE = 10
_CHUNK = 4096


@dataclass(frozen=True)
class HyperParams:
    eta: float
    beta: float
    L: float
    mu: float
    source: str = "manual"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"unknown hyperparameter source {self.source!r}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ConfigError("eta must be positive and finite")
        if not 0 <= self.beta < 1:
            raise ConfigError("beta must lie in [0, 1)")
        if not self.L >= self.mu > 0:
            raise ConfigError("need L >= mu > 0")


def _theory_beta(L: float, mu: float) -> float:
    sL, smu = math.sqrt(L), math.sqrt(mu)
    return (sL - smu) / (sL + smu)


def derive_hyperparams(init, method: str, problem=None, step_rule: str = "theory",
                       eta: float | None = None, beta: float | None = None) -> HyperParams:
    """Step size and momentum from the spectrum of X0.

    For linear networks (``problem.kind == "lnn"``) L and mu are weighted by
    the extreme nonzero eigenvalues of D D^T.  ``step_rule`` "1/L" keeps
    eta = 1/L for every method; "scaled" reads ``eta`` as a multiple of 1/L;
    "manual" takes ``eta`` (and ``beta``) as given.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    if step_rule not in STEP_RULES:
        raise ConfigError(f"unknown step rule {step_rule!r}")
    L, mu = init.L, init.mu
    if problem is not None and problem.kind == "lnn":
        L, mu = L * problem.lam_max, mu * problem.lam_min
    if not mu > 0:
        raise ConfigError("sigma_r(X0) = 0: hyperparameters undefined")
    momentum = method == "nag"
    if step_rule in ("manual", "scaled"):
        if eta is None:
            raise ConfigError(f"{step_rule} step rule needs eta")
        b = (beta if beta is not None else 0.0) if momentum else 0.0
        step_size = eta / L if step_rule == "scaled" else eta
        return HyperParams(float(step_size), float(b), L, mu, "manual")
    if momentum:
        return HyperParams(1.0 / L, _theory_beta(L, mu), L, mu, "theory-nag")
    if step_rule == "1/L":
        return HyperParams(1.0 / L, 0.0, L, mu, "manual")
    return HyperParams(2.0 / (L + mu), 0.0, L, mu, "theory-gd")


@dataclass(frozen=True, eq=False)
class IterateState:
    X: np.ndarray
    Y: np.ndarray
    X_prev: np.ndarray
    Y_prev: np.ndarray
    R: np.ndarray  # X Y^T - A, or X Y^T D - LBL
    G: np.ndarray  # residual driving the gradient: R, or R D^T
    t: int = 0


def make_state(problem, X, Y, X_prev=None, Y_prev=None, t=0) -> IterateState:
    X = np.array(X, dtype=np.float64)
    Y = np.array(Y, dtype=np.float64)
    X_prev = X.copy() if X_prev is None else np.array(X_prev, dtype=np.float64)
    Y_prev = Y.copy() if Y_prev is None else np.array(Y_prev, dtype=np.float64)
    R = problem.residual(X, Y)
    return IterateState(X, Y, X_prev, Y_prev, R, problem.project(R), t)


def initial_state(problem, init) -> IterateState:
    return make_state(problem, init.X0, init.Y0)


@dataclass(frozen=True)
class StopRule:
    eps_rel: float = 1e-8
    max_iters: int = 100_000
    divergence_factor: float = 1e6  # on the loss, relative to the initial loss

    def __post_init__(self):
        if not self.eps_rel > 0:
            raise ConfigError("eps_rel must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.divergence_factor > 1:
            raise ConfigError("divergence_factor must exceed 1")


def gd_step(state: IterateState, hp: HyperParams, problem) -> IterateState:
    if hp.beta != 0:
        raise ConfigError("gd_step needs beta = 0")
    G = state.G
    X = state.X - hp.eta * (G @ state.Y)
    Y = state.Y - hp.eta * (G.T @ state.X)
    return make_state(problem, X, Y, state.X, state.Y, state.t + 1)


def altgd_step(state: IterateState, hp: HyperParams, problem, order: str = "xy") -> IterateState:
    """One block at a time; the second block sees the refreshed residual."""
    if hp.beta != 0:
        raise ConfigError("altgd_step needs beta = 0")
    X, Y = state.X, state.Y
    if order == "xy":
        X = X - hp.eta * (state.G @ Y)
        G = problem.project(problem.residual(X, Y))
        Y = Y - hp.eta * (G.T @ X)
    elif order == "yx":
        Y = Y - hp.eta * (state.G.T @ X)
        G = problem.project(problem.residual(X, Y))
        X = X - hp.eta * (G @ Y)
    else:
        raise ConfigError("order must be 'xy' or 'yx'")
    return make_state(problem, X, Y, state.X, state.Y, state.t + 1)


def nag_step(state: IterateState, hp: HyperParams, problem) -> IterateState:
    """``X' = (1 + beta)(X - eta G Y) - beta(X_prev - eta G_prev Y_prev)``, likewise for Y."""
    eta, b = hp.eta, hp.beta
    G, Gp = state.G, problem.project(problem.residual(state.X_prev, state.Y_prev))
    Zx = state.X - eta * (G @ state.Y)
    Zy = state.Y - eta * (G.T @ state.X)
    Zxp = state.X_prev - eta * (Gp @ state.Y_prev)
    Zyp = state.Y_prev - eta * (Gp.T @ state.X_prev)
    # same map as (1 + b) Z - b Z_prev, arranged to be exact when Z_prev == Z
    X = Zx + b * (Zx - Zxp)
    Y = Zy + b * (Zy - Zyp)
    return make_state(problem, X, Y, state.X, state.Y, state.t + 1)


def nag_lnn_step(state: IterateState, hp: HyperParams, problem) -> IterateState:
    if problem.kind != "lnn":
        raise ConfigError("nag_lnn_step needs a linear-network problem")
    return nag_step(state, hp, problem)


def step(method: str, state: IterateState, hp: HyperParams, problem, order: str = "xy") -> IterateState:
    if method == "gd":
        return gd_step(state, hp, problem)
    if method == "altgd":
        return altgd_step(state, hp, problem, order)
    if method == "nag":
        return nag_step(state, hp, problem)
    raise ConfigError(f"unknown method {method!r}")


@dataclass(frozen=True)
class TraceRow:
    run_id: str
    method: str
    seed: int
    iter: int
    loss: float
    resid_fro: float
    resid_rel: float
    theory_bound: float | None = None
    dist_x: float | None = None
    dist_y: float | None = None
    leakage: float | None = None
    contraction_measured: float | None = None
    decomposition_residual: float | None = None


TRACE_FIELDS = tuple(f.name for f in fields(TraceRow))


@dataclass
class Trace:
    """Column-oriented trace; NaN marks a missing diagnostic."""

    iters: np.ndarray
    resid_sq: np.ndarray
    dist_x: np.ndarray
    dist_y: np.ndarray
    theory_bound: np.ndarray
    leakage: np.ndarray
    leakage_rel: np.ndarray  # leakage / ||driving residual||
    contraction: np.ndarray
    decomposition: np.ndarray
    target_norm: float

    @property
    def resid_fro(self) -> np.ndarray:
        return np.sqrt(self.resid_sq)

    @property
    def loss(self) -> np.ndarray:
        return 0.5 * self.resid_sq

    @property
    def resid_rel(self) -> np.ndarray:
        return self.resid_fro / self.target_norm

    def __len__(self) -> int:
        return self.iters.size

    def rows(self, run_id: str, method: str, seed: int):
        def opt(v):
            return None if math.isnan(v) else float(v)

        cols = (self.loss, self.resid_fro, self.resid_rel, self.theory_bound, self.dist_x,
                self.dist_y, self.leakage, self.contraction, self.decomposition)
        for i, t in enumerate(self.iters):
            loss, rf, rr, tb, dx, dy, lk, cm, dr = (c[i] for c in cols)
            yield TraceRow(run_id, method, seed, int(t), float(loss), float(rf), float(rr),
                           opt(tb), opt(dx), opt(dy), opt(lk), opt(cm), opt(dr))


@dataclass
class RunResult:
    state: IterateState
    reason: str
    iterations: int
    trace: Trace
    hp: HyperParams
    method: str
    checks: list = field(default_factory=list)  # (t, DynamicsCheck)

    @property
    def converged(self) -> bool:
        return self.reason == "converged"


class _Columns:
    def __init__(self):
        self.parts = {k: [] for k in ("iters", "resid_sq", "dx", "dy", "leak", "leak_rel", "contr", "decomp")}

    def add(self, iters, resid_sq, dx, dy, leak=None, contr=None, decomp=None, leak_rel=None):
        n = len(iters)
        nan = np.full(n, np.nan)
        p = self.parts
        p["iters"].append(np.asarray(iters, dtype=np.int64))
        p["resid_sq"].append(np.array(resid_sq, dtype=np.float64))  # buffers are reused
        p["dx"].append(np.sqrt(np.asarray(dx, dtype=np.float64)))
        p["dy"].append(np.sqrt(np.asarray(dy, dtype=np.float64)))
        for key, v in (("leak", leak), ("leak_rel", leak_rel), ("contr", contr), ("decomp", decomp)):
            p[key].append(nan if v is None else np.asarray(v, dtype=np.float64))

    def build(self, bound, target_norm) -> Trace:
        c = {k: np.concatenate(v) for k, v in self.parts.items()}
        tb = np.full(c["iters"].size, np.nan) if bound is None else bound.prefactor * bound.rate ** (
            bound.power * c["iters"].astype(np.float64))
        return Trace(c["iters"], c["resid_sq"], c["dx"], c["dy"], tb, c["leak"], c["leak_rel"],
                     c["contr"], c["decomp"], target_norm)


def diagnostic_stride(problem, diagnostics: str) -> int:
    """Iterations between diagnostic samples (0 = off)."""
    if diagnostics not in DIAGNOSTICS:
        raise ConfigError(f"diagnostics must be one of {DIAGNOSTICS}")
    if diagnostics == "off":
        return 0
    if diagnostics == "full":
        return 1
    m, n = problem.shape
    return 1 if m * n <= dynamics.MAX_EXPLICIT_MN else SAMPLE_EVERY_LARGE


def _snapshot(engine, problem, t) -> tuple[IterateState, IterateState]:
    """(state at t, state at t-1) from the engine buffers."""
    X, Y = engine.X.copy(), engine.Y.copy()
    Xp, Yp = engine.X_prev.copy(), engine.Y_prev.copy()
    cur = IterateState(X, Y, Xp, Yp, engine.R.copy(), engine.G.copy(), t)
    if t == 0:
        return cur, cur
    return cur, make_state(problem, Xp, Yp, t=t - 1)


def _leakage(G, problem) -> tuple[float, float]:
    leak = dynamics.subspace_leakage(G, problem)
    norm = float(np.linalg.norm(G))
    return leak, (leak / norm if norm > 0 else 0.0)


def run(problem, init, method: str, hp: HyperParams, stop: StopRule, sink=None,
        diagnostics: str = "off", backend: str | None = None, order: str = "xy",
        bound_kind: str | None = "auto", run_id: str = "", keep_checks: bool = False) -> RunResult:
    """Iterate until converged, diverged or out of iterations.

    One trace entry per iteration t = 0..T.  With diagnostics on, sampled
    iterations also carry subspace leakage of r_t, the measured contraction of
    the linear part and the residual of the one-step decomposition t -> t+1.
    ``sink`` (optional) receives each :class:`TraceRow` after the run.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    if method != "nag" and hp.beta != 0:
        raise ConfigError(f"{method} needs beta = 0")
    stride = diagnostic_stride(problem, diagnostics)
    if bound_kind == "auto":
        bound_kind = None if method == "altgd" else dynamics.default_bound_kind(method, problem)
    bound = None if bound_kind is None else dynamics.theory_bound(bound_kind, init, problem)

    Engine = engine_class(backend)
    X0 = np.asfortranarray(init.X0, dtype=np.float64)
    Y0 = np.asfortranarray(init.Y0, dtype=np.float64)
    eng = Engine(X0, Y0, X0, Y0, problem.target, problem.data, method, hp.eta, hp.beta, order)
    target_norm = problem.target_norm
    stop_sq = (stop.eps_rel * target_norm) ** 2
    r0 = float(np.sum(eng.R * eng.R))
    div_sq = stop.divergence_factor * r0
    cols = _Columns()
    checks = []
    buf = {k: np.empty(_CHUNK) for k in ("r", "x", "y")}

    t, rs, dx, dy = 0, r0, 0.0, 0.0
    reason = None
    while True:
        if not math.isfinite(rs) or (rs > div_sq and rs > stop_sq):
            reason = "diverged"
        elif rs <= stop_sq:
            reason = "converged"
        elif t >= stop.max_iters:
            reason = "max-iters"
        sample = stride and t % stride == 0 and math.isfinite(rs)
        if reason is not None:
            if sample:
                leak, rel = _leakage(eng.G, problem)
                cols.add([t], [rs], [dx], [dy], [leak], leak_rel=[rel])
            else:
                cols.add([t], [rs], [dx], [dy])
            break
        if sample:
            cur, prev = _snapshot(eng, problem, t)
            eng.step()
            nxt = IterateState(eng.X.copy(), eng.Y.copy(), cur.X, cur.Y, eng.R.copy(), eng.G.copy(), t + 1)
            if method == "nag":
                chk = dynamics.nag_decomposition_check(prev, cur, nxt, init, hp, problem)
            elif method == "gd":
                chk = dynamics.gd_decomposition_check(cur, nxt, init, hp, problem)
            else:
                chk = None  # AltGD has no single-residual recursion; leakage only
            if keep_checks and chk is not None:
                checks.append((t, chk))
            if chk is None:
                leak, rel = _leakage(cur.G, problem)
                cols.add([t], [rs], [dx], [dy], [leak], leak_rel=[rel])
            else:
                rel = chk.leakage / chk.residual_norm if chk.residual_norm > 0 else 0.0
                cols.add([t], [rs], [dx], [dy], [chk.leakage], [chk.contraction_measured],
                         [chk.decomposition_residual], [rel])
            t += 1
            rs = float(np.sum(eng.R * eng.R))
            dx = float(np.sum((eng.X - X0) ** 2))
            dy = float(np.sum((eng.Y - Y0) ** 2))
            continue
        cols.add([t], [rs], [dx], [dy])
        n = min(stop.max_iters - t, _CHUNK)
        if stride:
            n = min(n, stride - t % stride)
        steps, status = eng.advance(n, stop_sq, div_sq, X0, Y0, buf["r"], buf["x"], buf["y"])
        if steps > 1:
            cols.add(np.arange(t + 1, t + steps), buf["r"][: steps - 1], buf["x"][: steps - 1],
                     buf["y"][: steps - 1])
        t += steps
        rs, dx, dy = float(buf["r"][steps - 1]), float(buf["x"][steps - 1]), float(buf["y"][steps - 1])
        assert status in (0, CONVERGED, DIVERGED)

    state = IterateState(eng.X.copy(), eng.Y.copy(), eng.X_prev.copy(), eng.Y_prev.copy(),
                         eng.R.copy(), eng.G.copy(), t)
    trace = cols.build(bound, target_norm)
    result = RunResult(state, reason, t, trace, hp, method, checks)
    if sink is not None:
        for row in trace.rows(run_id, method, init.seed):
            sink(row)
    return result


def iterations_to_eps(trace: Trace, eps_rel: float) -> int | None:
    """First iteration with relative residual <= eps_rel, or None."""
    hit = np.nonzero(trace.resid_rel <= eps_rel)[0]
    return int(trace.iters[hit[0]]) if hit.size else None
