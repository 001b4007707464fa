"""Execute experiment configs: traces, seed means, summaries, verification, theory curves."""

from __future__ import annotations

import csv
import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import dynamics
from ..init import ConfigError, InitConfig, c_threshold_gd, c_threshold_nag, initialize, make_mf_problem
from ..init import prop1_violation_rate
from ..lnn import check_thm3_premise, make_lnn_problem
from ..optim import TRACE_FIELDS, StopRule, derive_hyperparams, iterations_to_eps, run
from .config import ExperimentConfig, resolved_c

THREADS_ENV = "LOWRANK_THREADS"
SUMMARY_FIELDS = ("run_id", "method", "sweep_param", "sweep_value", "seed", "c", "eta", "beta",
                  "L", "mu", "reason", "iterations", "iters_to_eps", "final_resid_rel",
                  "initial_loss", "final_loss")

DECOMPOSITION_TOL = 1e-10  # relative to ||r_0||
LEAKAGE_TOL = 1e-9  # relative to ||r_t||
CONTRACTION_TOL = 1e-8
SPECTRUM_TOL = 1e-12
NAG_RADIUS_TOL = 1e-10
PROP1_MAX_RATE = 0.01
MP_ORACLE_MAX_MN = 64


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def build_problem(cfg: ExperimentConfig):
    p = cfg.problem
    if p.kind == "mf":
        return make_mf_problem(p.m, p.n, p.r, p.sigma1, p.sigma_r, p.profile, seed=p.seed)
    return make_lnn_problem(p.m, p.n, p.N, p.rank_d, p.sigma1_d, p.sigmar_d, seed=p.seed)


def init_config(cfg: ExperimentConfig, seed: int) -> InitConfig:
    i = cfg.init
    return InitConfig(i.scheme, i.d, resolved_c(i), i.c2, seed, i.tau, i.auto_method)


def _bound_kind(cfg: ExperimentConfig, method: str):
    if cfg.output.bound == "none":
        return None
    if cfg.output.bound == "loss-curve":
        return "loss-curve-nag" if method == "nag" else "loss-curve-gd"
    return "auto"


def _tag(param, value) -> str:
    if param is None:
        return ""
    safe = re.sub(r"[^\w.-]", "_", str(value))
    return f"{param}-{safe}"


@dataclass
class RunRecord:
    run_id: str
    method: str
    sweep_value: object
    seed: int
    init: object
    problem: object
    result: object
    iters_to_eps: int | None

    @property
    def diverged(self) -> bool:
        return self.result.reason == "diverged"


@dataclass
class Cell:
    """All seeds of one (method, sweep value)."""

    method: str
    sweep_value: object
    tag: str
    records: list = field(default_factory=list)


def execute(cfg: ExperimentConfig, diagnostics: str | None = None, keep_checks: bool = False) -> list[Cell]:
    """Run every (method, sweep value, seed); cells come back in config order."""
    points = cfg.sweep_points()
    problems = [build_problem(c) for _, c in points]
    tasks = []
    for (value, sub), problem in zip(points, problems):
        for method in cfg.methods:
            for seed in cfg.seeds:
                tasks.append((value, sub, problem, method, seed))

    def one(task):
        value, sub, problem, method, seed = task
        init = initialize(problem, init_config(sub, seed))
        h = sub.hyper
        hp = derive_hyperparams(init, method, problem, h.step_rule, h.eta, h.beta)
        stop = StopRule(sub.stop.eps, sub.stop.max_iters, sub.stop.divergence_factor)
        tag = _tag(cfg.sweep.param, value)
        run_id = "-".join(x for x in (method, tag, f"s{seed}") if x)
        res = run(problem, init, method, hp, stop, diagnostics=diagnostics or sub.diagnostics,
                  order=h.order, bound_kind=_bound_kind(sub, method), run_id=run_id,
                  keep_checks=keep_checks)
        return RunRecord(run_id, method, value, seed, init, problem, res,
                         iterations_to_eps(res.trace, sub.stop.eps))

    workers = min(thread_count(), len(tasks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, tasks))
    else:
        records = [one(t) for t in tasks]

    cells = {}
    for rec in records:
        key = (repr(rec.sweep_value), rec.method)
        if key not in cells:
            cells[key] = Cell(rec.method, rec.sweep_value, _tag(cfg.sweep.param, rec.sweep_value))
        cells[key].records.append(rec)
    return list(cells.values())


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else format(v, ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def trace_rows(rec: RunRecord):
    for row in rec.result.trace.rows(rec.run_id, rec.method, rec.seed):
        yield [row.run_id, row.method, str(row.seed)] + [_num(getattr(row, f)) for f in TRACE_FIELDS[3:]]


def mean_curve(records, kind: str = "arithmetic") -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Per-iteration mean loss over seeds, truncated at the shortest run.

    Returns (iters, loss, mean theory bound or None).  The result does not
    depend on the order of ``records`` beyond floating-point summation, which
    is done after sorting by seed.
    """
    records = sorted(records, key=lambda r: r.seed)
    n = min(len(r.result.trace) for r in records)
    losses = np.stack([r.result.trace.loss[:n] for r in records])
    if kind == "geometric":
        with np.errstate(divide="ignore"):
            loss = np.exp(np.mean(np.log(losses), axis=0))
    else:
        loss = np.mean(losses, axis=0)
    bounds = np.stack([r.result.trace.theory_bound[:n] for r in records])
    bound = None if np.isnan(bounds).any() else np.mean(bounds, axis=0)
    return np.arange(n), loss, bound


def _mean_rows(cell: Cell, kind: str, target_norm: float):
    iters, loss, bound = mean_curve(cell.records, kind)
    run_id = "-".join(x for x in (cell.method, cell.tag, "mean") if x)
    resid = np.sqrt(2.0 * loss)
    for i, t in enumerate(iters):
        tb = "" if bound is None else _num(bound[i])
        yield [run_id, cell.method, "", str(int(t)), _num(loss[i]), _num(resid[i]),
               _num(resid[i] / target_norm), tb] + [""] * 5


def _summary_row(cfg, rec: RunRecord):
    tr, res = rec.result.trace, rec.result
    return [rec.run_id, rec.method, cfg.sweep.param or "", "" if rec.sweep_value is None else str(rec.sweep_value),
            str(rec.seed), _num(rec.init.c), _num(res.hp.eta), _num(res.hp.beta), _num(res.hp.L),
            _num(res.hp.mu), res.reason, str(res.iterations), _num(rec.iters_to_eps),
            _num(tr.resid_rel[-1]), _num(tr.loss[0]), _num(tr.loss[-1])]


@dataclass
class ExperimentOutput:
    cells: list
    files: list
    diverged: list  # run ids

    @property
    def any_diverged(self) -> bool:
        return bool(self.diverged)


def run_experiment(cfg: ExperimentConfig, out_dir=None, diagnostics: str | None = None) -> ExperimentOutput:
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = execute(cfg, diagnostics)
    files = []
    for cell in cells:
        stem = "_".join(x for x in (cfg.name, cell.method, cell.tag) if x)
        path = out / f"{stem}.csv"
        rows = (row for rec in sorted(cell.records, key=lambda r: r.seed) for row in trace_rows(rec))
        _write_csv(path, TRACE_FIELDS, rows)
        mpath = out / f"{stem}_mean.csv"
        _write_csv(mpath, TRACE_FIELDS, _mean_rows(cell, cfg.output.mean, cell.records[0].problem.target_norm))
        files += [path, mpath]
    spath = out / f"{cfg.name}_summary.csv"
    _write_csv(spath, SUMMARY_FIELDS, (_summary_row(cfg, r) for c in cells for r in sorted(c.records, key=lambda r: r.seed)))
    files.append(spath)
    diverged = [r.run_id for c in cells for r in c.records if r.diverged]
    return ExperimentOutput(cells, files, diverged)


# ---------------------------------------------------------------------------
# verification


@dataclass
class Check:
    name: str
    subject: str
    passed: bool
    measured: float
    limit: float
    asserted: bool = True
    detail: str = ""


@dataclass
class VerifyReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted)

    def failures(self) -> list:
        return [c for c in self.checks if c.asserted and not c.passed]

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "checks": [asdict(c) for c in self.checks]}, indent=2,
                          default=float)


def _nanmax(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    a = a[~np.isnan(a)]
    return float(a.max()) if a.size else 0.0


def _run_checks(cfg, rec: RunRecord) -> list:
    out = []
    res, tr, problem, init = rec.result, rec.result.trace, rec.problem, rec.init
    subject = rec.run_id
    if res.reason == "diverged":
        growth = float(tr.resid_sq[-1] / tr.resid_sq[0]) if np.isfinite(tr.resid_sq[-1]) else math.inf
        out.append(Check("no-divergence", subject, False, growth, cfg.stop.divergence_factor,
                         detail="loss / initial loss"))
    G0 = float(np.linalg.norm(problem.project(problem.residual(init.X0, init.Y0))))
    if rec.method in ("gd", "nag") and res.checks:
        worst = max(c.decomposition_residual for _, c in res.checks)
        lim = DECOMPOSITION_TOL * G0
        out.append(Check("decomposition", subject, worst <= lim, worst, lim))
    if cfg.init.scheme in ("mf-sketch", "lnn-1", "lnn-2") and not np.isnan(tr.leakage_rel).all():
        # r_t for every sampled t, and xi_t where a decomposition was checked
        rel = [_nanmax(tr.leakage_rel)]
        rel += [c.xi_leakage / c.residual_norm for _, c in res.checks if c.residual_norm > 0]
        worst = max(rel)
        out.append(Check("leakage", subject, worst <= LEAKAGE_TOL, worst, LEAKAGE_TOL))
    if rec.method == "gd" and res.checks:
        factor = dynamics.contraction_factor("gd", res.hp.L, res.hp.mu, res.hp.eta)
        worst = max(c.contraction_measured for _, c in res.checks)
        out.append(Check("contraction-measured", subject, worst <= factor + CONTRACTION_TOL, worst,
                         factor + CONTRACTION_TOL))
    if rec.method == "nag" and res.checks:
        # one-step norm ratio of a non-normal map; reported, the guarantee is spectral
        factor = dynamics.contraction_factor("nag", res.hp.L, res.hp.mu, res.hp.eta, res.hp.beta)
        worst = max(c.contraction_measured for _, c in res.checks)
        out.append(Check("contraction-measured", subject, worst <= factor + CONTRACTION_TOL, worst,
                         factor + CONTRACTION_TOL, asserted=False, detail="non-normal map: norm ratio"))
    kind = dynamics.default_bound_kind(rec.method, problem) if rec.method != "altgd" else None
    if kind is not None:
        bound = dynamics.theory_bound(kind, init, problem).curve(int(tr.iters[-1]))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = float(np.max(np.where(tr.resid_fro > 0, tr.resid_fro / bound[tr.iters], 0.0)))
        threshold, asserted = _threshold(cfg, rec, kind)
        out.append(Check(f"bound-{kind}", subject, ratio <= 1.0, ratio, 1.0, asserted,
                         f"c={init.c:.6g} threshold={threshold:.6g}"))
    return out


def _threshold(cfg, rec, kind):
    problem, init = rec.problem, rec.init
    if kind == "lnn-thm3":
        rep = check_thm3_premise(init, problem)
        return rep.min_c, rep.satisfied and init.scheme in ("lnn-1", "lnn-2", "lnn-3")
    if init.scheme != "mf-sketch":
        return math.inf, False
    if kind == "gd-thm1":
        if not init.cond > 1:
            return math.inf, False
        cbar = c_threshold_gd(problem, init.d, cfg.init.tau, init.cond)
    else:
        cbar = c_threshold_nag(problem, init.d, cfg.init.tau)
    return cbar, init.c >= cbar


def _oracle_checks(cfg, rec: RunRecord) -> list:
    problem, init, hp = rec.problem, rec.init, rec.result.hp
    m, n = problem.shape
    out = []
    if m * n > dynamics.MAX_EXPLICIT_MN:
        return out
    subject = f"{rec.run_id}:oracle"
    if rec.method in ("gd", "altgd"):
        spec = dynamics.restricted_gd_spectrum(init, hp, problem)
        measured = float(np.max(np.abs(spec)))
        expected = dynamics.contraction_factor("gd", hp.L, hp.mu, hp.eta)
        err = abs(measured - expected)
        out.append(Check("restricted-gd-spectrum", subject, err <= SPECTRUM_TOL, err, SPECTRUM_TOL))
    if rec.method == "nag" and hp.source == "theory-nag" and m * n <= MP_ORACLE_MAX_MN:
        radius, factor = dynamics.restricted_nag_radius_mp(init, problem)
        out.append(Check("restricted-nag-radius", subject, radius <= factor + NAG_RADIUS_TOL, radius,
                         factor + NAG_RADIUS_TOL))
    return out


def verify(cfg: ExperimentConfig, out_dir=None, diagnostics: str | None = None) -> VerifyReport:
    mode = diagnostics or (cfg.diagnostics if cfg.diagnostics != "off" else "sampled")
    cells = execute(cfg, mode, keep_checks=True)
    checks = []
    for cell in cells:
        for rec in sorted(cell.records, key=lambda r: r.seed):
            checks += _run_checks(cfg, rec)
            checks += _oracle_checks(cfg, rec)
    if cfg.verify.prop1_seeds:
        checks.append(_prop1_check(cfg))
    report = VerifyReport(checks)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.name}_verify.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return report


def _prop1_check(cfg) -> Check:
    problem = build_problem(cfg)
    c = resolved_c(cfg.init)
    c = 50.0 * math.sqrt(cfg.init.d) if c == "default" else c
    if not isinstance(c, float | int):
        raise ConfigError("the Monte Carlo check needs a numeric or default c")
    seeds = range(cfg.verify.prop1_seeds)
    rate = prop1_violation_rate(problem, cfg.init.d, cfg.init.tau, float(c), seeds)
    return Check("prop1-monte-carlo", f"{cfg.name}:{len(seeds)} draws", rate <= PROP1_MAX_RATE, rate,
                 PROP1_MAX_RATE)


# ---------------------------------------------------------------------------
# theory curves


def theory(cfg: ExperimentConfig, out_dir=None) -> list:
    """Write bound curves t = 0..theory_iters for every (method, sweep value, seed); no iterations run."""
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    t_max = cfg.output.theory_iters
    for value, sub in cfg.sweep_points():
        problem = build_problem(sub)
        tag = _tag(cfg.sweep.param, value)
        for method in cfg.methods:
            kinds = _theory_kinds(method, problem)
            rows = []
            for seed in cfg.seeds:
                init = initialize(problem, init_config(sub, seed))
                for kind in kinds:
                    curve = dynamics.theory_bound_curve(kind, init, problem, t_max)
                    rid = "-".join(x for x in (method, tag, f"s{seed}", kind) if x)
                    rows += [[rid, method, str(seed), str(t), "", "", "", _num(v)] + [""] * 5
                             for t, v in enumerate(curve)]
            stem = "_".join(x for x in (cfg.name, method, tag, "theory") if x)
            path = out / f"{stem}.csv"
            _write_csv(path, TRACE_FIELDS, rows)
            files.append(path)
    return files


def _theory_kinds(method, problem):
    if problem.kind == "lnn":
        return ("lnn-thm3",) if method == "nag" else ("loss-curve-gd",)
    if method == "nag":
        return ("nag-thm2", "loss-curve-nag")
    return ("gd-thm1", "loss-curve-gd")


def with_overrides(cfg: ExperimentConfig, seeds=None, max_iters=None, eps=None, out=None,
                   diagnostics=None) -> ExperimentConfig:
    from .config import validate

    if seeds is not None:
        cfg = replace(cfg, seeds=tuple(range(seeds)))
    if max_iters is not None or eps is not None:
        cfg = replace(cfg, stop=replace(cfg.stop, **{k: v for k, v in (("max_iters", max_iters), ("eps", eps))
                                                  if v is not None}))
    if out is not None:
        cfg = replace(cfg, output=replace(cfg.output, dir=str(out)))
    if diagnostics is not None:
        cfg = replace(cfg, diagnostics=diagnostics)
    validate(cfg)
    cfg.sweep_points()
    return cfg
