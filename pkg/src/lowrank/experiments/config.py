"""Experiment configuration: an INI-style document with typed values.

Example::

    [experiment]
    name = fig2-mf
    methods = ["gd", "nag"]
    seeds = 10                 # shorthand for [0, 1, ..., 9]

    [problem]
    kind = mf
    m = 100
    n = 80
    r = 5

    [init]
    scheme = mf-sketch
    c = default                # 50 sqrt(d); or a number, "auto", or c_scale = k for k sqrt(d)

    [sweep]
    param = d
    values = [5, 10, 20]

Values are Python literals (numbers, quoted strings, lists); anything that
does not parse as a literal is taken as a bare string.  Comments start with
``#`` or ``;``.
"""

from __future__ import annotations

import ast
import configparser
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace

from ..init import LNN_SCHEMES, MF_SCHEMES, ConfigError
from ..optim import DIAGNOSTICS, METHODS, STEP_RULES

MEAN_KINDS = ("arithmetic", "geometric")
BOUND_CHOICES = ("auto", "loss-curve", "none")


class ConfigSyntaxError(ConfigError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "mf"
    m: int = 100
    n: int = 80
    r: int = 5
    sigma1: float = 1.0
    sigma_r: float = 0.2
    profile: str = "geometric"
    N: int = 120
    rank_d: int = 5
    sigma1_d: float = 1.0
    sigmar_d: float = 0.5
    seed: int = 0  # instance seed, shared by every run


MF_KEYS = {"kind", "m", "n", "r", "sigma1", "sigma_r", "profile", "seed"}
LNN_KEYS = {"kind", "m", "n", "N", "rank_d", "sigma1_d", "sigmar_d", "seed"}


@dataclass(frozen=True)
class InitSpec:
    scheme: str = "mf-sketch"
    d: int = 10
    c: float | str = "default"
    c_scale: float | None = None  # c = c_scale * sqrt(d), overrides c
    c2: float = 0.0
    tau: float = 0.1
    auto_method: str = "gd"


@dataclass(frozen=True)
class HyperSpec:
    step_rule: str = "theory"
    eta: float | None = None
    beta: float | None = None
    order: str = "xy"


@dataclass(frozen=True)
class StopSpec:
    eps: float = 1e-8
    max_iters: int = 100_000
    divergence_factor: float = 1e6


@dataclass(frozen=True)
class SweepSpec:
    param: str | None = None
    values: tuple = ()


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    bound: str = "auto"
    mean: str = "arithmetic"
    theory_iters: int = 1000


@dataclass(frozen=True)
class VerifySpec:
    prop1_seeds: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    methods: tuple = ("gd", "nag")
    seeds: tuple = tuple(range(10))
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    init: InitSpec = field(default_factory=InitSpec)
    hyper: HyperSpec = field(default_factory=HyperSpec)
    stop: StopSpec = field(default_factory=StopSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    diagnostics: str = "off"
    output: OutputSpec = field(default_factory=OutputSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)

    def sweep_points(self) -> list:
        """(value, config-with-value-applied) pairs; a single (None, self) without a sweep."""
        if self.sweep.param is None:
            return [(None, self)]
        return [(v, apply_param(self, self.sweep.param, v)) for v in self.sweep.values]


# sweepable name -> (section, key)
SWEEP_PARAMS = {
    "d": ("init", "d"), "c": ("init", "c"), "c_scale": ("init", "c_scale"), "c2": ("init", "c2"),
    "tau": ("init", "tau"), "sigma_r": ("problem", "sigma_r"), "sigma1": ("problem", "sigma1"),
    "m": ("problem", "m"), "n": ("problem", "n"), "r": ("problem", "r"), "N": ("problem", "N"),
    "sigmar_d": ("problem", "sigmar_d"), "step_rule": ("hyper", "step_rule"),
    "eta": ("hyper", "eta"), "beta": ("hyper", "beta"), "order": ("hyper", "order"),
}

_SECTIONS = {"problem": ProblemSpec, "init": InitSpec, "hyper": HyperSpec, "stop": StopSpec,
             "sweep": SweepSpec, "output": OutputSpec, "verify": VerifySpec}
_TOP_KEYS = {"name", "methods", "seeds", "diagnostics"}


def apply_param(cfg: ExperimentConfig, name: str, value) -> ExperimentConfig:
    section, key = SWEEP_PARAMS[name]
    default = getattr(type(getattr(cfg, section))(), key)
    if default is not None and not (section == "init" and key == "c"):
        value = _coerce(value, default, name, None)
    new = replace(getattr(cfg, section), **{key: value})
    if name == "c":
        new = replace(new, c_scale=None)
    out = replace(cfg, **{section: new})
    validate(out)
    return out


def _literal(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def _coerce(value, default, key, line):
    """Match a parsed value to the type of the dataclass default."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigSyntaxError(f"{key} must be true/false", line)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigSyntaxError(f"{key} must be an integer, got {value!r}", line)
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigSyntaxError(f"{key} must be a number, got {value!r}", line)
    return value


class _Lines:
    """Maps (section, key) to the 1-based line where it appears."""

    def __init__(self, text: str):
        self.index = {}
        section = None
        for no, line in enumerate(text.splitlines(), 1):
            s = line.strip()
            m = re.match(r"\[([^\]]+)\]", s)
            if m:
                section = m.group(1).strip()
                self.index.setdefault((section, None), no)
                continue
            m = re.match(r"([A-Za-z_][\w]*)\s*[=:]", s)
            if m and section is not None:
                self.index.setdefault((section, m.group(1)), no)

    def __call__(self, section, key=None):
        return self.index.get((section, key))


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; errors carry the offending line number."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigSyntaxError(str(exc).splitlines()[0], line) from None
    where = _Lines(text)
    kwargs = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "experiment":
            for key, raw in items.items():
                if key not in _TOP_KEYS:
                    raise ConfigSyntaxError(f"unknown key {key!r} in [experiment]", where(section, key))
                kwargs[key] = _parse_top(key, _literal(raw), where(section, key))
            continue
        if section == "diagnostics":
            for key, raw in items.items():
                if key != "mode":
                    raise ConfigSyntaxError(f"unknown key {key!r} in [diagnostics]", where(section, key))
                kwargs["diagnostics"] = _literal(raw)
            continue
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigSyntaxError(f"unknown section [{section}]", where(section))
        defaults = cls()
        names = {f.name for f in fields(cls)}
        values = {}
        for key, raw in items.items():
            line = where(section, key)
            if key not in names:
                raise ConfigSyntaxError(f"unknown key {key!r} in [{section}]", line)
            value = _literal(raw)
            if section == "sweep" and key == "values":
                if not isinstance(value, (list, tuple)) or not value:
                    raise ConfigSyntaxError("sweep values must be a nonempty list", line)
                value = tuple(value)
            elif getattr(defaults, key) is not None and not (section == "init" and key == "c"):
                value = _coerce(value, getattr(defaults, key), key, line)
            elif value is not None and key in ("eta", "beta", "c_scale"):
                value = _coerce(value, 0.0, key, line)
            values[key] = value
        if section == "problem":
            kind = values.get("kind", defaults.kind)
            allowed = MF_KEYS if kind == "mf" else LNN_KEYS
            for key in values:
                if key not in allowed:
                    raise ConfigSyntaxError(f"key {key!r} does not apply to problem kind {kind!r}",
                                            where(section, key))
        kwargs[section] = cls(**values)
    cfg = ExperimentConfig(**kwargs)
    try:
        validate(cfg)
    except ConfigSyntaxError:
        raise
    except ConfigError as exc:
        section, key = getattr(exc, "where", (None, None))
        raise ConfigSyntaxError(str(exc), where(section, key) if section else None) from None
    try:
        cfg.sweep_points()
    except ConfigError as exc:
        raise ConfigSyntaxError(f"sweep value rejected: {exc}", where("sweep", "values")) from None
    return cfg


def _parse_top(key, value, line):
    if key == "name":
        if not isinstance(value, str) or not re.fullmatch(r"[\w.-]+", value):
            raise ConfigSyntaxError("name must be a word (letters, digits, _ . -)", line)
        return value
    if key == "methods":
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, (list, tuple)):
            raise ConfigSyntaxError("methods must be a list", line)
        return tuple(value)
    if key == "seeds":
        if isinstance(value, int) and not isinstance(value, bool):
            if value < 1:
                raise ConfigSyntaxError("seed count must be >= 1", line)
            return tuple(range(value))
        if not isinstance(value, (list, tuple)):
            raise ConfigSyntaxError("seeds must be a count or a list of integers", line)
        return tuple(value)
    return value


def _fail(message, section=None, key=None):
    exc = ConfigError(message)
    exc.where = (section, key)
    raise exc


def validate(cfg: ExperimentConfig) -> None:
    if not cfg.methods:
        _fail("methods list is empty", "experiment", "methods")
    for m in cfg.methods:
        if m not in METHODS:
            _fail(f"unknown method {m!r}; expected one of {METHODS}", "experiment", "methods")
    if len(set(cfg.methods)) != len(cfg.methods):
        _fail("duplicate methods", "experiment", "methods")
    if not cfg.seeds:
        _fail("seeds must be nonempty", "experiment", "seeds")
    for s in cfg.seeds:
        if not isinstance(s, int) or isinstance(s, bool) or not 0 <= s < 2**64:
            _fail(f"seed {s!r} is not a 64-bit unsigned integer", "experiment", "seeds")
    if cfg.diagnostics not in DIAGNOSTICS:
        _fail(f"diagnostics mode must be one of {DIAGNOSTICS}", "diagnostics", "mode")

    p = cfg.problem
    if p.kind not in ("mf", "lnn"):
        _fail(f"problem kind must be mf or lnn, got {p.kind!r}", "problem", "kind")
    if min(p.m, p.n) < 1:
        _fail("m and n must be >= 1", "problem", "m")
    if p.kind == "mf":
        if not 1 <= p.r <= min(p.m, p.n):
            _fail(f"r must lie in [1, min(m, n)]", "problem", "r")
        if not p.sigma1 >= p.sigma_r > 0:
            _fail("need sigma1 >= sigma_r > 0", "problem", "sigma_r")
    else:
        if not 1 <= p.rank_d <= min(p.n, p.N):
            _fail("rank_d must lie in [1, min(n, N)]", "problem", "rank_d")
        if not p.sigma1_d >= p.sigmar_d > 0:
            _fail("need sigma1_d >= sigmar_d > 0", "problem", "sigmar_d")

    i = cfg.init
    schemes = MF_SCHEMES if p.kind == "mf" else LNN_SCHEMES
    if i.scheme not in schemes:
        _fail(f"scheme {i.scheme!r} does not fit problem kind {p.kind!r}; expected one of {schemes}",
              "init", "scheme")
    if i.d < 1:
        _fail("d must be >= 1", "init", "d")
    if p.kind == "mf" and i.d < p.r:
        _fail(f"width d={i.d} is below the target rank r={p.r}", "init", "d")
    if p.kind == "lnn":
        if i.scheme == "lnn-3" and i.d < p.m:
            _fail(f"lnn-3 needs d >= m={p.m}", "init", "d")
        if i.scheme != "lnn-3" and i.d < min(p.m, p.rank_d):
            _fail(f"{i.scheme} needs d >= rank of the labels ({min(p.m, p.rank_d)})", "init", "d")
    if isinstance(i.c, str):
        if i.c not in ("default", "auto"):
            _fail("c must be a number, 'default' or 'auto'", "init", "c")
    elif isinstance(i.c, bool) or not isinstance(i.c, (int, float)) or not i.c > 0:
        _fail("c must be positive", "init", "c")
    if i.c_scale is not None and not i.c_scale > 0:
        _fail("c_scale must be positive", "init", "c_scale")
    if i.c2 < 0:
        _fail("c2 must be nonnegative", "init", "c2")
    if i.c2 > 0 and i.scheme != "mf-general":
        _fail("c2 only applies to scheme mf-general", "init", "c2")
    if not i.tau > 0:
        _fail("tau must be positive", "init", "tau")
    if i.auto_method not in ("gd", "nag"):
        _fail("auto_method must be gd or nag", "init", "auto_method")

    h = cfg.hyper
    if h.step_rule not in STEP_RULES:
        _fail(f"step_rule must be one of {STEP_RULES}", "hyper", "step_rule")
    if h.step_rule in ("manual", "scaled"):
        if h.eta is None or not h.eta > 0:
            _fail(f"{h.step_rule} step rule needs eta > 0", "hyper", "eta")
        if h.beta is not None and not 0 <= h.beta < 1:
            _fail("beta must lie in [0, 1)", "hyper", "beta")
    if h.order not in ("xy", "yx"):
        _fail("order must be xy or yx", "hyper", "order")

    s = cfg.stop
    if not s.eps > 0:
        _fail("eps must be positive", "stop", "eps")
    if s.max_iters < 1:
        _fail("max_iters must be >= 1", "stop", "max_iters")
    if not s.divergence_factor > 1:
        _fail("divergence_factor must exceed 1", "stop", "divergence_factor")

    w = cfg.sweep
    if w.param is not None:
        if w.param not in SWEEP_PARAMS:
            _fail(f"unknown sweep parameter {w.param!r}; expected one of {sorted(SWEEP_PARAMS)}",
                  "sweep", "param")
        if not w.values:
            _fail("sweep values must be nonempty", "sweep", "values")
        if len(set(map(repr, w.values))) != len(w.values):
            _fail("duplicate sweep values", "sweep", "values")
    elif w.values:
        _fail("sweep values given without a param", "sweep", "values")

    o = cfg.output
    if o.bound not in BOUND_CHOICES:
        _fail(f"bound must be one of {BOUND_CHOICES}", "output", "bound")
    if o.mean not in MEAN_KINDS:
        _fail(f"mean must be one of {MEAN_KINDS}", "output", "mean")
    if o.theory_iters < 0:
        _fail("theory_iters must be >= 0", "output", "theory_iters")
    if cfg.verify.prop1_seeds < 0:
        _fail("prop1_seeds must be >= 0", "verify", "prop1_seeds")
    if cfg.verify.prop1_seeds and p.kind != "mf":
        _fail("the Monte Carlo singular-value check needs an mf problem", "verify", "prop1_seeds")


def resolved_c(spec: InitSpec):
    """Numeric c, or the strings 'default'/'auto' for :class:`lowrank.init.InitConfig`."""
    if spec.c_scale is not None:
        return spec.c_scale * math.sqrt(spec.d)
    return spec.c


def _fmt(value) -> str:
    if isinstance(value, str):
        return value if re.fullmatch(r"[\w./+-]+", value) and _literal(value) == value else repr(value)
    if isinstance(value, tuple):
        value = list(value)
    return repr(value)


def serialize(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` (up to comments and key order)."""
    out = ["[experiment]", f"name = {_fmt(cfg.name)}", f"methods = {_fmt(cfg.methods)}"]
    if cfg.seeds == tuple(range(len(cfg.seeds))):
        out.append(f"seeds = {len(cfg.seeds)}")
    else:
        out.append(f"seeds = {_fmt(cfg.seeds)}")
    relevant = MF_KEYS if cfg.problem.kind == "mf" else LNN_KEYS
    for section in ("problem", "init", "hyper", "stop", "sweep", "output", "verify"):
        spec = asdict(getattr(cfg, section))
        keys = [k for k in spec if (section != "problem" or k in relevant) and spec[k] is not None]
        if section == "sweep" and cfg.sweep.param is None:
            continue
        out.append("")
        out.append(f"[{section}]")
        out.extend(f"{k} = {_fmt(spec[k])}" for k in keys)
    out += ["", "[diagnostics]", f"mode = {cfg.diagnostics}", ""]
    return "\n".join(out)
