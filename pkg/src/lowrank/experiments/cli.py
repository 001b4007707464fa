"""Command-line entry point: ``lowrank {run,verify,theory,preset}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..init import ConfigError
from ..optim import DIAGNOSTICS
from .config import parse_config, serialize
from .presets import PRESETS, preset
from .runner import run_experiment, theory, verify, with_overrides

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VERIFY = 4


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lowrank", description="GD / NAG for low-rank factorization experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="config file, or a preset name")
        p.add_argument("--seeds", type=_positive_int, metavar="N", help="use seeds 0..N-1")
        p.add_argument("--max-iters", type=_positive_int, metavar="K")
        p.add_argument("--eps", type=_positive_float, metavar="E", help="relative residual tolerance")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--diagnostics", choices=DIAGNOSTICS)

    common(sub.add_parser("run", help="run the experiment and write trace CSVs"))
    common(sub.add_parser("verify", help="run with diagnostics and check the invariants"))
    common(sub.add_parser("theory", help="write theory bound curves only"))
    p = sub.add_parser("preset", help="write a built-in config to DIR/<name>.cfg")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--out", metavar="DIR", default=".")
    return ap


def load_config(source: str):
    path = Path(source)
    if path.is_file():
        return parse_config(path.read_text(encoding="utf-8"))
    if source in PRESETS:
        return preset(source)
    raise ConfigError(f"no such config file or preset: {source}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "preset":
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"{args.name}.cfg"
            path.write_text(serialize(preset(args.name)), encoding="utf-8")
            print(path)
            return EXIT_OK
        cfg = with_overrides(load_config(args.config), args.seeds, args.max_iters, args.eps, args.out,
                             args.diagnostics)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        result = run_experiment(cfg)
        for f in result.files:
            print(f)
        if result.any_diverged:
            print(f"diverged: {', '.join(result.diverged)}", file=sys.stderr)
            return EXIT_DIVERGED
        return EXIT_OK
    if args.command == "theory":
        for f in theory(cfg):
            print(f)
        return EXIT_OK

    report = verify(cfg, out_dir=cfg.output.dir)
    for c in report.checks:
        status = "PASS" if c.passed else ("FAIL" if c.asserted else "info")
        print(f"{status} {c.name} {c.subject} measured={c.measured:.6g} limit={c.limit:.6g} {c.detail}".rstrip())
    failures = report.failures()
    print(f"{len(report.checks) - len(failures)}/{len(report.checks)} checks ok")
    if failures:
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
