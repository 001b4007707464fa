"""Built-in experiment configurations."""

from __future__ import annotations

from dataclasses import replace

from ..init import ConfigError
from .config import (ExperimentConfig, HyperSpec, InitSpec, OutputSpec, ProblemSpec, StopSpec,
                     SweepSpec, VerifySpec)

SEEDS = tuple(range(10))
D_SWEEP = SweepSpec("d", (5, 10, 20))

MF = ProblemSpec(kind="mf", m=100, n=80, r=5, sigma1=1.0, sigma_r=0.2)
LNN = ProblemSpec(kind="lnn", m=100, n=80, N=120, rank_d=5, sigma1_d=1.0, sigmar_d=0.5)


def _fig1() -> ExperimentConfig:
    return ExperimentConfig(
        name="fig1", methods=("gd", "altgd"), seeds=SEEDS, problem=MF,
        init=InitSpec("mf-sketch", d=10), stop=StopSpec(1e-8, 100_000),
        sweep=SweepSpec("step_rule", ("theory", "1/L")),
    )


def _fig1_lnn() -> ExperimentConfig:
    return replace(_fig1(), name="fig1-lnn", problem=LNN, init=InitSpec("lnn-1", d=10))


def _fig2_mf() -> ExperimentConfig:
    return ExperimentConfig(
        name="fig2-mf", methods=("gd", "nag"), seeds=SEEDS, problem=MF,
        init=InitSpec("mf-sketch"), stop=StopSpec(1e-8, 200_000), sweep=D_SWEEP,
    )


def _fig2_lnn() -> ExperimentConfig:
    return replace(_fig2_mf(), name="fig2-lnn", problem=LNN, init=InitSpec("lnn-1"))


def _fig3() -> ExperimentConfig:
    # GD at eta = 1/L: its slowest linear mode then decays at exactly 1 - mu/L
    return ExperimentConfig(
        name="fig3", methods=("gd", "nag"), seeds=SEEDS, problem=MF,
        init=InitSpec("mf-sketch", d=20, c_scale=200.0), hyper=HyperSpec(step_rule="1/L"),
        stop=StopSpec(1e-12, 200_000), sweep=SweepSpec("sigma_r", (0.1, 0.01)),
        output=OutputSpec(bound="loss-curve"),
    )


def _fig4_large() -> ExperimentConfig:
    return replace(_fig2_mf(), name="fig4-large", problem=replace(MF, m=1200, n=1000),
                   diagnostics="off")


def _fig4_large_lnn() -> ExperimentConfig:
    return replace(_fig2_lnn(), name="fig4-large-lnn", problem=replace(LNN, m=500, n=400, N=600))


def _fig5() -> ExperimentConfig:
    return ExperimentConfig(
        name="fig5", methods=("gd", "nag"), seeds=SEEDS, problem=MF,
        init=InitSpec("mf-sketch", d=20), stop=StopSpec(1e-8, 100_000),
        sweep=SweepSpec("c_scale", (1.0, 5.0, 10.0, 50.0, 100.0)),
    )


def _fig6() -> ExperimentConfig:
    return ExperimentConfig(
        name="fig6", methods=("gd", "nag"), seeds=SEEDS, problem=MF,
        init=InitSpec("mf-general", d=20, c=50.0), stop=StopSpec(1e-8, 100_000),
        sweep=SweepSpec("c2", (0.0, 0.1, 1.0)),
    )


def _prop1() -> ExperimentConfig:
    return ExperimentConfig(
        name="prop1", methods=("gd",), seeds=tuple(range(1000)),
        problem=ProblemSpec(kind="mf", m=50, n=40, r=3, sigma1=1.0, sigma_r=0.2),
        init=InitSpec("mf-sketch", d=10, tau=0.05), stop=StopSpec(1e-8, 2_000),
        verify=VerifySpec(prop1_seeds=1000),
    )


def _tiny() -> ExperimentConfig:
    return ExperimentConfig(
        name="tiny", methods=("gd", "altgd", "nag"), seeds=tuple(range(5)),
        problem=ProblemSpec(kind="mf", m=3, n=2, r=1, sigma1=1.0, sigma_r=1.0),
        # r = 1 makes L = mu, where theory steps solve in one iteration; eta = 0.5/L keeps it geometric
        init=InitSpec("mf-sketch", d=2), hyper=HyperSpec(step_rule="scaled", eta=0.5, beta=0.2),
        stop=StopSpec(1e-6, 100), diagnostics="full",
    )


PRESETS = {
    "fig1": _fig1, "fig1-lnn": _fig1_lnn, "fig2-mf": _fig2_mf, "fig2-lnn": _fig2_lnn,
    "fig3": _fig3, "fig4-large": _fig4_large, "fig4-large-lnn": _fig4_large_lnn,
    "fig5": _fig5, "fig6": _fig6, "prop1": _prop1, "tiny": _tiny,
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None
