"""Per-iteration cost of the compiled engine against the numpy fallback.

    python benchmarks/bench_kernels.py [--iters 2000] [--repeat 5]

Prints microseconds per iteration for each (problem, method, d) and the
speedup, and checks that both engines land on the same iterate.
"""

import argparse
import time

import numpy as np

from lowrank._kernels import CompiledEngine, ReferenceEngine
from lowrank.init import InitConfig, initialize, make_mf_problem
from lowrank.lnn import make_lnn_problem
from lowrank.optim import derive_hyperparams


def time_engine(cls, problem, init, method, hp, iters, repeat):
    best = np.inf
    for _ in range(repeat):
        eng = cls(init.X0, init.Y0, init.X0, init.Y0, problem.target, problem.data, method, hp.eta, hp.beta)
        buf = [np.empty(iters) for _ in range(3)]
        t0 = time.perf_counter()
        eng.advance(iters, 0.0, np.inf, init.X0, init.Y0, *buf)
        best = min(best, time.perf_counter() - t0)
    return best / iters * 1e6, eng.X


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if CompiledEngine is None:
        raise SystemExit("compiled engine not built; run `pip install -e . --no-build-isolation`")

    cases = [("mf 100x80", make_mf_problem(100, 80, 5, 1.0, 0.2, seed=0), "mf-sketch"),
             ("lnn 100x80x120", make_lnn_problem(100, 80, 120, seed=0), "lnn-1")]
    print(f"{'problem':<16}{'method':<7}{'d':>4}{'python us':>12}{'cython us':>12}{'speedup':>9}{'max diff':>11}")
    for label, problem, scheme in cases:
        for d in (5, 20):
            init = initialize(problem, InitConfig(scheme, d=d, seed=0))
            for method in ("gd", "altgd", "nag"):
                hp = derive_hyperparams(init, method, problem)
                py, Xp = time_engine(ReferenceEngine, problem, init, method, hp, args.iters, args.repeat)
                cy, Xc = time_engine(CompiledEngine, problem, init, method, hp, args.iters, args.repeat)
                diff = float(np.max(np.abs(Xp - Xc)) / np.max(np.abs(Xp)))
                print(f"{label:<16}{method:<7}{d:>4}{py:>12.1f}{cy:>12.1f}{py / cy:>9.2f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
