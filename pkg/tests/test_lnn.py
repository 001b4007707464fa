import math

import numpy as np
import pytest

from lowrank.init import ConfigError, InitConfig, colspan_leakage, initialize, interior_spectrum
from lowrank.lnn import (LinearNetworkProblem, check_thm3_premise, corollary_rate, make_lnn_problem, premise_scale,
                         tilde_constants)
from lowrank.optim import StopRule, run


def test_instance_spectrum(lnn_problem):
    p = lnn_problem
    s = interior_spectrum(5, 1.0, 0.5)
    assert s[0] / s[-1] == 2.0
    assert p.rank_D == 5 and p.r == 5
    # V is Gaussian, so cond(D) only concentrates around cond(Sigma) = 2
    assert 1.3 <= math.sqrt(p.kappa) <= 3.0
    assert p.kappa == pytest.approx(p.lam_max / p.lam_min)
    assert p.lam_max >= p.lam_min > 0
    assert p.interpolation_error() <= 1e-12


def test_cond_D_concentrates_over_seeds():
    conds = [math.sqrt(make_lnn_problem(100, 80, 120, seed=s).kappa) for s in range(30)]
    assert abs(np.median(conds) - 2.0) <= 0.5


def test_rank_one_data():
    p = make_lnn_problem(6, 5, 7, rank_D=1, seed=2)
    assert np.linalg.matrix_rank(p.LBL) <= 1 and p.r == 1


def test_label_rank_matches_data_rank():
    hits = sum(make_lnn_problem(10, 8, 12, rank_D=4, seed=s).r == 4 for s in range(100))
    assert hits == 100


@pytest.mark.parametrize("args", [dict(m=0, n=3, N=3), dict(m=3, n=3, N=3, rank_D=4),
                                  dict(m=3, n=3, N=3, rank_D=2, sigma1_D=0.1, sigmar_D=0.5)])
def test_invalid_dims(args):
    with pytest.raises(ConfigError):
        make_lnn_problem(**args)


def test_from_data_shape_mismatch():
    with pytest.raises(ConfigError):
        LinearNetworkProblem.from_data(np.ones((3, 4)), np.ones((2, 2)))


def test_lnn1_colspan(lnn_problem):
    init = initialize(lnn_problem, InitConfig("lnn-1", d=10, seed=1))
    assert colspan_leakage(init.X0, lnn_problem.U_L) <= 1e-10 * np.linalg.norm(init.X0)
    assert init.rank_index == lnn_problem.r


def test_lnn2_unit_condition(lnn_problem):
    for seed in range(3):
        init = initialize(lnn_problem, InitConfig("lnn-2", d=10, c=3.0, seed=seed))
        s = np.linalg.svd(init.X0, compute_uv=False)[: lnn_problem.r]
        assert abs(s[0] / s[-1] - 1.0) <= 1e-12
        assert s[0] == pytest.approx(3.0, rel=1e-12)
        assert check_thm3_premise(init, lnn_problem).leakage <= 1e-10


def test_lnn3_full_rank():
    p = make_lnn_problem(6, 5, 8, rank_D=3, seed=0)
    ok = 0
    for seed in range(200):
        init = initialize(p, InitConfig("lnn-3", d=6, c=1.0, seed=seed))
        ok += np.linalg.svd(init.X0, compute_uv=False)[5] > 0
        assert init.rank_index == 6
    assert ok / 200 >= 0.99
    with pytest.raises(ConfigError):
        initialize(p, InitConfig("lnn-3", d=5, seed=0))


def test_premise_scaling(lnn_problem):
    a = initialize(lnn_problem, InitConfig("lnn-2", d=10, c=1.0, seed=0))
    b = initialize(lnn_problem, InitConfig("lnn-2", d=10, c=2.0, seed=0))
    ra, rb = check_thm3_premise(a, lnn_problem), check_thm3_premise(b, lnn_problem)
    assert rb.mu_tilde == pytest.approx(4 * ra.mu_tilde, rel=1e-12)
    assert rb.p == pytest.approx(ra.p, rel=1e-12)
    assert rb.min_c == pytest.approx(ra.min_c, rel=1e-12)


def test_premise_closed_form_vs_bisection(lnn_problem):
    init = initialize(lnn_problem, InitConfig("lnn-1", d=10, c=1.0, seed=0))
    k = init.rank_index
    rhs_const = 4 * math.sqrt(2) * np.linalg.norm(lnn_problem.LDt)

    def holds(s):
        Lt, mut = tilde_constants(s * init.X0, k, lnn_problem)
        p = math.sqrt(mut / Lt) / 144
        return mut * p >= rhs_const * (1 + p)

    lo, hi = 1e-3, 1e9
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        lo, hi = (lo, mid) if holds(mid) else (mid, hi)
    closed = premise_scale(init.X0, k, lnn_problem)
    assert closed == pytest.approx(hi, rel=1e-6)
    rep = check_thm3_premise(init, lnn_problem)
    assert not rep.satisfied and rep.min_c == pytest.approx(closed, rel=1e-12)


def test_auto_c_satisfies_premise(lnn_problem):
    init = initialize(lnn_problem, InitConfig("lnn-2", d=10, c="auto", seed=0))
    rep = check_thm3_premise(init, lnn_problem)
    assert rep.satisfied
    assert rep.lhs / rep.rhs == pytest.approx(4.0, rel=1e-3)


def test_corollary_rates(lnn_problem):
    p = lnn_problem
    r2 = corollary_rate("lnn-2", p, 10, 0.1)
    assert r2.bound.rate == pytest.approx(1 - 0.5 * math.sqrt(p.lam_min / p.lam_max), rel=1e-14)
    q = make_lnn_problem(6, 5, 8, rank_D=3, seed=0)
    r3 = corollary_rate("lnn-3", q, 6, 0.1, cond_X0=2.0)
    r3_ref = corollary_rate("lnn-2", q, 6, 0.1)
    # width factor d / (tau (d - m + 1)) = m / tau at d = m, on top of the cond(X0) = 2 change in kappa-root
    rk = math.sqrt(q.lam_max / q.lam_min)
    assert r3.iterations == pytest.approx(60 * rk * math.log(1e8), rel=1e-12)
    assert r3_ref.iterations == pytest.approx(rk * math.log(1e8), rel=1e-12)


def test_corollary_ratio(lnn_problem):
    p, d, tau = lnn_problem, 10, 0.1
    r1 = corollary_rate("lnn-1", p, d, tau, cond_X0=3.0)
    r2 = corollary_rate("lnn-2", p, d, tau)
    expected = d * p.cond_labels / (tau * (d - p.r + 1))
    assert r1.iterations / r2.iterations == pytest.approx(expected, rel=1e-12)


def test_corollary_errors(lnn_problem):
    with pytest.raises(ConfigError):
        corollary_rate("lnn-1", lnn_problem, 3, 0.1, cond_X0=2.0)
    with pytest.raises(ConfigError):
        corollary_rate("lnn-3", lnn_problem, 50, 0.1, cond_X0=2.0)
    with pytest.raises(ConfigError):
        corollary_rate("lnn-1", lnn_problem, 10, 0.1)


def test_projected_residual_and_rowspan(lnn_problem):
    p = lnn_problem
    init = initialize(p, InitConfig("lnn-1", d=10, seed=0))
    from lowrank.optim import derive_hyperparams

    hp = derive_hyperparams(init, "nag", p)
    res = run(p, init, "nag", hp, StopRule(1e-6, 300), diagnostics="full", keep_checks=True)
    st = res.state
    np.testing.assert_allclose(st.G, st.R @ p.D.T, rtol=0, atol=1e-12 * np.linalg.norm(st.G))
    assert np.linalg.norm(st.R) <= np.linalg.norm(st.G) / p.sigma_min_D * (1 + 1e-12)
    for X in (init.X0, st.X):
        R = p.residual(X, st.Y)
        assert np.linalg.norm(R) <= np.linalg.norm(p.project(R)) / p.sigma_min_D * (1 + 1e-12)
