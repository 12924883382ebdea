import math

import mpmath
import numpy as np
import pytest

from lpbsde.tech_inequality import (TechIneqParams, alpha_const, certificate_sweep, check_inequality,
                                    epsilon_max, epsilon_sufficient, gamma_fn, gamma_reduced, h_fn,
                                    proof_certificate, psi_fn, psi_reduced, reduce, vartheta)

PS = (1.1, 1.3, 1.5, 1.7, 1.9)


def test_vartheta_examples():
    for p in PS:
        assert vartheta((p - 1) / 2, p) == 0.0
    mpmath.mp.dps = 40
    ref = mpmath.sqrt(mpmath.mpf(17) / 2) - 1
    assert abs(vartheta(0.125, 1.5) - float(ref)) <= 1e-14
    assert vartheta(0.125, 1.5) == pytest.approx(1.91548, abs=1e-5)


def test_vartheta_decreasing_in_eps():
    eps = np.geomspace(1e-6, 0.249, 200)
    vals = np.array([vartheta(e, 1.5) for e in eps])
    assert np.all(np.diff(vals) < 0)


def test_alpha_constant_values():
    assert alpha_const(0, 1.5) == 81.0
    assert alpha_const(1, 1.5) == 289.0
    assert alpha_const(5, 1.1) == pytest.approx(49.0 ** 10)


def test_closed_form_epsilon_choice():
    # (p-1) / (2 (alpha+1)^{2-p}) at K=1, p=1.5 is 0.5 / (2 sqrt(290))
    assert epsilon_sufficient(1, 1.5) == pytest.approx(0.5 / (2 * math.sqrt(290)), rel=1e-14)
    assert epsilon_sufficient(1, 1.5) == pytest.approx(0.014681, abs=5e-7)


@pytest.mark.parametrize("K", [0, 1, 5])
@pytest.mark.parametrize("p", PS)
def test_epsilon_max_reaches_alpha(K, p):
    e = epsilon_max(K, p)
    assert 0 < e <= epsilon_sufficient(K, p) < (p - 1) / 2
    assert vartheta(e, p) >= alpha_const(K, p)
    assert TechIneqParams(p, K).admissible


def test_epsilon_max_shrinks_as_p_decreases():
    for K in (0, 1, 5):
        vals = [epsilon_max(K, p) for p in PS]
        assert all(a < b for a, b in zip(vals, vals[1:]))


def test_psi_examples():
    a = np.array([0.3, -1.2])
    assert psi_fn(a, np.zeros(2), 1.5) == 0.0
    b = np.array([1.0, 2.0])
    assert psi_fn(np.zeros(2), b, 1.5) == pytest.approx(np.linalg.norm(b) ** 1.5)
    assert psi_fn(1.0, 1.0, 1.5) == pytest.approx(2 ** 1.5 - 2.5, abs=1e-14)
    assert psi_fn(1.0, 1.0, 1.5) == pytest.approx(0.32843, abs=1e-5)


def test_gamma_examples():
    assert gamma_fn(np.zeros(3), np.ones(3), 2.0, 0.01, 1.5) == 0.0
    assert gamma_fn(np.ones(3), np.zeros(3), 2.0, 0.01, 1.5) == 0.0
    assert gamma_fn(1.0, 1.0, 0.0, 0.0146, 1.5) == pytest.approx(1.5 * 0.0146)


def test_reduce_examples():
    a = np.array([1.0, 2.0, -1.0])
    t, tau2 = reduce(a, 2 * a)
    assert t == pytest.approx(2.0) and tau2 == pytest.approx(0.0, abs=1e-15)
    t, tau2 = reduce(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert (t, tau2) == (0.0, 1.0)
    with pytest.raises(ValueError):
        reduce(np.zeros(2), np.ones(2))


def test_reduced_examples():
    assert psi_reduced(0.0, 0.0, 1.7) == 0.0
    for tau2 in (0.0, 0.4, 3.0):
        assert psi_reduced(-1.0, tau2, 1.5) == pytest.approx(tau2 ** 0.75 - 1 + 1.5, abs=1e-14)
    assert psi_reduced(1.0, 0.0, 1.5) == pytest.approx(psi_fn(1.0, 1.0, 1.5), rel=1e-14)


def test_reduction_consistency_random():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(500, 3))
    b = rng.normal(size=(500, 3)) * rng.uniform(0.01, 10, (500, 1))
    P = TechIneqParams(1.5, 1.0)
    t, tau2 = reduce(a, b)
    na = np.linalg.norm(a, axis=1)
    assert np.allclose(psi_fn(a, b, 1.5), na ** 1.5 * psi_reduced(t, tau2, 1.5), rtol=1e-10, atol=0)
    assert np.allclose(gamma_fn(a, b, P.K, P.eps, 1.5),
                       na ** 1.5 * gamma_reduced(t, tau2, P.K, P.eps, 1.5), rtol=1e-10, atol=0)


def test_grid_check_standard_cell():
    rep = check_inequality(TechIneqParams(1.5, 0))
    assert rep.ok and rep.n_points > 125_000


def test_origin_has_zero_slack():
    P = TechIneqParams(1.5, 0)
    assert psi_reduced(0.0, 0.0, 1.5) - gamma_reduced(0.0, 0.0, 0.0, P.eps, 1.5) == 0.0


def test_falsification_run_with_inadmissible_eps():
    # eps at the upper end with K = 5: vartheta = 0 and the linear branch takes over
    rep = check_inequality(TechIneqParams(1.5, 5, eps=0.25))
    assert not rep.ok and rep.n_violations > 0
    assert len(rep.violations) <= 20 and rep.min_slack < 0


def test_certificate_examples():
    P = TechIneqParams(1.5, 0)
    c = proof_certificate(0.0, 0.01, P)
    assert c.case == "inner" and c.ok
    c = proof_certificate(-1.0, 0.0, P)
    assert c.sigma_at_minus1 == pytest.approx(1.5 - 1 - 1.5 * P.eps)
    assert c.sigma_at_minus1 > 0 and c.ok
    c = proof_certificate(2 * P.vartheta, 0.0, P)
    assert c.case == "outer" and c.ok and c.h_at_threshold >= 0


def test_delta_star_is_stationary():
    P = TechIneqParams(1.3, 1)
    c = proof_certificate(0.2, 0.5, P)
    assert -1.0 < c.delta_star < c.Upsilon
    assert c.sigma_prime_at_zero <= 0


def test_h_nonnegative_beyond_alpha():
    for K in (0, 1, 5):
        for p in PS:
            a = alpha_const(K, p)
            xs = a * np.geomspace(1, 1e3, 50)
            assert np.all(h_fn(xs, K, p) >= 0)


def test_certificate_sweep_small():
    out = certificate_sweep(TechIneqParams(1.7, 1), n=500, seed=1)
    assert out["ok"] and out["n_inner"] == 500 and out["n_outer"] == 500


def test_invalid_p_rejected():
    with pytest.raises(ValueError):
        TechIneqParams(2.0)
    with pytest.raises(ValueError):
        vartheta(0.1, 1.0)
