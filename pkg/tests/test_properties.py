import math

import numpy as np
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lpbsde.bsde_engine import truncate_q
from lpbsde.estimates_lab import segment_integral
from lpbsde.jump_paths import sample_poisson_measure, stochastic_integral
from lpbsde.levy_measure import Atomic, AtomValues, PowerLaw, moment_integral
from lpbsde.sum_norms import dual_norm, pairing_bound_check, sum_norm, threshold_bound
from lpbsde.sum_norms import _objective
from lpbsde.tech_inequality import (TechIneqParams, gamma_fn, psi_fn, psi_reduced, reduce)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
pos = st.floats(0.05, 5.0)
p_st = st.floats(1.01, 1.99)


@st.composite
def atomic_instance(draw, max_atoms=4):
    n = draw(st.integers(1, max_atoms))
    w = np.array(draw(st.lists(pos, min_size=n, max_size=n)))
    vals = np.array(draw(st.lists(finite, min_size=n, max_size=n)))
    return Atomic(np.arange(1, n + 1, dtype=float), w), vals


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 1.95), st.floats(0, 3), st.floats(0.1, 10))
def test_power_law_split_adds_up(alpha, q, delta):
    m = PowerLaw(alpha, cutoff=20.0)
    below = moment_integral(m, q, "below", delta)
    above = moment_integral(m, q, "above", delta)
    total = moment_integral(m, q, "all")
    if math.isfinite(below) and math.isfinite(total):
        assert abs(below + above - total) <= 1e-10 * max(1.0, total)


@settings(max_examples=40, deadline=None)
@given(atomic_instance(), atomic_instance(), st.sampled_from([1.0, 1.5]), st.floats(-5, 5))
def test_sum_norm_is_a_norm(inst1, inst2, q, c):
    m, a = inst1
    b = np.resize(inst2[1], len(a))
    na = sum_norm(AtomValues(a), m, q).value
    nb = sum_norm(AtomValues(b), m, q).value
    nab = sum_norm(AtomValues(a + b), m, q).value
    assert nab <= (na + nb) * (1 + 1e-9) + 1e-12
    nca = sum_norm(AtomValues(c * a), m, q).value
    assert abs(nca - abs(c) * na) <= 1e-9 * max(1.0, abs(c) * na)


@settings(max_examples=40, deadline=None)
@given(atomic_instance(), st.floats(1.05, 1.95))
def test_sum_norm_below_threshold_family_and_contained(inst, p):
    m, a = inst
    phi = AtomValues(a)
    res = sum_norm(phi, m, p)
    assert res.value <= threshold_bound(phi, m, p)[0] * (1 + 1e-12) + 1e-15
    assert math.isfinite(sum_norm(phi, m, 1.0).value)


@settings(max_examples=40, deadline=None)
@given(atomic_instance(), st.floats(1.0, 1.95), st.floats(0, 1))
def test_split_objective_convex(inst, q, theta):
    m, a = inst
    r = np.abs(a)
    rng = np.random.default_rng(0)
    s1, s2 = rng.uniform(0, 1, len(r)) * r, rng.uniform(0, 1, len(r)) * r
    mix = _objective(theta * s1 + (1 - theta) * s2, r, m.weights, q)
    assert mix <= theta * _objective(s1, r, m.weights, q) + (1 - theta) * _objective(s2, r, m.weights, q) + 1e-9


@settings(max_examples=60, deadline=None)
@given(atomic_instance(3), st.data())
def test_pairing_bound(inst, data):
    m, a = inst
    n = len(a)
    ell = np.array(data.draw(st.lists(finite, min_size=n, max_size=n)))
    b = np.array(data.draw(st.lists(finite, min_size=n, max_size=n)))
    rep = pairing_bound_check(dual_norm(AtomValues(ell), m), AtomValues(a), AtomValues(b), m)
    assert rep.ok


@settings(max_examples=200, deadline=None)
@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite), st.floats(0.01, 100), p_st)
def test_scaling_and_reduction(a, b, lam, p):
    assume(np.linalg.norm(a) > 1e-3)
    P = TechIneqParams(p, 1.0)
    s_psi = psi_fn(lam * a, lam * b, p)
    assert abs(s_psi - lam ** p * psi_fn(a, b, p)) <= 1e-10 * max(1.0, abs(s_psi))
    s_g = gamma_fn(lam * a, lam * b, P.K, P.eps, p)
    g = gamma_fn(a, b, P.K, P.eps, p)
    assert abs(s_g - lam ** p * g) <= 1e-10 * max(1.0, abs(s_g))
    t, tau2 = reduce(a, b)
    red = np.linalg.norm(a) ** p * psi_reduced(t, tau2, p)
    assert abs(psi_fn(a, b, p) - red) <= 1e-10 * max(1.0, abs(red), np.linalg.norm(b) ** p)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 2, elements=finite), arrays(float, 2, elements=finite),
       arrays(float, 2, elements=finite), st.floats(0, 1), p_st)
def test_psi_convex_in_b(a, b1, b2, theta, p):
    mix = psi_fn(a, theta * b1 + (1 - theta) * b2, p)
    assert mix <= theta * psi_fn(a, b1, p) + (1 - theta) * psi_fn(a, b2, p) + 1e-10 * (1 + abs(mix))


@settings(max_examples=100, deadline=None)
@given(arrays(float, 3, elements=st.floats(-1e6, 1e6)), st.floats(0.01, 1e3))
def test_truncation_ball_and_idempotent(x, n):
    y = truncate_q(x, n)
    assert np.linalg.norm(y) <= n * (1 + 1e-12)
    assert np.allclose(truncate_q(y, n), y, rtol=1e-12, atol=0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 2), st.floats(0, 2), p_st)
def test_segment_integral_additive(a, l1, l2, p):
    for kind in ("I1", "I2"):
        whole = segment_integral(a, a + l1 + l2, p, kind)
        parts = segment_integral(a, a + l1, p, kind) + segment_integral(a + l1, a + l1 + l2, p, kind)
        assert abs(whole - parts) <= 1e-10 * (1 + abs(whole))
        assert whole >= -1e-15


@settings(max_examples=30, deadline=None)
@given(atomic_instance(3), st.integers(0, 2 ** 32), st.booleans())
def test_quadratic_variation_is_jump_sum(inst, seed, comp):
    m, a = inst
    psi = AtomValues(a)
    ev = sample_poisson_measure(m, 2.0, seed, 0)
    ip = stochastic_integral(psi, ev, m, 2.0, compensate=comp)
    assert ip.qv_terminal == float(np.sum(psi.values[ev.atoms, 0] ** 2)) or \
        abs(ip.qv_terminal - np.sum(psi.values[ev.atoms, 0] ** 2)) <= 1e-12 * (1 + ip.qv_terminal)
