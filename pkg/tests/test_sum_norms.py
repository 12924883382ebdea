import math

import numpy as np
import pytest

from lpbsde.levy_measure import Atomic, AtomValues, PowerForm, PowerLaw
from lpbsde.sum_norms import (dual_norm, lp_norm, pairing_bound_check, sum_norm,
                              sum_norm_bruteforce, threshold_bound, threshold_split,
                              time_integrated_bound_check)

UNIT = Atomic([[1.0]], [1.0])


def test_lp_norm_examples():
    assert lp_norm(AtomValues([[-3.0]]), UNIT, 2.0) == 3.0
    assert abs(lp_norm(PowerForm(1.0, lo=1.0), PowerLaw(1.5), 1.0) - 4.0) <= 1e-10
    assert lp_norm(AtomValues([[0.0]]), UNIT, 1.0) == 0.0


def test_threshold_split_atoms():
    low, high = threshold_split(AtomValues([[0.5], [3.0]]), 1.0)
    assert low.values.ravel().tolist() == [0.5, 0.0]
    assert high.values.ravel().tolist() == [0.0, 3.0]
    low, high = threshold_split(AtomValues([[0.5], [3.0]]), 10.0)
    assert np.all(high.values == 0) and low.values.ravel().tolist() == [0.5, 3.0]


def test_threshold_split_power_form():
    low, high = threshold_split(PowerForm(1.0), 1.0)
    assert (low.lo, low.hi) == (0.0, 1.0)
    assert (high.lo, high.hi) == (1.0, math.inf)


def test_single_atom_sum_norm():
    for v in (-2.0, 0.3, 7.0):
        assert sum_norm(AtomValues([[v]]), UNIT, 1.5).value == pytest.approx(abs(v), abs=1e-12)
        assert sum_norm(AtomValues([[v]]), Atomic([[1.0]], [4.0]), 1.0).value == pytest.approx(2 * abs(v), abs=1e-12)


def test_zero_function():
    res = sum_norm(AtomValues([[0.0], [0.0]]), Atomic([[1.0], [2.0]], [1.0, 1.0]))
    assert res.value == 0.0
    assert np.all(res.decomposition[0].values == 0) and np.all(res.decomposition[1].values == 0)


def test_power_form_reports_threshold_bound():
    res = sum_norm(PowerForm(1.0), PowerLaw(1.5), 1.2)
    assert res.method == "threshold-upper-bound" and math.isinf(res.gap)
    assert math.isfinite(res.value)


def test_against_bruteforce_small():
    rng = np.random.default_rng(11)
    for _ in range(4):
        n = rng.integers(1, 4)
        m = Atomic(np.arange(1, n + 1, dtype=float), rng.uniform(0.05, 5, n))
        phi = AtomValues(rng.normal(0, 3, n))
        q = float(rng.choice([1.0, 1.3, 1.7]))
        assert abs(sum_norm(phi, m, q).value - sum_norm_bruteforce(phi, m, q)) <= 1e-6


def test_dual_norm_examples():
    d = dual_norm(AtomValues([[1.0]]), UNIT)
    assert (d.sup_norm, d.l2_norm) == (1.0, 1.0)
    d = dual_norm(AtomValues([[1.0], [-1.0]]), Atomic([[1.0], [2.0]], [1.0, 1.0]))
    assert d.sup_norm == 1.0 and d.l2_norm == pytest.approx(math.sqrt(2))
    d = dual_norm(AtomValues([[0.0]]), UNIT)
    assert d.value == 0.0


def test_dual_norm_flags_infinite_l2():
    d = dual_norm(PowerForm(1.0), PowerLaw(1.5))
    assert d.flagged


def test_pairing_examples():
    ell = dual_norm(AtomValues([[1.0]]), UNIT)
    rep = pairing_bound_check(ell, AtomValues([[2.0]]), AtomValues([[2.0]]), UNIT)
    assert rep.lhs == 0.0 and rep.ok
    rep = pairing_bound_check(ell, AtomValues([[2.5]]), AtomValues([[0.0]]), UNIT)
    assert rep.lhs == pytest.approx(2.5) and rep.rhs == pytest.approx(2.5) and rep.ok


def test_time_integrated_examples():
    m = Atomic([[1.0], [-1.0]], [1.0, 0.5])
    grid = np.linspace(0, 1, 5)
    assert time_integrated_bound_check(np.zeros((4, 2)), m, grid).lhs == 0.0
    const = np.tile([[1.0], [2.0]], (4, 1, 1))
    rep = time_integrated_bound_check(const, m, grid)
    assert rep.ok
    rng = np.random.default_rng(2)
    rep = time_integrated_bound_check(rng.normal(size=(3, 2)), m, np.linspace(0, 4, 4))
    assert rep.ok and rep.details["factor"] == 2.0


def test_threshold_bound_dominates():
    rng = np.random.default_rng(5)
    m = Atomic(np.arange(1, 6, dtype=float), rng.uniform(0.1, 3, 5))
    phi = AtomValues(rng.normal(size=5))
    for q in (1.0, 1.5):
        res = sum_norm(phi, m, q)
        assert res.value <= threshold_bound(phi, m, q)[0] + 1e-12
        assert res.lower_bound <= res.value + 1e-12
