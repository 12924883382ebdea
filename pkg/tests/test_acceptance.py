"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest

from lpbsde.bsde_engine import make_problem, max_node_error, residual_check, solve_backward
from lpbsde.cli import main as cli_main
from lpbsde.estimates_lab import counterexample_gap, martingale_isometry_check, truncation_study
from lpbsde.jump_paths import sample_poisson_measure, simulate_paths, to_arrays, uniform_grid
from lpbsde.levy_measure import Atomic, AtomValues, PowerLaw, moment_integral
from lpbsde.sum_norms import (sum_norm, sum_norm_bruteforce, threshold_bound,
                              time_integrated_bound_check)
from lpbsde.tech_inequality import TechIneqParams, certificate_sweep, check_inequality

KS = (0, 1, 5)
PS = (1.1, 1.3, 1.5, 1.7, 1.9)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


def test_criterion_01_lemma_grid(report):
    t0 = time.perf_counter()
    worst, bad = math.inf, []
    for K in KS:
        for p in PS:
            rep = check_inequality(TechIneqParams(p, K))
            worst = min(worst, rep.min_slack)
            if not rep.ok:
                bad.append((K, p, rep.n_violations))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed <= 60
    report(1, ok, f"15 cells, violations={bad or 0}, min slack={worst:.3e}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_certificates(report):
    t0 = time.perf_counter()
    failed = []
    for K in KS:
        for p in PS:
            out = certificate_sweep(TechIneqParams(p, K), n=10_000, seed=K * 100 + int(p * 10))
            if not out["ok"] or out["n_inner"] != 10_000 or out["n_outer"] != 10_000:
                failed.append((K, p, out["failures"]))
    elapsed = time.perf_counter() - t0
    ok = not failed and elapsed <= 60
    report(2, ok, f"15 cells x 2 cases x 1e4 points, failures={len(failed)}, {elapsed:.1f}s")
    assert ok, failed


def test_criterion_03_counterexample_recovery(report):
    t0 = time.perf_counter()
    prob = make_problem("counterexample")
    sc = to_arrays(simulate_paths(prob.measure, uniform_grid(1.0, 64), 100, 7), prob.measure)
    sol = solve_backward(prob.generator, prob.terminal, sc, prob.measure, "markov-exact")
    err = max_node_error(sol, prob, sc)
    res = residual_check(sol, prob.generator, prob.terminal, sc, prob.measure, tol=1e-10)
    psi_err = float(np.max(np.abs(sol.psi - 1.0)))
    z_max = float(np.max(np.abs(sol.Z))) if sol.Z.size else 0.0
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-10 and res.ok and psi_err <= 1e-10 and z_max == 0.0 and elapsed <= 10
    report(3, ok, f"max |Y - (N_t - (T-t))|={err:.2e}, residual={res.per_step_max.max():.2e}, "
                  f"max |psi-1|={psi_err:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_04_counterexample_gap(report):
    t0 = time.perf_counter()
    m = Atomic([[1.0]], [1.0])
    jumps = [sample_poisson_measure(m, 1.0, 2024, i).times for i in range(100_000)]
    rows = [counterexample_gap(p, 1.0, jumps=jumps) for p in PS]
    elapsed = time.perf_counter() - t0
    ok = all(r.ok for r in rows) and elapsed <= 300
    sig = ", ".join(f"p={r.p}: {r.gap:.4f} ({r.significance:.0f} se)" for r in rows)
    report(4, ok, f"I2 - I1 at 1e5 paths: {sig}; {elapsed:.1f}s")
    assert ok


def test_criterion_05_sum_norm_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240605)
    worst_gap, worst_excess = 0.0, -math.inf
    for _ in range(200):
        n = int(rng.integers(1, 4))
        m = Atomic(rng.choice(np.arange(1, 20), n, replace=False).astype(float), rng.uniform(0.05, 5.0, n))
        phi = AtomValues(rng.normal(0.0, 3.0, n))
        q = float(rng.choice([1.0, 1.1, 1.3, 1.5, 1.7, 1.9]))
        val = sum_norm(phi, m, q).value
        brute = sum_norm_bruteforce(phi, m, q)
        worst_gap = max(worst_gap, abs(val - brute))
        worst_excess = max(worst_excess, val - threshold_bound(phi, m, q)[0])
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-6 and worst_excess <= 1e-12 and elapsed <= 120
    report(5, ok, f"200 instances, max |solver - brute|={worst_gap:.2e}, "
                  f"max excess over threshold bound={worst_excess:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_06_closed_form_integrals(report):
    checks = [(moment_integral(PowerLaw(1.5), 2.0, "below", 1.0), 4.0),
              (moment_integral(PowerLaw(1.5), 1.0, "above", 1.0), 4.0)]
    for alpha in (1.1, 1.3, 1.5, 1.7, 1.9):
        for delta in (0.01, 0.5, 1.0, 3.0):
            checks.append((moment_integral(PowerLaw(alpha), 2.0, "below", delta),
                           2 * delta ** (2 - alpha) / (2 - alpha)))
            checks.append((moment_integral(PowerLaw(alpha), 1.0, "above", delta),
                           2 * delta ** (1 - alpha) / (alpha - 1)))
    worst = max(abs(a - b) / max(1.0, abs(b)) for a, b in checks)
    ok = worst <= 1e-10
    report(6, ok, f"{len(checks)} split integrals, worst error={worst:.2e}")
    assert ok


def test_criterion_07_martingale_isometry(report):
    cases = [(Atomic([[1.0]], [1.0]), AtomValues([[1.0]]), 1.0),
             (Atomic([[1.0], [-0.5], [2.0]], [0.7, 2.0, 0.3]), AtomValues([[1.0], [-2.0], [0.5]]), 2.0)]
    lines, ok = [], True
    for k, (m, psi, T) in enumerate(cases):
        rep = martingale_isometry_check(psi, m, T, 100_000, 77 + k)
        ok = ok and rep.mean_ok and rep.isometry_ok
        lines.append(f"mean={rep.mean:+.4f}+-{rep.mean_se:.4f}, E N^2={rep.second_moment:.4f}"
                     f"+-{rep.second_se:.4f} vs {rep.isometry_target:.4f}")
    report(7, ok, "; ".join(lines))
    assert ok


def test_criterion_08_truncation_stability(report):
    st = truncation_study("counterexample", levels=(1, 2, 4, 8, 16), p=1.5, T=1.0, n_steps=32,
                          n_paths=20_000, seed=8, intensity=3.0)
    ok = st.decreasing
    report(8, ok, "successive E^p differences " + ", ".join(f"{d:.4g}" for d in st.differences))
    assert ok


STOCHASTIC_RUNS = [
    ["simulate", "--paths", "300", "--grid-steps", "8"],
    ["solve", "--paths", "300", "--grid-steps", "16"],
    ["counterexample", "--paths", "3000", "--p", "1.3,1.7"],
    ["apriori", "--paths", "500", "--grid-steps", "8"],
    ["bdg", "--paths", "3000"],
    ["bj", "--paths", "3000"],
    ["ep-norms", "--paths", "3000", "--grid-steps", "8"],
]


def test_criterion_09_determinism(report, tmp_path):
    differing = []
    for k, cmd in enumerate(STOCHASTIC_RUNS):
        blobs = []
        for run, threads in enumerate((1, 1, 4)):
            out = tmp_path / f"{k}_{run}.json"
            code = cli_main(cmd + ["--seed", "31", "--threads", str(threads), "--out", str(out)])
            assert code == 0, cmd
            blobs.append(out.read_bytes())
        doc = json.loads(blobs[0])
        assert doc["seed"] == 31 and "version" in doc and "config" in doc
        if len(set(blobs)) != 1:
            differing.append(cmd[0])
    ok = not differing
    report(9, ok, f"{len(STOCHASTIC_RUNS)} stochastic subcommands byte-identical across runs and "
                  f"--threads 1/4" + (f"; differing: {differing}" if differing else ""))
    assert ok


def test_criterion_10_time_integrated_bound(report):
    rng = np.random.default_rng(6)
    failures, n = 0, 0
    for T in (0.25, 1.0, 4.0):
        for _ in range(100):
            n_atoms = int(rng.integers(1, 4))
            n_steps = int(rng.integers(1, 5))
            m = Atomic(rng.choice(np.arange(1, 10), n_atoms, replace=False).astype(float),
                       rng.uniform(0.1, 3.0, n_atoms))
            grid = np.concatenate([[0.0], np.sort(rng.uniform(0, T, n_steps - 1)), [T]])
            slices = rng.normal(0.0, rng.uniform(0.1, 5.0), (n_steps, n_atoms, 1))
            rep = time_integrated_bound_check(slices, m, grid)
            n += 1
            failures += not rep.ok
    ok = failures == 0
    report(10, ok, f"{n} piecewise instances over T in {{0.25, 1, 4}}, failures={failures}")
    assert ok
