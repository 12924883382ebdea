"""Monte Carlo checks of the solution norms and moment inequalities.

All expectations are reported with a batch-mean standard error: paths are
split into contiguous batches (at least 30 when there are enough paths) and
the standard error is the spread of the batch means.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bsde_engine import (BsdeSolution, build_truncated_problem, make_problem, solve_backward)
from .jump_paths import (ScenarioArrays, sample_poisson_measure, simulate_paths, to_arrays,
                         uniform_grid)
from .levy_measure import Atomic, AtomValues, PowerForm, PowerLaw
from .sum_norms import sum_norm, threshold_bound

__all__ = [
    "MIN_BATCHES", "batch_mean", "EpDiagnostics", "ep_norms", "ep_distance", "apriori_ratio",
    "condition_c_check", "segment_integral", "gap_segments", "counterexample_gap",
    "constant_integral_stats", "martingale_isometry_check", "bdg_sandwich", "bj_norm_check",
    "truncation_study", "poisson_moment",
]

MIN_BATCHES = 30


def batch_mean(x, n_batches: int = 100):
    """Mean and batch-mean standard error of per-path values ``x``."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n == 0:
        raise ValueError("no samples")
    b = min(max(n_batches, MIN_BATCHES), n)
    means = np.array([c.mean() for c in np.array_split(x, b)])
    se = float(means.std(ddof=1) / math.sqrt(b)) if b > 1 else math.inf
    return float(x.mean()), se


def poisson_moment(q: float, lam: float, tol: float = 1e-16) -> float:
    """``E[N^q]`` for ``N ~ Poisson(lam)`` by direct series summation."""
    total, k, pk = 0.0, 0, math.exp(-lam)
    while True:
        if k > 0:
            pk *= lam / k
            total += k ** q * pk
        if k > lam and k ** q * pk < tol * max(total, 1e-300):
            return total
        k += 1


@dataclass
class EpDiagnostics:
    p: float
    e_sup_y: float
    e_z: float
    e_psi: float
    e_m: float
    stderr: dict
    n_paths: int
    n_batches: int
    e_psi_mu: float = 0.0  # same quantity with the compensator mu(du)ds in place of pi

    @property
    def total(self) -> float:
        return self.e_sup_y + self.e_z + self.e_psi + self.e_m

    def to_json(self) -> dict:
        return asdict(self) | {"total": self.total}


def _paths_terms(sol: BsdeSolution, sc: ScenarioArrays, m: Atomic, p: float):
    h = np.diff(sol.grid)
    sup_y = np.max(np.linalg.norm(sol.Y, axis=2), axis=1) ** p
    z2 = np.sum(sol.Z ** 2, axis=(2, 3)) if sol.Z.size else np.zeros((sol.n_paths, len(h)))
    e_z = (z2 @ h) ** (p / 2.0)
    psi2 = np.sum(sol.psi ** 2, axis=3)  # (P, n, n_atoms)
    e_psi = np.sum(sc.dN * psi2, axis=(1, 2)) ** (p / 2.0)
    e_psi_mu = (np.sum(psi2 * np.asarray(m.weights)[None, None, :], axis=2) @ h) ** (p / 2.0)
    m2 = np.sum(np.diff(sol.M, axis=1) ** 2, axis=(1, 2)) ** (p / 2.0)
    return sup_y, e_z, e_psi, m2, e_psi_mu


def ep_norms(sol: BsdeSolution, p: float, scenarios, m: Atomic, n_batches: int = 100) -> EpDiagnostics:
    """``E[sup|Y|^p]``, ``E[(int|Z|^2)^{p/2}]``, ``E[(int int|psi|^2 dpi)^{p/2}]``, ``E[[M]_T^{p/2}]``.

    The supremum is over grid nodes.  The jump term is the exact sum over the
    simulated jumps of ``|psi_{t_i}(u)|^2``.
    """
    if sol.n_paths == 0:
        raise ValueError("empty solution set")
    sc = scenarios if isinstance(scenarios, ScenarioArrays) else to_arrays(scenarios, m)
    terms = _paths_terms(sol, sc, m, p)
    vals, ses = [], []
    for x in terms:
        v, s = batch_mean(x, n_batches)
        vals.append(v)
        ses.append(s)
    b = min(max(n_batches, MIN_BATCHES), sol.n_paths)
    return EpDiagnostics(p, vals[0], vals[1], vals[2], vals[3],
                         {"e_sup_y": ses[0], "e_z": ses[1], "e_psi": ses[2], "e_m": ses[3],
                          "e_psi_mu": ses[4]}, sol.n_paths, b, vals[4])


def ep_distance(a: BsdeSolution, b: BsdeSolution, p: float, scenarios, m: Atomic,
                n_batches: int = 100) -> EpDiagnostics:
    """E^p diagnostics of the difference of two solutions on the same scenarios."""
    diff = BsdeSolution(a.grid, a.Y - b.Y, a.Z - b.Z, a.psi - b.psi, a.M - b.M, "difference")
    return ep_norms(diff, p, scenarios, m, n_batches)


@dataclass
class AprioriReport:
    lhs: float
    rhs: float
    ratio: float
    misuse: bool
    stderr: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def apriori_ratio(sol: BsdeSolution, xi_values, f_integral, p: float, scenarios, m: Atomic,
                  n_batches: int = 100) -> AprioriReport:
    """``C_hat = E^p(Y, Z, psi, M) / E[|xi|^p + (int_0^T f_r dr)^p]``.

    ``f_integral`` holds the per-path value of ``int_0^T f_r dr`` for the
    non-negative process of the growth condition (a scalar is broadcast).
    """
    ep = ep_norms(sol, p, scenarios, m, n_batches)
    xi_values = np.asarray(xi_values, dtype=float).reshape(sol.n_paths, -1)
    fi = np.broadcast_to(np.asarray(f_integral, dtype=float), (sol.n_paths,))
    if np.any(fi < 0):
        raise ValueError("the growth process must be non-negative")
    rhs, se_r = batch_mean(np.linalg.norm(xi_values, axis=1) ** p + fi ** p, n_batches)
    lhs = ep.total
    if rhs == 0.0:
        return AprioriReport(lhs, 0.0, 0.0 if lhs == 0.0 else math.inf, lhs > 0.0,
                             {"lhs": sum(ep.stderr.values()), "rhs": se_r})
    return AprioriReport(lhs, rhs, lhs / rhs, False, {"lhs": sum(ep.stderr.values()), "rhs": se_r})


def condition_c_check(f, m: Atomic, f_t: float, alpha: float, K: float, *, d: int = 1, k: int = 1,
                      n_samples: int = 200, scale: float = 3.0, T: float = 1.0, seed: int = 0) -> dict:
    """Sampled ``<y/|y|, f(t,y,z,psi)> <= f_t + alpha|y| + K|z| + K ||psi||_{L^1+L^2}``."""
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(n_samples):
        t = rng.uniform(0, T)
        y = rng.normal(0, scale, (1, d))
        z = rng.normal(0, scale, (1, d, k))
        ps = rng.normal(0, scale, (1, m.n_atoms, d))
        ny = float(np.linalg.norm(y))
        lhs = float(np.dot(y[0] / ny, f(t, y, z, ps)[0])) if ny > 0 else 0.0
        rhs = f_t + alpha * ny + K * float(np.linalg.norm(z)) + K * sum_norm(AtomValues(ps[0]), m).value
        worst = max(worst, lhs - rhs)
    return {"ok": worst <= 1e-9, "worst_excess": worst}


def _G(x, p):
    """Antiderivative of ``|x|^{p-2}``: ``sign(x) |x|^{p-1} / (p-1)``."""
    return np.sign(x) * np.abs(x) ** (p - 1.0) / (p - 1.0)


def _G1(x, p):
    """Antiderivative of ``max(|x|, |x+1|)^{p-2}`` (switches at ``x = -1/2``)."""
    lo = np.minimum(x, -0.5)
    hi = np.maximum(x, -0.5)
    return _G(lo, p) + _G(hi + 1.0, p) - _G(0.5, p)


def segment_integral(a, b, p, kind: str = "I2"):
    """``int_a^b g(x) dx`` with ``g = |x|^{p-2}`` ("I2") or ``max(|x|,|x+1|)^{p-2}`` ("I1")."""
    G = _G if kind == "I2" else _G1
    return G(np.asarray(b, dtype=float), p) - G(np.asarray(a, dtype=float), p)


def gap_segments(jumps_per_path, T: float, lam: float = 1.0):
    """Linear pieces of ``Y_s = N_s - lam (T - s)`` between jumps.

    Returns ``(path_id, start_value, end_value)``; each piece has slope
    ``lam`` so ``int g(Y_s) ds = (1/lam) int_start^end g``.
    """
    counts = np.array([len(j) for j in jumps_per_path], dtype=np.int64)
    P = len(counts)
    n_seg = counts + 1
    pid = np.repeat(np.arange(P), n_seg)
    times = np.concatenate([np.concatenate([[0.0], np.asarray(j, dtype=float), [T]])
                            for j in jumps_per_path]) if P else np.zeros(0)
    starts_idx = np.concatenate([[0], np.cumsum(n_seg + 1)[:-1]]) if P else np.zeros(0, dtype=int)
    # local index of each segment inside its path
    local = np.arange(len(pid)) - np.repeat(np.cumsum(n_seg) - n_seg, n_seg)
    s0 = times[np.repeat(starts_idx, n_seg) + local]
    s1 = times[np.repeat(starts_idx, n_seg) + local + 1]
    y0 = local - lam * (T - s0)
    y1 = local - lam * (T - s1)
    return pid, y0, y1


@dataclass
class GapReport:
    p: float
    T: float
    I1: float
    I2: float
    se1: float
    se2: float
    se_combined: float
    se_paired: float
    n_paths: int

    @property
    def gap(self) -> float:
        return self.I2 - self.I1

    @property
    def significance(self) -> float:
        return self.gap / self.se_combined if self.se_combined > 0 else math.inf

    @property
    def ok(self) -> bool:
        return self.gap > 3.0 * self.se_combined

    def to_json(self) -> dict:
        return asdict(self) | {"gap": self.gap, "significance": self.significance, "ok": self.ok}


def counterexample_gap(p: float, T: float = 1.0, n_paths: int = 100_000, seed: int = 0,
                       intensity: float = 1.0, threads: int = 1, jumps=None,
                       n_batches: int = 100) -> GapReport:
    """``I1 = E int max(|Y_{s-}|, |Y_{s-}+1|)^{p-2} ds`` against ``I2 = E int |Y_s|^{p-2} 1_{Y_s != 0} ds``
    for ``Y_t = N_t - (T - t)``.

    Both integrals are exact along each path (closed-form antiderivatives on
    the linear pieces between jumps); only the expectation is Monte Carlo.
    ``jumps`` may pass precomputed jump-time arrays to share paths across ``p``.
    """
    if not 1.0 < p < 2.0:
        raise ValueError("p must lie in (1, 2)")
    lam = float(intensity)
    if jumps is None:
        m = Atomic([[1.0]], [lam])
        jumps = [sample_poisson_measure(m, T, seed, i).times for i in range(n_paths)]
    pid, y0, y1 = gap_segments(jumps, T, lam)
    P = len(jumps)
    # the mu(du) weight lam cancels the 1/lam from the change of variables
    i1 = np.bincount(pid, segment_integral(y0, y1, p, "I1"), minlength=P)
    i2 = np.bincount(pid, segment_integral(y0, y1, p, "I2"), minlength=P)
    I1, se1 = batch_mean(i1, n_batches)
    I2, se2 = batch_mean(i2, n_batches)
    _, sed = batch_mean(i2 - i1, n_batches)
    return GapReport(p, T, I1, I2, se1, se2, math.hypot(se1, se2), sed, P)


def constant_integral_stats(psi: AtomValues, m: Atomic, T: float, n_paths: int, seed: int,
                            compensate: bool = True, start: int = 0):
    """Per-path ``N_T``, ``sup_t |N_t|`` and ``[N]_T`` for a time-constant ``psi``.

    Vectorised over paths; the supremum is attained at a jump time, just
    before one, or at ``T``.
    """
    evs = [sample_poisson_measure(m, T, seed, i) for i in range(start, start + n_paths)]
    cnt = np.array([len(e) for e in evs], dtype=np.int64)
    d = psi.codim
    rate = np.sum(m.weights[:, None] * psi.values, axis=0) if compensate else np.zeros(d)
    if cnt.sum():
        times = np.concatenate([e.times for e in evs])
        atoms = np.concatenate([e.atoms for e in evs])
    else:
        times, atoms = np.zeros(0), np.zeros(0, dtype=np.int64)
    pid = np.repeat(np.arange(n_paths), cnt)
    jv = psi.values[atoms] if len(atoms) else np.zeros((0, d))
    csum = np.cumsum(jv, axis=0)
    offsets = np.concatenate([[0], np.cumsum(cnt)])
    first = offsets[:-1][cnt > 0]
    before = np.where((first > 0)[:, None], csum[np.maximum(first - 1, 0)], 0.0)
    # running jump sum inside each path = global cumsum minus cumsum at the path start
    start_sum = np.zeros((n_paths, d))
    start_sum[cnt > 0] = before
    after = csum - start_sum[pid]
    left = after - jv
    drift = times[:, None] * rate[None, :]
    after_v = np.linalg.norm(after - drift, axis=1)
    left_v = np.linalg.norm(left - drift, axis=1)
    terminal_jump = np.zeros((n_paths, d))
    if len(times):
        last = offsets[1:][cnt > 0] - 1
        terminal_jump[cnt > 0] = after[last]
    NT = terminal_jump - T * rate[None, :]
    sup = np.linalg.norm(NT, axis=1)
    if len(times):
        np.maximum.at(sup, pid, np.maximum(after_v, left_v))
    qv = np.bincount(pid, np.sum(jv ** 2, axis=1), minlength=n_paths) if len(times) else np.zeros(n_paths)
    return NT, sup, qv


@dataclass
class MartingaleReport:
    mean: float
    mean_se: float
    second_moment: float
    second_se: float
    isometry_target: float

    @property
    def mean_ok(self) -> bool:
        return abs(self.mean) <= 3.0 * self.mean_se

    @property
    def isometry_ok(self) -> bool:
        return abs(self.second_moment - self.isometry_target) <= 3.0 * self.second_se

    def to_json(self) -> dict:
        return asdict(self) | {"mean_ok": self.mean_ok, "isometry_ok": self.isometry_ok}


def martingale_isometry_check(psi: AtomValues, m: Atomic, T: float, n_paths: int, seed: int,
                              n_batches: int = 100) -> MartingaleReport:
    """``E[N_T] = 0`` and ``E[|N_T|^2] = T int |psi|^2 dmu`` for the compensated integral."""
    NT, _, _ = constant_integral_stats(psi, m, T, n_paths, seed)
    coord = NT[:, 0]
    mean, mse = batch_mean(coord, n_batches)
    sq, sse = batch_mean(np.sum(NT ** 2, axis=1), n_batches)
    target = T * float(np.sum(m.weights * np.sum(psi.values ** 2, axis=1)))
    return MartingaleReport(mean, mse, sq, sse, target)


@dataclass
class BdgReport:
    p: float
    T: float
    e_sup: float
    e_qv: float
    se_sup: float
    se_qv: float

    @property
    def ratio(self) -> float:
        return self.e_sup / self.e_qv if self.e_qv > 0 else math.nan

    def to_json(self) -> dict:
        return asdict(self) | {"ratio": self.ratio}


def bdg_sandwich(psi: AtomValues, m: Atomic, p: float, T: float, n_paths: int, seed: int,
                 n_batches: int = 100) -> BdgReport:
    """``E[(N*_T)^p]`` and ``E[[N]_T^{p/2}]``; their ratio probes the BDG constants."""
    if not isinstance(m, Atomic):
        raise ValueError("finite-activity (atomic) measure required")
    _, sup, qv = constant_integral_stats(psi, m, T, n_paths, seed)
    a, sa = batch_mean(sup ** p, n_batches)
    b, sb = batch_mean(qv ** (p / 2.0), n_batches)
    return BdgReport(p, T, a, b, sa, sb)


@dataclass
class BjReport:
    p: float
    T: float
    norm_upper: float
    norm_exact: float | None
    moment: float
    moment_se: float
    K_hat: float

    @property
    def ratio(self) -> float:
        return self.norm_upper / self.moment if self.moment > 0 else math.nan

    @property
    def cofinite(self) -> bool:
        return math.isfinite(self.norm_upper) == math.isfinite(self.moment)

    def to_json(self) -> dict:
        return asdict(self) | {"ratio": self.ratio, "cofinite": self.cofinite}


def bj_norm_check(psi, m, p: float, T: float, n_paths: int, seed: int, eta: float | None = None,
                  n_batches: int = 100) -> BjReport:
    """Space-time sum norm of a deterministic, time-constant ``psi`` against ``E[[N]_T^{p/2}]^{1/p}``.

    For such ``psi`` the norm on ``nu = mu x Leb[0, T]`` is the sum norm on
    ``T mu``.  Power-law measures are truncated at ``eta`` for both the norm
    and the simulation.
    """
    if not 1.0 < p < 2.0:
        raise ValueError("p must lie in (1, 2)")
    nu = m.scaled(T)
    if isinstance(m, PowerLaw):
        if eta is None:
            raise ValueError("power-law measures need a cutoff eta")
        psi = PowerForm(psi.coef, max(psi.lo, eta), psi.hi)
        upper, _ = threshold_bound(psi, nu, p)
        exact = None
        per_slice = threshold_bound(psi, m, 1.0)[0]
        qv = np.empty(n_paths)
        for i in range(n_paths):
            ev = sample_poisson_measure(m, T, seed, i, eta)
            r = np.abs(ev.marks[:, 0])
            inside = (r > psi.lo) & (r <= psi.hi)
            qv[i] = np.sum((psi.coef * ev.marks[:, 0] * inside) ** 2)
    else:
        res = sum_norm(psi, nu, p)
        upper, exact = res.threshold_bound, res.value
        per_slice = sum_norm(psi, m, 1.0).value
        _, _, qv = constant_integral_stats(psi, m, T, n_paths, seed)
    mom, se = batch_mean(qv ** (p / 2.0), n_batches)
    moment = mom ** (1.0 / p)
    moment_se = se / (p * mom ** (1.0 - 1.0 / p)) if mom > 0 else 0.0
    K_hat = T * per_slice ** p / mom if mom > 0 else math.nan
    return BjReport(p, T, upper, exact, moment, moment_se, K_hat)


@dataclass
class TruncationStudy:
    levels: list
    diagnostics: list
    differences: list
    p: float

    @property
    def decreasing(self) -> bool:
        d = self.differences
        return all(d[i + 1] <= d[i] for i in range(len(d) - 1))

    def to_json(self) -> dict:
        return {"levels": self.levels, "p": self.p, "differences": self.differences,
                "totals": [dg.total for dg in self.diagnostics], "decreasing": self.decreasing}


def truncation_study(problem: str = "counterexample", levels=(1, 2, 4, 8, 16), p: float = 1.5,
                     T: float = 1.0, n_steps: int = 32, n_paths: int = 10_000, seed: int = 0,
                     threads: int = 1, **params) -> TruncationStudy:
    """Solve the truncated problems ``(q_n(xi), f_n)`` on shared scenarios.

    ``differences[i]`` is the E^p size of the difference between the
    solutions at levels ``n_i`` and ``n_{i+1}``.
    """
    prob = make_problem(problem, **params)
    paths = simulate_paths(prob.measure, uniform_grid(T, n_steps), n_paths, seed, threads=threads)
    sc = to_arrays(paths, prob.measure)
    sols, diags = [], []
    for n in levels:
        xi_n, f_n = build_truncated_problem(prob.terminal, prob.generator, n)
        s = solve_backward(f_n, xi_n, sc, prob.measure, "markov-exact")
        sols.append(s)
        diags.append(ep_norms(s, p, sc, prob.measure))
    diffs = [ep_distance(sols[i + 1], sols[i], p, sc, prob.measure).total for i in range(len(sols) - 1)]
    return TruncationStudy(list(levels), diags, diffs, p)
