"""Backward solver for BSDEs driven by a Brownian motion and a Poisson random measure.

The equation on a grid ``0 = t_0 < ... < t_n = T`` is discretised as

    Y_i = Y_{i+1} + h f(t_i, Y_i, Z_i, psi_i)
          - sum_j psi_i(u_j) (dN^j_i - w_j h) - Z_i dW_i,

with ``Y_n = xi``.  Taking conditional expectations gives the implicit step
``Y_i = E_i[Y_{i+1}] + h f(t_i, Y_i, Z_i, psi_i)``, solved by a damped
fixed-point iteration.  Two estimators of ``E_i`` are provided:

* ``markov-exact`` -- one atom, no Brownian dependence: the state is the jump
  count and expectations are exact sums over Poisson increments;
* ``regression`` -- least squares on polynomial features of ``(W, counts)``.

The orthogonal martingale part ``M`` is identically zero on the filtration
generated by ``W`` and the jumps; the solution keeps the slot anyway.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import poisson

from .jump_paths import PathBundle, ScenarioArrays, to_arrays
from .levy_measure import Atomic, AtomValues
from .sum_norms import sum_norm

__all__ = [
    "FixedPointError", "RankDeficient", "GeneratorSpec", "Terminal", "Problem",
    "BsdeSolution", "truncate_q", "build_truncated_problem", "solve_backward",
    "residual_check", "ResidualReport", "validate_generator", "GeneratorReport",
    "comparison_check", "make_problem", "PROBLEMS", "max_node_error",
]

TAIL_MASS = 1e-12


class FixedPointError(RuntimeError):
    pass


class RankDeficient(RuntimeError):
    def __init__(self, msg, cond):
        super().__init__(msg)
        self.cond = cond


@dataclass
class GeneratorSpec:
    """Driver ``f(t, y, z, psi)`` evaluated on batches.

    Shapes: ``y (P, d)``, ``z (P, d, k)``, ``psi (P, n_atoms, d)``; the
    result is ``(P, d)``.  The constants are the declared one-sided Lipschitz
    constant in ``y`` and Lipschitz constants in ``z`` and in ``psi``
    (measured in the ``L^1 + L^2`` sum norm).
    """

    fn: Callable
    alpha_mono: float = 0.0
    K_z: float = 0.0
    K_psi: float = 0.0
    name: str = "custom"

    def __call__(self, t, y, z, psi):
        return np.asarray(self.fn(t, y, z, psi), dtype=float)

    def f0(self, t, P: int, d: int, k: int, n_atoms: int) -> np.ndarray:
        return self(t, np.zeros((P, d)), np.zeros((P, d, k)), np.zeros((P, n_atoms, d)))


@dataclass
class Terminal:
    """``xi = fn(W_T, counts_T)`` with ``W_T (P, k)`` and ``counts_T (P, n_atoms)``.

    ``markov`` declares that ``fn`` ignores ``W_T``.
    """

    fn: Callable
    markov: bool = True
    name: str = "custom"

    def __call__(self, W, counts):
        out = np.asarray(self.fn(W, counts), dtype=float)
        return out[:, None] if out.ndim == 1 else out


def truncate_q(x, n: float):
    """Radial clamp ``x n / max(|x|, n)`` along the last axis (scalars allowed)."""
    if not n > 0:
        raise ValueError("truncation level must be positive")
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x * n / max(abs(float(x)), n)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    return x * (n / np.maximum(r, n))


def build_truncated_problem(xi: Terminal, f: GeneratorSpec, n: float):
    """``xi_n = q_n(xi)`` and ``f_n = f - f(., 0, 0, 0) + q_n(f(., 0, 0, 0))``."""
    if not n > 0:
        raise ValueError("truncation level must be positive")
    xi_n = Terminal(lambda W, c: truncate_q(xi(W, c), n), xi.markov, f"{xi.name}|q{n:g}")

    def fn(t, y, z, psi):
        f0 = f(t, np.zeros_like(y), np.zeros_like(z), np.zeros_like(psi))
        return f(t, y, z, psi) - f0 + truncate_q(f0, n)

    return xi_n, GeneratorSpec(fn, f.alpha_mono, f.K_z, f.K_psi, f"{f.name}|q{n:g}")


@dataclass
class Problem:
    name: str
    measure: Atomic
    generator: GeneratorSpec
    terminal: Terminal
    d: int = 1
    k: int = 0
    exact: Callable | None = None  # exact Y(t, W_t, counts_t) -> (P, d), when known
    params: dict = field(default_factory=dict)


def _counterexample(intensity: float = 1.0) -> Problem:
    lam = float(intensity)
    m = Atomic([[1.0]], [lam])
    # f = -2 int psi dmu; for the unit atom this is -2 psi(1)
    gen = GeneratorSpec(lambda t, y, z, psi: -2.0 * lam * psi[:, 0, :],
                        alpha_mono=0.0, K_z=0.0, K_psi=2.0 * max(1.0, math.sqrt(lam)),
                        name="counterexample")
    xi = Terminal(lambda W, c: c[:, :1].astype(float), True, "N_T")
    return Problem("counterexample", m, gen, xi, exact=None, params={"intensity": lam})


def _zero(c: float = 1.0) -> Problem:
    gen = GeneratorSpec(lambda t, y, z, psi: np.zeros_like(y), name="zero")
    xi = Terminal(lambda W, n: np.full((len(n), 1), float(c)), True, "constant")
    return Problem("zero", Atomic([[1.0]], [1.0]), gen, xi,
                   exact=lambda t, T, W, n: np.full((len(n), 1), float(c)), params={"c": c})


def _linear_decay(lam: float = 1.0, c: float = 1.0) -> Problem:
    gen = GeneratorSpec(lambda t, y, z, psi: -lam * y, alpha_mono=-lam, name="linear-decay")
    xi = Terminal(lambda W, n: np.full((len(n), 1), float(c)), True, "constant")
    return Problem("linear-decay", Atomic([[1.0]], [1.0]), gen, xi,
                   exact=lambda t, T, W, n: np.full((len(n), 1), c * math.exp(-lam * (T - t))),
                   params={"lam": lam, "c": c})


PROBLEMS = {"counterexample": _counterexample, "zero": _zero, "linear-decay": _linear_decay}


def make_problem(name: str, **params) -> Problem:
    if name not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
    prob = PROBLEMS[name](**params)
    if name == "counterexample":
        lam = prob.params["intensity"]
        prob.exact = lambda t, T, W, n: n[:, :1].astype(float) - lam * (T - t)
    return prob


@dataclass
class BsdeSolution:
    """Grid values along each scenario path.

    ``Y (P, n+1, d)``, ``Z (P, n, d, k)``, ``psi (P, n, n_atoms, d)`` (values
    of ``psi_{t_i}`` at the atoms), ``M (P, n+1, d)`` (zero).
    """

    grid: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    psi: np.ndarray
    M: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    def psi_at(self, path: int, step: int) -> AtomValues:
        return AtomValues(self.psi[path, step])


def _fixed_point(rhs_const, h, t, f, z, psi, y0, tol=1e-12, max_iter=200, explicit=False):
    """Solve ``y = c + h f(t, y, z, psi)`` by damped iteration."""
    if explicit:
        return rhs_const + h * f(t, y0, z, psi), 0
    y = y0.copy()
    damp = 1.0
    prev = math.inf
    for it in range(1, max_iter + 1):
        new = rhs_const + h * f(t, y, z, psi)
        step = float(np.max(np.abs(new - y))) if y.size else 0.0
        if not math.isfinite(step):
            raise FixedPointError("fixed-point iterate is not finite")
        if step > prev:
            damp = max(0.5 * damp, 1e-3)
        y = y + damp * (new - y)
        if step <= tol * max(1.0, float(np.max(np.abs(y))) if y.size else 1.0):
            return y, it
        prev = step
    raise FixedPointError(f"fixed point not reached in {max_iter} iterations (last step {step:.3e})")


def _as_arrays(scenarios, m):
    if isinstance(scenarios, ScenarioArrays):
        return scenarios
    if len(scenarios) and isinstance(scenarios[0], PathBundle):
        return to_arrays(list(scenarios), m)
    raise TypeError("scenarios must be PathBundles or ScenarioArrays")


def _solve_markov(f, xi, m, sc, explicit, tol, max_iter):
    grid = sc.grid
    n = len(grid) - 1
    lam = float(m.weights[0])
    d = xi(np.zeros((1, sc.W.shape[2])), np.zeros((1, 1), dtype=np.int64)).shape[1]
    k = sc.W.shape[2]
    hs = np.diff(grid)
    kmax = [int(poisson.isf(TAIL_MASS, lam * h)) + 1 for h in hs]
    pmfs = []
    for h, km in zip(hs, kmax):
        w = poisson.pmf(np.arange(km + 1), lam * h)
        pmfs.append(w / w.sum())
    top0 = int(sc.counts[:, -1, 0].max()) if sc.n_paths else 0
    sizes = [top0 + 1 + sum(km + 1 for km in kmax[:i]) for i in range(n + 1)]
    lattice = np.arange(sizes[-1])
    u = xi(np.zeros((len(lattice), k)), lattice[:, None])
    tables = [None] * (n + 1)
    tables[n] = u
    psi_tab = [None] * n
    iters = []
    for i in range(n - 1, -1, -1):
        L = sizes[i]
        w = pmfs[i]
        km = len(w) - 1
        idx = np.arange(L)[:, None] + np.arange(km + 1)[None, :]
        nxt = tables[i + 1]
        cond = np.einsum("lkd,k->ld", nxt[idx], w)
        cond_up = np.einsum("lkd,k->ld", nxt[idx + 1], w)
        ps = (cond_up - cond)[:, None, :]
        z = np.zeros((L, d, k))
        y, it = _fixed_point(cond, hs[i], grid[i], f, z, ps, cond, tol, max_iter, explicit)
        iters.append(it)
        tables[i] = y
        psi_tab[i] = ps
    P = sc.n_paths
    cnt = sc.counts[:, :, 0]
    Y = np.stack([tables[i][cnt[:, i]] for i in range(n + 1)], axis=1)
    psi = np.stack([psi_tab[i][cnt[:, i]] for i in range(n)], axis=1)
    Z = np.zeros((P, n, d, k))
    Y[:, -1] = xi(sc.W[:, -1], sc.counts[:, -1])
    diag = {"iterations": iters[::-1], "max_iterations": max(iters) if iters else 0,
            "lattice_size": sizes[0], "tail_mass": TAIL_MASS}
    return Y, Z, psi, diag, tables


def _features(W, counts, degree):
    """Monomials of total degree <= ``degree`` in the columns of ``[W, counts]``."""
    X = np.concatenate([W, counts.astype(float)], axis=1)
    cols = [np.ones(len(X))]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(X.shape[1]), deg):
            cols.append(np.prod(X[:, combo], axis=1))
    return np.stack(cols, axis=1)


def _lstsq(A, B, rcond):
    coef, _, rank, sv = np.linalg.lstsq(A, B, rcond=rcond)
    cond = float(sv[0] / sv[-1]) if len(sv) and sv[-1] > 0 else math.inf
    return coef, int(rank), cond


def _solve_regression(f, xi, m, sc, explicit, tol, max_iter, degree, rcond, strict):
    grid = sc.grid
    n = len(grid) - 1
    P = sc.n_paths
    k = sc.W.shape[2]
    na = m.n_atoms
    hs = np.diff(grid)
    yT = xi(sc.W[:, -1], sc.counts[:, -1])
    d = yT.shape[1]
    Y = np.zeros((P, n + 1, d))
    Y[:, -1] = yT
    Z = np.zeros((P, n, d, k))
    psi = np.zeros((P, n, na, d))
    ranks, conds, iters = [], [], []
    w = np.asarray(m.weights, dtype=float)
    for i in range(n - 1, -1, -1):
        A_now = _features(sc.W[:, i], sc.counts[:, i], degree)
        c_y, rank, cond = _lstsq(A_now, Y[:, i + 1], rcond)
        ranks.append(rank)
        conds.append(cond)
        if strict and rank < A_now.shape[1] and i > 0:
            raise RankDeficient(f"regression at step {i} has rank {rank} < {A_now.shape[1]}", cond)
        cond_y = A_now @ c_y
        # centred martingale-representation estimators:
        # psi_i(u_j) = E_i[dY (dN^j - w_j h)] / (w_j h),  Z_i = E_i[dY dW] / h
        resid = Y[:, i + 1] - cond_y
        comp = (sc.dN[:, i] - w[None, :] * hs[i]) / (w[None, :] * hs[i])
        targets = [(comp[:, :, None] * resid[:, None, :]).reshape(P, -1)]
        if k:
            targets.append((resid[:, :, None] * sc.dW[:, i, None, :] / hs[i]).reshape(P, -1))
        fit = A_now @ _lstsq(A_now, np.concatenate(targets, axis=1), rcond)[0]
        ps = fit[:, :na * d].reshape(P, na, d)
        z = fit[:, na * d:].reshape(P, d, k) if k else np.zeros((P, d, 0))
        y, it = _fixed_point(cond_y, hs[i], grid[i], f, z, ps, cond_y, tol, max_iter, explicit)
        iters.append(it)
        Y[:, i] = y
        Z[:, i] = z
        psi[:, i] = ps
    diag = {"iterations": iters[::-1], "max_iterations": max(iters) if iters else 0,
            "ranks": ranks[::-1], "condition_numbers": conds[::-1], "degree": degree}
    return Y, Z, psi, diag


def solve_backward(f: GeneratorSpec, xi: Terminal, scenarios, m: Atomic, method: str = "markov-exact",
                   *, explicit: bool = False, tol: float = 1e-12, max_iter: int = 200,
                   degree: int = 2, rcond: float = 1e-12, strict: bool = False) -> BsdeSolution:
    """Solve the discretised equation along every scenario path.

    ``scenarios`` is a list of :class:`PathBundle` or a :class:`ScenarioArrays`.
    """
    if not isinstance(m, Atomic):
        raise ValueError("the backward solver works on atomic measures")
    sc = _as_arrays(scenarios, m)
    if method == "markov-exact":
        if m.n_atoms != 1 or not xi.markov:
            raise ValueError("markov-exact needs one atom and a terminal value depending on the count only")
        Y, Z, psi, diag, tables = _solve_markov(f, xi, m, sc, explicit, tol, max_iter)
        diag["value_tables"] = tables
    elif method == "regression":
        Y, Z, psi, diag = _solve_regression(f, xi, m, sc, explicit, tol, max_iter, degree, rcond, strict)
    else:
        raise ValueError(f"unknown method {method!r}")
    return BsdeSolution(sc.grid, Y, Z, psi, np.zeros_like(Y), method, diag)


def max_node_error(sol: BsdeSolution, prob: Problem, scenarios) -> float:
    """Largest node error of ``Y`` against the problem's closed form."""
    sc = _as_arrays(scenarios, prob.measure)
    T = float(sc.grid[-1])
    err = 0.0
    for i, t in enumerate(sc.grid):
        ex = prob.exact(float(t), T, sc.W[:, i], sc.counts[:, i])
        err = max(err, float(np.max(np.abs(sol.Y[:, i] - ex))))
    return err


@dataclass
class ResidualReport:
    per_step_max: np.ndarray
    per_step_mean: np.ndarray
    total_max: float
    terminal_error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.terminal_error == 0.0 and float(np.max(self.per_step_max, initial=0.0)) <= self.tol

    def worst_step(self) -> int:
        return int(np.argmax(self.per_step_max))


def residual_check(sol: BsdeSolution, f: GeneratorSpec, xi: Terminal, scenarios, m: Atomic,
                   tol: float = 1e-10) -> ResidualReport:
    """Per-interval residual of the discretised equation along each path.

    The residual vanishes when the discrete martingale increments are
    represented exactly (single atom, value affine in the increment); for
    general data only its conditional mean is zero.
    """
    sc = _as_arrays(scenarios, m)
    n = len(sc.grid) - 1
    hs = np.diff(sc.grid)
    w = np.asarray(m.weights)
    res = np.zeros((sol.n_paths, n))
    for i in range(n):
        ps = sol.psi[:, i]
        jump_term = np.einsum("pj,pjd->pd", sc.dN[:, i] - w[None, :] * hs[i], ps)
        brown = np.einsum("pdk,pk->pd", sol.Z[:, i], sc.dW[:, i])
        rhs = sol.Y[:, i + 1] + hs[i] * f(sc.grid[i], sol.Y[:, i], sol.Z[:, i], ps) - jump_term - brown
        res[:, i] = np.linalg.norm(sol.Y[:, i] - rhs, axis=1)
    term = float(np.max(np.abs(sol.Y[:, -1] - xi(sc.W[:, -1], sc.counts[:, -1]))))
    per_max = res.max(axis=0) if sol.n_paths else np.zeros(n)
    return ResidualReport(per_max, res.mean(axis=0) if sol.n_paths else np.zeros(n),
                          float(res.sum(axis=1).max()) if sol.n_paths else 0.0, term, tol)


@dataclass
class GeneratorReport:
    alpha_hat: float
    K_z_hat: float
    K_psi_hat: float
    lipschitz_margin: float
    h2_sup: dict
    witness: dict
    declared: dict
    tol: float = 1e-9

    @property
    def monotone_ok(self) -> bool:
        return self.alpha_hat <= self.declared["alpha_mono"] + self.tol

    @property
    def lipschitz_ok(self) -> bool:
        return self.lipschitz_margin <= self.tol

    @property
    def h2_ok(self) -> bool:
        return all(math.isfinite(v) for v in self.h2_sup.values())

    @property
    def ok(self) -> bool:
        return self.monotone_ok and self.lipschitz_ok and self.h2_ok

    def to_json(self) -> dict:
        return {"alpha_hat": self.alpha_hat, "K_z_hat": self.K_z_hat, "K_psi_hat": self.K_psi_hat,
                "lipschitz_margin": self.lipschitz_margin,
                "h2_sup": {str(k): v for k, v in self.h2_sup.items()},
                "declared": self.declared, "monotone_ok": self.monotone_ok,
                "lipschitz_ok": self.lipschitz_ok, "h2_ok": self.h2_ok}


def validate_generator(f: GeneratorSpec, m: Atomic, *, d: int = 1, k: int = 1, n_samples: int = 200,
                       scale: float = 3.0, radii=(1.0, 10.0, 100.0), T: float = 1.0,
                       seed: int = 0, tol: float = 1e-9) -> GeneratorReport:
    """Sampled checks of monotonicity in ``y``, Lipschitz continuity in ``(z, psi)``
    and boundedness of ``f(t, y, 0, 0) - f(t, 0, 0, 0)`` on balls.
    """
    rng = np.random.default_rng(seed)
    na = m.n_atoms
    S = n_samples
    t = rng.uniform(0, T, S)
    y, y2 = rng.normal(0, scale, (S, d)), rng.normal(0, scale, (S, d))
    z, z2 = rng.normal(0, scale, (S, d, k)), rng.normal(0, scale, (S, d, k))
    ps, ps2 = rng.normal(0, scale, (S, na, d)), rng.normal(0, scale, (S, na, d))

    def ev(tt, a, b, c):
        return np.stack([f(tt[s], a[s:s + 1], b[s:s + 1], c[s:s + 1])[0] for s in range(S)])

    fy, fy2 = ev(t, y, z, ps), ev(t, y2, z, ps)
    dy = y - y2
    ratio = np.sum((fy - fy2) * dy, axis=1) / np.maximum(np.sum(dy * dy, axis=1), 1e-300)
    j = int(np.argmax(ratio))
    alpha_hat = float(ratio[j])

    fz = ev(t, y, z2, ps)
    fp = ev(t, y, z, ps2)
    fzp = ev(t, y, z2, ps2)
    dz = np.linalg.norm((z - z2).reshape(S, -1), axis=1)
    dpsi = np.array([sum_norm(AtomValues(ps[s] - ps2[s]), m, 1.0).value for s in range(S)])
    K_z_hat = float(np.max(np.linalg.norm(fy - fz, axis=1) / np.maximum(dz, 1e-300)))
    K_psi_hat = float(np.max(np.linalg.norm(fy - fp, axis=1) / np.maximum(dpsi, 1e-300)))
    margin = float(np.max(np.linalg.norm(fy - fzp, axis=1) - f.K_z * dz - f.K_psi * dpsi))

    h2 = {}
    for r in radii:
        u = rng.normal(size=(S, d))
        u = u / np.linalg.norm(u, axis=1, keepdims=True) * (r * rng.random((S, 1)) ** (1.0 / d))
        zero_z, zero_p = np.zeros((S, d, k)), np.zeros((S, na, d))
        diff = ev(t, u, zero_z, zero_p) - ev(t, np.zeros((S, d)), zero_z, zero_p)
        val = float(np.max(np.linalg.norm(diff, axis=1)))
        h2[r] = val if math.isfinite(val) else math.inf
    witness = {"y": y[j].tolist(), "y_prime": y2[j].tolist(), "t": float(t[j]), "ratio": alpha_hat}
    declared = {"alpha_mono": f.alpha_mono, "K_z": f.K_z, "K_psi": f.K_psi}
    return GeneratorReport(alpha_hat, K_z_hat, K_psi_hat, margin, h2, witness, declared, tol)


def comparison_check(f1: GeneratorSpec, xi1: Terminal, f2: GeneratorSpec, xi2: Terminal,
                     scenarios, m: Atomic, tol: float = 1e-12) -> dict:
    """Heuristic discrete comparison: ``xi1 <= xi2`` and ``f1 <= f2`` should give ``Y1 <= Y2``.

    Scalar equations, markov-exact only.  Checked on the whole value lattice,
    not just along the simulated paths.
    """
    s1 = solve_backward(f1, xi1, scenarios, m, "markov-exact")
    s2 = solve_backward(f2, xi2, scenarios, m, "markov-exact")
    t1, t2 = s1.diagnostics["value_tables"], s2.diagnostics["value_tables"]
    worst = max(float(np.max(a - b)) for a, b in zip(t1, t2))
    return {"ok": worst <= tol, "worst_excess": worst,
            "path_excess": float(np.max(s1.Y - s2.Y)) if s1.n_paths else 0.0}
