"""Simulation of Brownian increments, Poisson random measures and their integrals.

Every random draw comes from a Philox generator keyed by the master seed and
whose counter is offset by ``(stream, path_index)``.  A path is therefore a
pure function of ``(seed, path_index)``: the order in which paths are
generated, or how they are split between workers, does not matter.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .levy_measure import (Atomic, AtomValues, LevyMeasure, PowerForm, PowerLaw,
                           interval_moment, total_mass)

__all__ = [
    "STREAM_POISSON", "STREAM_BROWNIAN", "STREAM_GAUSS", "path_rng", "PathBundle",
    "JumpEvents", "IntegralPath", "sample_poisson_measure", "sample_brownian",
    "simulate_paths", "stochastic_integral", "sample_stable_truncated", "uniform_grid",
    "ScenarioArrays", "to_arrays",
]

STREAM_POISSON = 0
STREAM_BROWNIAN = 1
STREAM_GAUSS = 2
_MASK64 = (1 << 64) - 1


def path_rng(seed: int, path_index: int, stream: int) -> np.random.Generator:
    """Independent generator for one ``(seed, path_index, stream)`` triple."""
    key = np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, stream & _MASK64, path_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def uniform_grid(T: float, n_steps: int) -> np.ndarray:
    if not T > 0 or n_steps < 1:
        raise ValueError("need T > 0 and at least one step")
    return np.linspace(0.0, T, n_steps + 1)


@dataclass(frozen=True, eq=False)
class JumpEvents:
    """Time-sorted jumps; ``atoms`` indexes the atom hit (``-1`` for densities)."""

    times: np.ndarray
    marks: np.ndarray
    atoms: np.ndarray

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True, eq=False)
class PathBundle:
    grid: np.ndarray
    brownian_increments: np.ndarray
    jumps: JumpEvents
    seed: int
    path_index: int

    def to_json(self) -> dict:
        return {"seed": self.seed, "path_index": self.path_index,
                "grid": self.grid.tolist(),
                "brownian_increments": self.brownian_increments.tolist(),
                "jump_times": self.jumps.times.tolist(),
                "jump_marks": self.jumps.marks.tolist(),
                "jump_atoms": self.jumps.atoms.tolist()}


def sample_poisson_measure(m: LevyMeasure, T: float, seed: int, path_index: int,
                           eta: float | None = None) -> JumpEvents:
    """Jumps of a Poisson random measure with intensity ``mu(du) dt`` on ``(0, T]``.

    Power-law measures must be truncated below at ``eta > 0`` (jumps with
    ``|u| > eta`` are kept).
    """
    rng = path_rng(seed, path_index, STREAM_POISSON)
    if isinstance(m, Atomic):
        lam = float(np.sum(m.weights))
        n = int(rng.poisson(lam * T)) if lam > 0 else 0
        u = rng.random(n)
        times = T * (1.0 - u)
        atoms = (rng.choice(m.n_atoms, size=n, p=m.weights / lam)
                 if n else np.zeros(0, dtype=np.int64))
        marks = m.marks[atoms] if n else np.zeros((0, m.dim))
    else:
        if eta is None or not eta > 0:
            raise ValueError("a power-law measure has infinite mass; pass a cutoff eta > 0")
        lam = total_mass(m, eta)
        if math.isinf(lam):
            raise ValueError("truncated measure still has infinite mass")
        n = int(rng.poisson(lam * T)) if lam > 0 else 0
        times = T * (1.0 - rng.random(n))
        # inverse CDF of the density prop. to r^{-1-alpha} on (eta, cutoff]
        a = m.alpha
        top = 0.0 if math.isinf(m.cutoff) else m.cutoff ** (-a)
        v = rng.random(n)
        radius = (eta ** (-a) - v * (eta ** (-a) - top)) ** (-1.0 / a)
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        marks = (sign * radius)[:, None]
        atoms = np.full(n, -1, dtype=np.int64)
    order = np.argsort(times, kind="stable")
    return JumpEvents(times[order], marks[order], np.asarray(atoms)[order])


def sample_brownian(grid, k: int, seed: int, path_index: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    if np.any(h < 0):
        raise ValueError("grid must be non-decreasing")
    if k == 0:
        return np.zeros((len(h), 0))
    rng = path_rng(seed, path_index, STREAM_BROWNIAN)
    return rng.standard_normal((len(h), k)) * np.sqrt(h)[:, None]


def _one_path(args):
    m, grid, k, seed, i, eta = args
    T = float(grid[-1])
    return PathBundle(grid, sample_brownian(grid, k, seed, i),
                      sample_poisson_measure(m, T, seed, i, eta), seed, i)


def simulate_paths(m: LevyMeasure, grid, n_paths: int, seed: int, k: int = 0,
                   eta: float | None = None, threads: int = 1, start: int = 0) -> list:
    """Paths ``start, ..., start + n_paths - 1``; identical for any ``threads``."""
    grid = np.asarray(grid, dtype=float)
    args = [(m, grid, k, seed, i, eta) for i in range(start, start + n_paths)]
    if threads <= 1:
        return [_one_path(a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(_one_path, args))


@dataclass(frozen=True, eq=False)
class IntegralPath:
    """``N_t = int_0^t int psi d(pi or pi~)`` sampled on the grid and at jump times.

    ``times``/``values`` list the right-continuous path at the union of grid
    and jump times; ``left_values`` holds the left limits at the same times.
    """

    times: np.ndarray
    values: np.ndarray
    left_values: np.ndarray
    qv: np.ndarray
    compensator_applied: bool
    drift: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    @property
    def qv_terminal(self) -> float:
        return float(self.qv[-1])

    @property
    def sup_abs(self) -> float:
        """``sup_t |N_t|``; attained at a grid/jump time or a left limit."""
        return float(max(np.max(np.linalg.norm(self.values, axis=-1)),
                         np.max(np.linalg.norm(self.left_values, axis=-1))))


def _jump_values(psi, jumps: JumpEvents):
    if isinstance(psi, AtomValues):
        if len(jumps) and np.any(jumps.atoms < 0):
            raise ValueError("atom-valued integrand needs atom-indexed jumps")
        return psi.values[jumps.atoms] if len(jumps) else np.zeros((0, psi.codim))
    r = np.abs(jumps.marks[:, 0])
    inside = (r > psi.lo) & (r <= psi.hi)
    return (psi.coef * jumps.marks[:, 0] * inside)[:, None]


def _drift_rate(psi, m: LevyMeasure, eta: float | None):
    """``int psi dmu`` over the simulated part of the measure."""
    if isinstance(psi, AtomValues):
        return np.sum(m.weights[:, None] * psi.values, axis=0)
    lo = max(psi.lo, eta or 0.0)
    if math.isinf(interval_moment(m, 1.0, lo, psi.hi)) and psi.coef != 0:
        raise ValueError("integrand is not integrable against the truncated measure")
    return np.zeros(1)  # symmetric measure, odd integrand


def stochastic_integral(psi, jumps: JumpEvents, m: LevyMeasure, T: float,
                        compensate: bool = True, grid=None, eta: float | None = None) -> IntegralPath:
    """Pathwise ``N`` for a time-constant ``psi`` or one constant on grid intervals.

    A grid-piecewise integrand is passed as a list of mark functions, one per
    interval of ``grid``.
    """
    grid = np.array([0.0, T]) if grid is None else np.asarray(grid, dtype=float)
    piecewise = isinstance(psi, (list, tuple))
    if piecewise and len(psi) != len(grid) - 1:
        raise ValueError("one integrand per grid interval")
    pieces = list(psi) if piecewise else [psi] * (len(grid) - 1)
    rates = np.array([_drift_rate(ph, m, eta) for ph in pieces])
    d = rates.shape[1]
    if not compensate:
        rates = np.zeros_like(rates)
    # interval index of each jump (jump at a node belongs to the interval ending there)
    jint = np.clip(np.searchsorted(grid, jumps.times, side="left") - 1, 0, len(grid) - 2)
    jv = np.zeros((len(jumps), d))
    for k, ph in enumerate(pieces):
        sel = jint == k
        if np.any(sel):
            sub = JumpEvents(jumps.times[sel], jumps.marks[sel], jumps.atoms[sel])
            jv[sel] = _jump_values(ph, sub)
    times = np.concatenate([grid, jumps.times])
    kind = np.concatenate([np.zeros(len(grid), dtype=int), np.ones(len(jumps), dtype=int)])
    order = np.lexsort((kind, times))
    times, kind = times[order], kind[order]
    # compensator: piecewise-linear integral of the rate
    cum_drift = np.concatenate([np.zeros((1, d)), np.cumsum(rates * np.diff(grid)[:, None], axis=0)])
    idx = np.clip(np.searchsorted(grid, times, side="right") - 1, 0, len(grid) - 2)
    comp = cum_drift[idx] + rates[idx] * (times - grid[idx])[:, None]
    jump_at = np.zeros((len(times), d))
    jpos = np.nonzero(kind == 1)[0]
    jump_at[jpos] = jv
    jump_sum = np.cumsum(jump_at, axis=0)
    values = jump_sum - comp
    left = values - jump_at
    qv = np.cumsum(np.sum(jump_at ** 2, axis=1))
    return IntegralPath(times, values, left, qv, compensate, rates)


def sample_stable_truncated(alpha: float, eta: float, T: float, seed: int, path_index: int,
                            gaussian: bool = False, n_steps: int = 1) -> IntegralPath:
    """Compound-Poisson approximation of ``X_t = int int u pi~(du, ds)``, ``|u| > eta``.

    With ``gaussian=True`` the removed small jumps are replaced by a Brownian
    motion with variance rate ``2 eta^{2-alpha} / (2 - alpha)``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    m = PowerLaw(alpha)
    jumps = sample_poisson_measure(m, T, seed, path_index, eta)
    grid = uniform_grid(T, n_steps)
    path = stochastic_integral(PowerForm(1.0), jumps, m, T, True, grid, eta)
    if not gaussian:
        return path
    var_rate = 2.0 * eta ** (2.0 - alpha) / (2.0 - alpha)
    rng = path_rng(seed, path_index, STREAM_GAUSS)
    dt = np.diff(path.times)
    w = np.concatenate([[0.0], np.cumsum(rng.standard_normal(len(dt)) * np.sqrt(var_rate * dt))])
    vals = path.values + w[:, None]
    return IntegralPath(path.times, vals, vals - (path.values - path.left_values), path.qv,
                        True, path.drift)


def small_jump_variance(alpha: float, eta: float) -> float:
    """``int_{|u| <= eta} u^2 |u|^{-1-alpha} du``."""
    return 2.0 * eta ** (2.0 - alpha) / (2.0 - alpha)


@dataclass
class ScenarioArrays:
    """Grid-level view of a set of paths on an atomic measure.

    ``counts[p, i, j]`` is the number of jumps on atom ``j`` in ``(0, t_i]``;
    ``W[p, i]`` the Brownian motion at ``t_i``.
    """

    grid: np.ndarray
    W: np.ndarray
    dW: np.ndarray
    counts: np.ndarray
    dN: np.ndarray
    marks: np.ndarray
    paths: list = field(default_factory=list, repr=False)

    @property
    def n_paths(self) -> int:
        return self.counts.shape[0]

    def state(self, i: int) -> dict:
        """State at node ``i``: Brownian value, jump counts, jump-sum of the marks."""
        return {"t": float(self.grid[i]), "W": self.W[:, i], "counts": self.counts[:, i],
                "X": self.counts[:, i].astype(float) @ self.marks}


def to_arrays(paths: list, m: Atomic) -> ScenarioArrays:
    if not isinstance(m, Atomic):
        raise ValueError("grid arrays need an atomic measure")
    grid = paths[0].grid
    n = len(grid) - 1
    P = len(paths)
    k = paths[0].brownian_increments.shape[1]
    dW = np.stack([pb.brownian_increments for pb in paths]) if P else np.zeros((0, n, k))
    W = np.concatenate([np.zeros((P, 1, k)), np.cumsum(dW, axis=1)], axis=1)
    dN = np.zeros((P, n, m.n_atoms), dtype=np.int64)
    for p, pb in enumerate(paths):
        if len(pb.jumps):
            iv = np.clip(np.searchsorted(grid, pb.jumps.times, side="left") - 1, 0, n - 1)
            np.add.at(dN[p], (iv, pb.jumps.atoms), 1)
    counts = np.concatenate([np.zeros((P, 1, m.n_atoms), dtype=np.int64), np.cumsum(dN, axis=1)], axis=1)
    return ScenarioArrays(grid, W, dW, counts, dN, m.marks, paths)
