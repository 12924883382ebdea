"""Norms on the sum spaces ``L^q_mu + L^2_mu`` (``q = 1`` or ``1 < q < 2``).

For an atomic measure the infimum over splits ``phi = phi1 + phi2`` reduces
to a convex problem in the per-atom magnitudes ``s_i = |phi1_i|`` (the
optimal ``phi1_i`` is parallel to ``phi_i`` and ``0 <= s_i <= |phi_i|``).
Its minimiser lies on the Pareto path of ``(||s||_q, ||phi - s||_2)``, which
is a one-parameter family; we search that path (grid, golden section, then a
root solve of the stationarity condition) and certify the result with a
dual feasible point of the intersection norm ``max(||l||_{q'}, ||l||_2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .levy_measure import (Atomic, AtomValues, LevyMeasure, MarkFunction, PowerForm,
                           PowerLaw, interval_moment)

__all__ = [
    "SumNormResult", "DualWeight", "NonConvergence", "lp_norm", "threshold_split",
    "threshold_bound", "sum_norm", "sum_norm_bruteforce", "dual_norm",
    "pairing_bound_check", "time_integrated_bound_check", "BoundReport",
]

# log grid of thresholds used for the certified upper-bound family
DELTA_GRID = np.logspace(-6, 6, 241)


class NonConvergence(RuntimeError):
    def __init__(self, msg, best_bound):
        super().__init__(msg)
        self.best_bound = best_bound


@dataclass
class SumNormResult:
    value: float
    decomposition: tuple
    method: str
    gap: float
    lower_bound: float = 0.0
    threshold_bound: float = math.inf

    def to_json(self) -> dict:
        def enc(phi):
            if isinstance(phi, AtomValues):
                return phi.values.tolist()
            return {"coef": phi.coef, "lo": phi.lo, "hi": None if math.isinf(phi.hi) else phi.hi}
        return {"value": _jnum(self.value), "method": self.method, "gap": _jnum(self.gap),
                "lower_bound": _jnum(self.lower_bound),
                "threshold_bound": _jnum(self.threshold_bound),
                "decomposition": {"low": enc(self.decomposition[0]),
                                  "high": enc(self.decomposition[1])}}


def _jnum(x):
    return None if math.isinf(x) else float(x)


@dataclass
class DualWeight:
    ell: MarkFunction
    sup_norm: float
    l2_norm: float
    flagged: bool = False

    @property
    def value(self) -> float:
        return max(self.sup_norm, self.l2_norm)


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    ok: bool
    details: dict = field(default_factory=dict)


def _check_compatible(phi: MarkFunction, m: LevyMeasure):
    if isinstance(phi, AtomValues):
        if not isinstance(m, Atomic) or len(phi.values) != m.n_atoms:
            raise ValueError("atom values do not match the measure's atoms")
    elif isinstance(phi, PowerForm):
        if not isinstance(m, PowerLaw):
            raise ValueError("power-form functions need a power-law measure")
    else:
        raise TypeError(f"unsupported mark function {type(phi).__name__}")


def lp_norm(phi: MarkFunction, m: LevyMeasure, q: float) -> float:
    """``(int |phi|^q dmu)^{1/q}``; ``inf`` when the integral diverges."""
    if q < 1:
        raise ValueError("q must be >= 1")
    _check_compatible(phi, m)
    if isinstance(phi, AtomValues):
        return float(np.sum(m.weights * phi.magnitudes ** q) ** (1.0 / q))
    c = abs(phi.coef)
    if c == 0.0:
        return 0.0
    val = interval_moment(m, q, phi.lo, phi.hi)
    return math.inf if math.isinf(val) else c * val ** (1.0 / q)


def threshold_split(phi: MarkFunction, delta: float):
    """``(phi 1_{|phi| <= delta}, phi 1_{|phi| > delta})``."""
    if not delta > 0:
        raise ValueError("threshold must be positive")
    if isinstance(phi, AtomValues):
        low = phi.magnitudes <= delta
        return (AtomValues(np.where(low[:, None], phi.values, 0.0)),
                AtomValues(np.where(low[:, None], 0.0, phi.values)))
    c = abs(phi.coef)
    if c == 0.0:
        return phi, PowerForm(0.0, phi.lo, phi.hi)
    cut = min(max(delta / c, phi.lo), phi.hi)
    return PowerForm(phi.coef, phi.lo, cut), PowerForm(phi.coef, cut, phi.hi)


def threshold_bound(phi: MarkFunction, m: LevyMeasure, q: float, deltas=None):
    """Best ``||phi 1_{|phi|>d}||_q + ||phi 1_{|phi|<=d}||_2`` over a threshold family.

    Returns ``(bound, delta)``.  The family always includes the two trivial
    splits (all in ``L^2``, all in ``L^q``).
    """
    if deltas is None:
        deltas = DELTA_GRID
        if isinstance(phi, AtomValues):
            mags = np.unique(phi.magnitudes[phi.magnitudes > 0])
            deltas = np.concatenate([deltas, mags])
    best, arg = math.inf, None
    for d in deltas:
        low, high = threshold_split(phi, float(d))
        val = lp_norm(high, m, q) + lp_norm(low, m, 2.0)
        if val < best:
            best, arg = val, float(d)
    for val, d in ((lp_norm(phi, m, 2.0), math.inf), (lp_norm(phi, m, q), 0.0)):
        if val < best:
            best, arg = val, d
    return best, arg


def _objective(s, r, w, q):
    return (np.sum(w * s ** q, axis=-1) ** (1.0 / q)
            + np.sqrt(np.sum(w * (r - s) ** 2, axis=-1)))


def _path_point(lam, r, q):
    """Minimiser of ``lam/q sum w s^q + 1/2 sum w (r - s)^2`` (per atom).

    As ``lam`` runs over ``(0, inf)`` these points trace the Pareto front of
    ``(||s||_q, ||r - s||_2)``, on which the sum-norm objective is unimodal.
    """
    lam = np.asarray(lam, dtype=float)[..., None]
    if q == 1.0:
        return np.maximum(r - lam, 0.0)
    lo = np.zeros(np.broadcast(lam, r).shape)
    hi = np.broadcast_to(r, lo.shape).copy()
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        pos = mid + lam * mid ** (q - 1.0) > r
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return 0.5 * (lo + hi)


def _path_minimise(r, w, q, n_grid=400, n_refine=200):
    """Search the Pareto path: coarse grid, then golden-section refinement."""
    if q == 1.0:
        xs = np.unique(np.concatenate([np.linspace(0.0, r.max(), n_grid), r]))
        to_lam = lambda x: x
    else:
        centre = math.log(r.max() ** (2.0 - q))
        xs = np.linspace(centre - 35.0, centre + 35.0, n_grid)
        to_lam = np.exp
    vals = _objective(_path_point(to_lam(xs), r, q), r, w, q)
    k = int(np.argmin(vals))
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, len(xs) - 1)]
    best_x, best_v = xs[k], vals[k]
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc = _objective(_path_point(to_lam(c), r, q), r, w, q)
    fd = _objective(_path_point(to_lam(d), r, q), r, w, q)
    for _ in range(n_refine):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = _objective(_path_point(to_lam(c), r, q), r, w, q)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = _objective(_path_point(to_lam(d), r, q), r, w, q)
        if b - a < 1e-15 * max(1.0, abs(a)):
            break
    for x, v in ((c, fc), (d, fd)):
        if v < best_v:
            best_x, best_v = x, v
    # polish: the optimum satisfies lam = ||s||_q^{1-q} ||r - s||_2 on the path
    lo_x, hi_x = xs[max(k - 2, 0)], xs[min(k + 2, len(xs) - 1)]
    try:
        ra, rb = _kkt_residual(lo_x, r, w, q, to_lam), _kkt_residual(hi_x, r, w, q, to_lam)
        if np.isfinite(ra) and np.isfinite(rb) and ra * rb < 0:
            x = brentq(_kkt_residual, lo_x, hi_x, args=(r, w, q, to_lam), xtol=1e-300,
                       rtol=4 * np.finfo(float).eps, maxiter=500)
            v = float(_objective(_path_point(to_lam(x), r, q), r, w, q))
            if v <= best_v + 1e-14 * max(1.0, best_v):
                best_x, best_v = x, v
    except ValueError:
        pass
    return _path_point(to_lam(best_x), r, q), float(best_v)


def _kkt_residual(x, r, w, q, to_lam):
    lam = float(to_lam(x))
    s = _path_point(lam, r, q)
    a = float(np.sum(w * s ** q))
    b = float(np.sum(w * (r - s) ** 2))
    if a <= 0 or b <= 0:
        return np.nan
    return lam - a ** (1.0 / q - 1.0) * math.sqrt(b)


def _dual_lower_bound(s, r, w, q):
    """Lower bound ``<|phi|, l>_w`` from dual candidates built at ``s``."""
    best = 0.0
    cands = []
    b = np.sum(w * (r - s) ** 2)
    if b > 0:
        cands.append((r - s) / math.sqrt(b))
    a = np.sum(w * s ** q)
    if a > 0:
        cands.append(s ** (q - 1.0) * a ** (1.0 / q - 1.0))
    cands.append(np.ones_like(r))
    cands.append(r.copy())
    for ell in cands:
        if q == 1.0:
            nq = float(np.max(np.abs(ell))) if len(ell) else 0.0
        else:
            qc = q / (q - 1.0)
            nq = float(np.sum(w * np.abs(ell) ** qc) ** (1.0 / qc))
        n2 = math.sqrt(float(np.sum(w * ell ** 2)))
        scale = max(nq, n2)
        if scale > 0:
            best = max(best, float(np.sum(w * r * ell)) / scale)
    return best


def _as_split(phi: AtomValues, s, r):
    frac = np.divide(s, r, out=np.zeros_like(r), where=r > 0)
    high = phi.values * frac[:, None]
    return AtomValues(phi.values - high), AtomValues(high)


def sum_norm(phi: MarkFunction, m: LevyMeasure, q: float = 1.0, *,
             tol: float = 1e-9) -> SumNormResult:
    """``inf_{phi1 + phi2 = phi} ||phi1||_{L^q} + ||phi2||_{L^2}``.

    The decomposition is returned as ``(phi_low, phi_high)`` with
    ``phi_low`` the ``L^2`` part.  For power-form functions only the best
    threshold split is available and ``gap`` is ``inf``.
    """
    if not (q == 1.0 or 1.0 < q < 2.0):
        raise ValueError("q must be 1 or lie in (1, 2)")
    _check_compatible(phi, m)
    tb, tdelta = threshold_bound(phi, m, q)
    if isinstance(phi, PowerForm):
        if math.isinf(tdelta):
            dec = (phi, PowerForm(0.0))
        elif tdelta == 0.0:
            dec = (PowerForm(0.0), phi)
        else:
            dec = threshold_split(phi, tdelta)
        return SumNormResult(tb, dec, "threshold-upper-bound", math.inf, 0.0, tb)

    r = phi.magnitudes
    w = np.asarray(m.weights, dtype=float)
    if not np.any(r > 0):
        zero = AtomValues(np.zeros_like(phi.values))
        return SumNormResult(0.0, (zero, zero), "exact-bruteforce", 0.0, 0.0, 0.0)

    best_s, best_val = _path_minimise(r, w, q)
    for s in (r.copy(), np.zeros_like(r)):
        val = float(_objective(s, r, w, q))
        if val < best_val:
            best_s, best_val = s, val
    lower = _dual_lower_bound(best_s, r, w, q)
    gap = max(best_val - lower, 0.0)
    if gap > tol * max(1.0, best_val):
        raise NonConvergence(f"sum-norm gap {gap:.3e} above tolerance", min(best_val, tb))
    return SumNormResult(best_val, _as_split(phi, best_s, r), "convex-opt", gap, lower, tb)


def sum_norm_bruteforce(phi: AtomValues, m: Atomic, q: float, *, points: int = 11,
                        rel_width: float = 1e-9) -> float:
    """Nested zooming grid search over real splits of a scalar function on <= 3 atoms.

    Each coordinate ``phi1_i`` is searched over the real line (not only over
    ``[0, phi_i]``).  The partial minimum over the trailing coordinates is
    convex in the leading one, so a 1-D grid zoom that keeps the two cells
    adjacent to the grid argmin never loses the minimiser.
    """
    v = phi.values
    if v.shape[1] != 1 or len(v) > 3:
        raise ValueError("brute force handles scalar functions on at most 3 atoms")
    v = v[:, 0]
    w = np.asarray(m.weights, dtype=float)
    n = len(v)
    span = float(np.max(np.abs(v)))
    if span == 0.0:
        return 0.0

    def f(x):
        part_q = np.sum(w * np.abs(x) ** q, axis=-1) ** (1.0 / q)
        part_2 = np.sqrt(np.sum(w * (v - x) ** 2, axis=-1))
        return part_q + part_2

    def partial_min(prefix):
        # prefix: (B, j) fixed leading coordinates -> min over the remaining ones
        B, j = prefix.shape
        if j == n:
            return f(prefix)
        lo = np.full(B, -2.0 * span)
        hi = np.full(B, 2.0 * span)
        best = np.full(B, np.inf)
        while np.max(hi - lo) > rel_width * span:
            xs = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, points)[None, :]
            ext = np.concatenate([np.repeat(prefix, points, axis=0), xs.reshape(-1, 1)], axis=1)
            vals = partial_min(ext).reshape(B, points)
            k = np.argmin(vals, axis=1)
            best = np.minimum(best, vals[np.arange(B), k])
            step = (hi - lo) / (points - 1)
            centre = xs[np.arange(B), k]
            lo, hi = centre - step, centre + step
        return best

    return float(partial_min(np.zeros((1, 0)))[0])


def dual_norm(ell: MarkFunction, m: LevyMeasure) -> DualWeight:
    """Norm of ``ell`` in ``L^inf_mu cap L^2_mu`` (dual of ``L^1_mu + L^2_mu``)."""
    _check_compatible(ell, m)
    if ell.codim != 1:
        raise ValueError("dual weight must be scalar valued")
    if isinstance(ell, AtomValues):
        mags = ell.magnitudes
        sup = float(np.max(mags)) if len(mags) else 0.0
        l2 = lp_norm(ell, m, 2.0)
    else:
        c = abs(ell.coef)
        sup = 0.0 if c == 0 else c * min(ell.hi, m.cutoff)
        l2 = lp_norm(ell, m, 2.0)
    return DualWeight(ell, sup, l2, flagged=math.isinf(sup) or math.isinf(l2))


def pairing_bound_check(ell: DualWeight, psi: AtomValues, phi: AtomValues,
                        m: Atomic) -> BoundReport:
    """Check ``|int (psi - phi) l dmu| <= ||l||_{inf cap 2} ||psi - phi||_{L^1 + L^2}``."""
    diff = psi - phi
    _check_compatible(diff, m)
    pairing = np.sum(m.weights[:, None] * diff.values * ell.ell.values[:, :1], axis=0)
    lhs = float(np.linalg.norm(pairing))
    norm = sum_norm(diff, m, 1.0).value
    rhs = ell.value * norm
    return BoundReport(lhs, rhs, lhs <= rhs * (1 + 1e-9), {"sum_norm": norm, "dual": ell.value})


def time_integrated_bound_check(slices, m: Atomic, grid) -> BoundReport:
    """Check ``int_0^T ||phi_s||_{L^1+L^2} ds <= (1 v sqrt(T)) ||phi||_{L^1_nu + L^2_nu}``.

    ``slices`` has shape ``(n_steps, n_atoms, d)``: ``phi`` is constant on each
    grid interval.  The product measure ``nu = mu x Leb`` is discretised on
    the grid, which is exact for piecewise-constant ``phi``.
    """
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    slices = np.asarray(slices, dtype=float)
    if slices.ndim == 2:
        slices = slices[:, :, None]
    if len(slices) != len(h):
        raise ValueError("one slice per grid interval is required")
    T = grid[-1] - grid[0]
    per_slice = np.array([sum_norm(AtomValues(s), m, 1.0).value for s in slices])
    lhs = float(np.sum(h * per_slice))
    # atoms of nu are (interval, mark) pairs; only their weights enter the norm
    nu = Atomic(np.arange(1, len(h) * m.n_atoms + 1, dtype=float),
                (h[:, None] * m.weights[None, :]).ravel())
    joint = sum_norm(AtomValues(slices.reshape(-1, slices.shape[2])), nu, 1.0).value
    factor = max(1.0, math.sqrt(T))
    rhs = factor * joint
    return BoundReport(lhs, rhs, lhs <= rhs * (1 + 1e-6),
                       {"factor": factor, "space_time_norm": joint, "slice_norms": per_slice.tolist()})
