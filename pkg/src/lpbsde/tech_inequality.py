"""The inequality ``Psi(a, b, p) >= Gamma(a, b, K, eps, p)`` for ``1 < p < 2``.

``Psi`` is the second-order remainder of ``x -> |x|^p`` and ``Gamma`` the
quadratic/linear lower bound it must dominate.  Writing ``b = t a + c`` with
``c`` orthogonal to ``a`` and ``tau2 = |c|^2 / |a|^2`` reduces both sides to
functions of ``(t, tau2)`` (:func:`psi_reduced`, :func:`gamma_reduced`).

Besides the functions themselves the module offers a grid verifier
(:func:`check_inequality`) and a point-wise certificate
(:func:`proof_certificate`) that evaluates every intermediate bound of the
case analysis behind the inequality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TechIneqParams", "vartheta", "alpha_const", "epsilon_max", "epsilon_sufficient",
    "psi_fn", "gamma_fn", "reduce", "psi_reduced", "gamma_reduced", "h_fn",
    "check_inequality", "InequalityReport", "proof_certificate", "certify_batch",
    "CertificateReport", "certificate_sweep",
]


def _check_p(p):
    if not 1.0 < p < 2.0:
        raise ValueError(f"p must lie in (1, 2), got {p}")


def vartheta(eps: float, p: float) -> float:
    """Radius separating the quadratic and linear regimes of ``Gamma``."""
    _check_p(p)
    if not eps > 0:
        raise ValueError("eps must be positive")
    base = ((p - 1.0) / (2.0 * eps)) ** (2.0 / (2.0 - p))
    return math.sqrt(0.5 * base + 0.5) - 1.0


def alpha_const(K: float, p: float) -> float:
    """Explicit radius beyond which ``h >= 0``: ``(4(2K+2)+1)^{1/(p-1)}``."""
    _check_p(p)
    if K < 0:
        raise ValueError("K must be non-negative")
    return (4.0 * (2.0 * K + 2.0) + 1.0) ** (1.0 / (p - 1.0))


def epsilon_sufficient(K: float, p: float) -> float:
    """``(p-1) / (2 (alpha(K,p) + 1)^{2-p})``, the closed-form choice of ``eps``."""
    return (p - 1.0) / (2.0 * (alpha_const(K, p) + 1.0) ** (2.0 - p))


def epsilon_max(K: float, p: float) -> float:
    """Largest ``eps`` with ``vartheta(eps, p) >= alpha(K, p)``.

    Solving ``vartheta = alpha`` gives
    ``(p-1) / (2 (2 (alpha+1)^2 - 1)^{(2-p)/2})``, which never exceeds
    :func:`epsilon_sufficient` and is strictly below ``(p-1)/2``.
    """
    a = alpha_const(K, p)
    eps = (p - 1.0) / (2.0 * (2.0 * (a + 1.0) ** 2 - 1.0) ** ((2.0 - p) / 2.0))
    # guard the rounding of the inversion so that vartheta(eps) >= alpha holds
    while vartheta(eps, p) < a:
        eps = np.nextafter(eps, 0.0)
    return float(min(eps, epsilon_sufficient(K, p)))


@dataclass(frozen=True)
class TechIneqParams:
    p: float
    K: float = 0.0
    eps: float | None = None

    def __post_init__(self):
        _check_p(self.p)
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if self.eps is None:
            object.__setattr__(self, "eps", epsilon_max(self.K, self.p))
        if not 0 < self.eps:
            raise ValueError("eps must be positive")

    @property
    def vartheta(self) -> float:
        return vartheta(self.eps, self.p)

    @property
    def alpha_const(self) -> float:
        return alpha_const(self.K, self.p)

    @property
    def admissible(self) -> bool:
        return self.eps <= epsilon_sufficient(self.K, self.p) and self.vartheta >= self.alpha_const

    def to_json(self) -> dict:
        return {"p": self.p, "K": self.K, "eps": self.eps, "vartheta": self.vartheta,
                "alpha": self.alpha_const, "admissible": self.admissible}


def psi_fn(a, b, p: float):
    """``|a+b|^p - |a|^p - p |a|^{p-2} <a, b> 1_{a != 0}`` (vectors on the last axis)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 0:
        a, b = a[..., None], b[..., None]
    na = np.linalg.norm(a, axis=-1)
    nab = np.linalg.norm(a + b, axis=-1)
    inner = np.sum(a * b, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = np.where(na > 0, p * na ** (p - 2.0) * inner, 0.0)
    return nab ** p - na ** p - lin


def gamma_fn(a, b, K: float, eps: float, p: float):
    """``2Kp|a|^{p-1}|b| 1_{|b| >= th|a|} + p eps |a|^{p-2}|b|^2 1_{|b| < th|a|}``.

    ``Gamma(0, b) = 0``: with ``a = 0`` the first indicator is active and its
    factor ``|a|^{p-1}`` vanishes.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 0:
        a, b = a[..., None], b[..., None]
    th = vartheta(eps, p)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    far = nb >= th * na
    with np.errstate(divide="ignore", invalid="ignore"):
        quad = np.where(na > 0, p * eps * na ** (p - 2.0) * nb ** 2, 0.0)
    return np.where(far, 2.0 * K * p * na ** (p - 1.0) * nb, quad)


def reduce(a, b):
    """Coordinates ``(t, tau2)`` of ``b`` relative to ``a``: ``b = t a + c``, ``c ⟂ a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 0:
        a, b = a[..., None], b[..., None]
    na2 = np.sum(a * a, axis=-1)
    if np.any(na2 == 0):
        raise ValueError("reduction needs a != 0")
    t = np.sum(a * b, axis=-1) / na2
    tau2 = np.maximum((np.sum(b * b, axis=-1) - t * t * na2) / na2, 0.0)
    return t, tau2


def psi_reduced(t, tau2, p: float):
    """``((1+t)^2 + tau2)^{p/2} - 1 - p t`` evaluated without cancellation near 0."""
    t = np.asarray(t, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    x = t * (2.0 + t) + tau2
    with np.errstate(divide="ignore"):
        head = np.expm1(0.5 * p * np.log1p(x))
    return head - p * t


def gamma_reduced(t, tau2, K: float, eps: float, p: float):
    t = np.asarray(t, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    r2 = t * t + tau2
    r = np.sqrt(r2)
    return np.where(r >= vartheta(eps, p), 2.0 * K * p * r, p * eps * r2)


def h_fn(x, K: float, p: float):
    """``x^p / 2^{p/2} - 2^{p/2} - 1 - p (2K+1) x``."""
    x = np.asarray(x, dtype=float)
    return x ** p / 2.0 ** (p / 2.0) - 2.0 ** (p / 2.0) - 1.0 - p * (2.0 * K + 1.0) * x


@dataclass
class InequalityReport:
    params: TechIneqParams
    n_points: int
    min_slack: float
    argmin: tuple
    violations: list = field(default_factory=list)
    n_violations: int = 0

    @property
    def ok(self) -> bool:
        return self.n_violations == 0

    def to_json(self) -> dict:
        return {"params": self.params.to_json(), "n_points": self.n_points,
                "min_slack": self.min_slack, "argmin": list(self.argmin),
                "n_violations": self.n_violations, "violations": self.violations,
                "ok": self.ok}


def _grid_points(params, t_range, tau_range, n_t, n_tau, far_field, n_radii, n_angles):
    t = np.linspace(t_range[0], t_range[1], n_t)
    tau = np.linspace(tau_range[0], tau_range[1], n_tau)
    T, TAU = np.meshgrid(t, tau, indexing="ij")
    ts, tau2s = [T.ravel()], [(TAU ** 2).ravel()]
    if far_field:
        r0 = max(math.hypot(max(abs(t_range[0]), abs(t_range[1])), tau_range[1]), 1e-3)
        r1 = 10.0 * params.vartheta
        if r1 > r0:
            radii = np.geomspace(r0, r1, n_radii)
            # land exactly on both sides of the regime switch
            th = params.vartheta
            radii = np.concatenate([radii, [th, np.nextafter(th, 0.0)]])
            ang = np.linspace(0.0, math.pi, n_angles)
            R, A = np.meshgrid(radii, ang, indexing="ij")
            ts.append((R * np.cos(A)).ravel())
            tau2s.append(((R * np.sin(A)) ** 2).ravel())
    return np.concatenate(ts), np.concatenate(tau2s)


def check_inequality(params: TechIneqParams, t_range=(-50.0, 50.0), tau_range=(0.0, 50.0),
                     n_t: int = 500, n_tau: int = 250, *, far_field: bool = True,
                     n_radii: int = 400, n_angles: int = 181, max_witnesses: int = 20,
                     rel_tol: float = 1e-12) -> InequalityReport:
    """Evaluate ``psi_reduced - gamma_reduced`` on a ``(t, tau)`` grid.

    The far field is sampled on log-spaced radii up to ``10 * vartheta``.
    A point is a violation when its slack is below ``-rel_tol (1 + |psi|)``.
    The reported argmin is the smallest slack, ties broken lexicographically.
    """
    if not (t_range[0] < t_range[1] and 0 <= tau_range[0] < tau_range[1]):
        raise ValueError("invalid grid ranges")
    if n_t < 2 or n_tau < 2:
        raise ValueError("grid needs at least two points per axis")
    t, tau2 = _grid_points(params, t_range, tau_range, n_t, n_tau, far_field, n_radii, n_angles)
    ps = psi_reduced(t, tau2, params.p)
    slack = ps - gamma_reduced(t, tau2, params.K, params.eps, params.p)
    bad = slack < -rel_tol * (1.0 + np.abs(ps))
    order = np.lexsort((tau2, t, slack))
    i = int(order[0])
    idx = np.nonzero(bad)[0]
    idx = idx[np.lexsort((tau2[idx], t[idx], slack[idx]))][:max_witnesses]
    witnesses = [{"t": float(t[j]), "tau2": float(tau2[j]), "slack": float(slack[j])} for j in idx]
    return InequalityReport(params, len(t), float(slack[i]), (float(t[i]), float(tau2[i])),
                            witnesses, int(bad.sum()))


@dataclass
class CertificateReport:
    t: float
    tau2: float
    params: TechIneqParams
    case: str
    sigma_at_minus1: float = math.nan
    sigma_prime_at_minus1: float = math.nan
    sigma_prime_at_zero: float = math.nan
    Xi: float = math.nan
    Upsilon: float = math.nan
    delta_star: float = math.nan
    interior_minimum: float = math.nan
    h_at_threshold: float = math.nan
    bound_checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.bound_checks.values())


def _sigma(s, tau2, eps, p):
    return psi_reduced(s, tau2, p) - p * eps * (s * s + tau2)


def _sigma_prime(s, tau2, eps, p):
    return p * ((1.0 + s) ** 2 + tau2) ** (p / 2.0 - 1.0) * (1.0 + s) - p - 2.0 * p * eps * s


def _varpi(x, tau2, eps, p):
    return ((2.0 - p) * eps * x * x + (2.0 * eps + 1.0 - p) * x + (2.0 - p) * eps * tau2
            + tau2 * (1.0 - 2.0 * eps) / (1.0 + x))


def certify_batch(t, tau2, params: TechIneqParams, tol: float = 1e-12) -> dict:
    """Vectorised certificate; returns arrays keyed by quantity and check name.

    Inner case (``r = sqrt(t^2 + tau2) < vartheta``): the quadratic bound
    ``sigma(s) = psi(s) - p eps (s^2 + tau2) >= 0`` is argued through the roots
    ``Xi < -1 < Upsilon`` of the lower bound ``g`` of ``sigma''`` and the
    stationary point ``delta*`` of ``sigma`` on ``(-1, Upsilon)``.
    ``sigma'(0) <= 0`` for ``tau2 >= 0``, so ``delta*`` lies in ``[0, Upsilon)``
    and is bracketed there by bisection.

    Outer case (``r >= vartheta``): ``psi - 2Kp r >= h(r) >= 0`` via
    ``(1+t)^2 >= t^2/2 - 2``.
    """
    p, K, eps = params.p, params.K, params.eps
    th = params.vartheta
    t = np.atleast_1d(np.asarray(t, dtype=float))
    tau2 = np.atleast_1d(np.asarray(tau2, dtype=float))
    r = np.sqrt(t * t + tau2)
    inner = r < th
    A = ((p - 1.0) / (2.0 * eps)) ** (2.0 / (2.0 - p))
    out = {"inner": inner, "r": r}
    ps = psi_reduced(t, tau2, p)

    # inner case quantities
    s_m1 = _sigma(-1.0, tau2, eps, p)
    sp_m1 = np.full_like(tau2, -p + 2.0 * p * eps)
    with np.errstate(divide="ignore"):
        g_m1 = np.where(tau2 > 0, p * (p - 1.0) * tau2 ** (p / 2.0 - 1.0), np.inf) - 2.0 * p * eps
    root = np.sqrt(np.maximum(A - tau2, 0.0))
    Xi = -1.0 - root
    Ups = root - 1.0
    sp0 = p * ((1.0 + tau2) ** (p / 2.0 - 1.0) - 1.0)
    lo = np.full_like(tau2, -1.0)
    hi = np.where(inner, np.maximum(Ups, 0.0), 0.0)
    f_hi = _sigma_prime(hi, tau2, eps, p)
    bracketed = f_hi >= 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pos = _sigma_prime(mid, tau2, eps, p) >= 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
        if np.all(hi - lo <= 1e-14 * np.maximum(1.0, np.abs(hi))):
            break
    delta = 0.5 * (lo + hi)
    sig_d = _sigma(delta, tau2, eps, p)
    m = _varpi(delta, tau2, eps, p)
    scale = 1.0 + np.abs(sig_d)
    varpi_slope0 = 2.0 * eps + 1.0 - p - tau2 * (1.0 - 2.0 * eps)
    sig_t = _sigma(t, tau2, eps, p)

    inner_checks = {
        "eps_below_minimum": np.full_like(t, eps < min((p - 1.0) / 2.0, (p - 1.0) / p, 0.5), dtype=bool),
        # vartheta^2 < (A - 1)/2  <=>  sqrt(A/2 + 1/2) > 1; the direct form cancels catastrophically
        "up_bound_tau_1": (tau2 < th * th) & (math.sqrt(0.5 * A + 0.5) > 1.0),
        "up_bound_tau": (tau2 < A - 1.0) & (tau2 <= (1.0 / (p * eps)) ** (2.0 / (2.0 - p)))
                        & (tau2 < (1.0 / (2.0 * eps)) ** (2.0 / (2.0 - p)) - 1.0),
        "sigma_at_minus1_positive": s_m1 > 0,
        "sigma_prime_at_minus1_negative": sp_m1 < 0,
        "g_at_minus1_positive": g_m1 > 0,
        "xi_below_t": (Xi < -1.0) & (t > -th) & (-th > Xi),
        "upsilon_positive": Ups > 0,
        "t_below_upsilon": (t < th) & (th < Ups),
        "delta_star_bracketed": bracketed & (delta > -1.0) & (delta < np.maximum(Ups, 0.0) + 1e-12),
        "minimum_identity": np.abs(sig_d - m) <= 1e-9 * scale,
        "varpi_decreasing": varpi_slope0 < 0,
        "varpi_at_zero_nonneg": tau2 * (1.0 - p * eps) >= 0,
        "interior_minimum_nonneg": m >= -tol * scale,
        "sigma_at_t_nonneg": sig_t >= -tol * (1.0 + np.abs(ps)),
    }
    out.update(sigma_at_minus1=s_m1, sigma_prime_at_minus1=sp_m1, sigma_prime_at_zero=sp0,
               Xi=Xi, Upsilon=Ups, delta_star=delta, interior_minimum=m)

    # outer case quantities
    h_r = h_fn(r, K, p)
    lhs = ps - 2.0 * K * p * r
    outer_checks = {
        "theta_at_least_alpha": np.full_like(t, th >= params.alpha_const, dtype=bool),
        "radius_at_least_two": r * r >= 4.0,
        "square_lower_bound": (1.0 + t) ** 2 >= t * t / 2.0 - 2.0,
        "tech_ineq_1008": ((1.0 + t) ** 2 + tau2) ** (p / 2.0)
                          >= (r * r / 2.0) ** (p / 2.0) - 2.0 ** (p / 2.0) - tol * (1.0 + r ** p),
        "chain_to_h": lhs >= h_r - tol * (1.0 + np.abs(ps)),
        "h_nonneg": h_r >= 0,
        "psi_dominates_linear": lhs >= -tol * (1.0 + np.abs(ps)),
    }
    out["h_at_radius"] = h_r
    out["inner_checks"] = inner_checks
    out["outer_checks"] = outer_checks
    return out


def proof_certificate(t: float, tau2: float, params: TechIneqParams) -> CertificateReport:
    """Certificate for one point ``(t, tau2)``; ``case`` is "inner" or "outer"."""
    if tau2 < 0:
        raise ValueError("tau2 must be non-negative")
    res = certify_batch([t], [tau2], params)
    inner = bool(res["inner"][0])
    rep = CertificateReport(float(t), float(tau2), params, "inner" if inner else "outer")
    if inner:
        for key in ("sigma_at_minus1", "sigma_prime_at_minus1", "sigma_prime_at_zero",
                    "Xi", "Upsilon", "delta_star", "interior_minimum"):
            setattr(rep, key, float(res[key][0]))
        rep.bound_checks = {k: bool(v[0]) for k, v in res["inner_checks"].items()}
    else:
        rep.h_at_threshold = float(res["h_at_radius"][0])
        rep.bound_checks = {k: bool(v[0]) for k, v in res["outer_checks"].items()}
    return rep


def certificate_sweep(params: TechIneqParams, n: int = 10_000, seed: int = 0,
                      outer_span: float = 100.0) -> dict:
    """Run the certificate on ``n`` random points in each case.

    Inner points are uniform on the half disc ``r < vartheta`` in the
    ``(t, tau)`` plane; outer points have log-uniform radius in
    ``[vartheta, outer_span * vartheta]`` and uniform angle.
    """
    rng = np.random.default_rng(seed)
    th = params.vartheta
    out = {"n": n, "seed": seed, "failures": {}}
    for case in ("inner", "outer"):
        if case == "inner":
            rad = th * np.sqrt(rng.random(n))
        else:
            rad = th * np.exp(rng.uniform(0.0, math.log(outer_span), n))
        ang = rng.uniform(0.0, math.pi, n)
        t, tau2 = rad * np.cos(ang), (rad * np.sin(ang)) ** 2
        res = certify_batch(t, tau2, params)
        sel = res["inner"] if case == "inner" else ~res["inner"]
        checks = res[f"{case}_checks"]
        out["failures"][case] = {k: int(np.sum(~v[sel])) for k, v in checks.items()}
        out[f"n_{case}"] = int(np.sum(sel))
    out["ok"] = all(v == 0 for c in out["failures"].values() for v in c.values())
    return out
