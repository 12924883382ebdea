"""Jump-mark measures and their moment integrals.

Two kinds of measure are supported:

* :class:`Atomic` -- finitely many marks ``u_i`` in ``R^m`` with weights ``w_i``;
* :class:`PowerLaw` -- the symmetric density ``|u|^{-1-alpha} du`` on
  ``0 < |u| <= cutoff`` in dimension one.

Integrals of power laws are computed from antiderivatives, never by
quadrature.  Divergent integrals are returned as ``math.inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "InvalidMeasure", "Atomic", "PowerLaw", "AtomValues", "PowerForm",
    "ValidationReport", "validate_measure", "moment_integral",
    "interval_moment", "total_mass", "measure_from_json", "measure_to_json",
]


class InvalidMeasure(ValueError):
    """Malformed measure data (zero mark, non-positive weight, ...)."""


@dataclass(frozen=True, eq=False)
class Atomic:
    """Finite atomic measure ``sum_i w_i delta_{u_i}``."""

    marks: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        marks = np.atleast_1d(np.asarray(self.marks, dtype=float))
        if marks.ndim == 1:
            marks = marks[:, None]
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if marks.ndim != 2 or weights.ndim != 1 or len(weights) != len(marks):
            raise InvalidMeasure("marks must be (n, m) and weights (n,)")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise InvalidMeasure("atom weights must be finite and strictly positive")
        if np.any(~np.isfinite(marks)):
            raise InvalidMeasure("atom marks must be finite")
        if len(marks) and np.any(np.linalg.norm(marks, axis=1) == 0):
            raise InvalidMeasure("atom marks must be nonzero")
        if len(np.unique(marks, axis=0)) != len(marks):
            raise InvalidMeasure("atom marks must be pairwise distinct")
        marks.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.marks.shape[1]

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    @property
    def mark_norms(self) -> np.ndarray:
        return np.linalg.norm(self.marks, axis=1)

    def scaled(self, factor: float) -> "Atomic":
        return Atomic(self.marks, self.weights * factor)


@dataclass(frozen=True)
class PowerLaw:
    """Symmetric power-law measure ``|u|^{-1-alpha} du`` on ``0 < |u| <= cutoff``.

    ``scale`` multiplies the density; it is used for product measures
    ``mu x Leb[0, T]`` restricted to time-constant integrands.
    """

    alpha: float
    cutoff: float = math.inf
    scale: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InvalidMeasure("alpha must be positive and finite")
        if not self.cutoff > 0:
            raise InvalidMeasure("cutoff must be positive")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidMeasure("scale must be positive and finite")

    @property
    def dim(self) -> int:
        return 1

    def scaled(self, factor: float) -> "PowerLaw":
        return PowerLaw(self.alpha, self.cutoff, self.scale * factor)


LevyMeasure = Union[Atomic, PowerLaw]


@dataclass(frozen=True, eq=False)
class AtomValues:
    """Mark function given by its values at the atoms, shape ``(n_atoms, d)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("atom values must have shape (n_atoms, d)")
        object.__setattr__(self, "values", v)

    @property
    def codim(self) -> int:
        return self.values.shape[1]

    @property
    def magnitudes(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1)

    def __add__(self, other: "AtomValues") -> "AtomValues":
        return AtomValues(self.values + other.values)

    def __sub__(self, other: "AtomValues") -> "AtomValues":
        return AtomValues(self.values - other.values)

    def __mul__(self, c: float) -> "AtomValues":
        return AtomValues(self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class PowerForm:
    """``psi(u) = coef * u`` restricted to ``lo < |u| <= hi`` (power-law marks)."""

    coef: float
    lo: float = 0.0
    hi: float = math.inf

    @property
    def codim(self) -> int:
        return 1


MarkFunction = Union[AtomValues, PowerForm]


@dataclass
class ValidationReport:
    ok: bool
    integral: float
    reason: str = ""


def _power_integral(q: float, alpha: float, lo: float, hi: float) -> float:
    """``2 * int_lo^hi u^{q-1-alpha} du`` for ``0 <= lo <= hi <= inf``."""
    if hi <= lo:
        return 0.0
    e = q - alpha
    if lo == 0.0 and e <= 0:
        return math.inf
    if math.isinf(hi) and e >= 0:
        return math.inf
    if e == 0:
        return 2.0 * math.log(hi / lo)
    upper = 0.0 if math.isinf(hi) else hi ** e
    lower = 0.0 if lo == 0.0 else lo ** e
    return 2.0 * (upper - lower) / e


def interval_moment(m: LevyMeasure, q: float, lo: float = 0.0, hi: float = math.inf) -> float:
    """``int_{lo < |u| <= hi} |u|^q mu(du)``."""
    if q < 0:
        raise ValueError("exponent must be non-negative")
    if isinstance(m, Atomic):
        r = m.mark_norms
        mask = (r > lo) & (r <= hi)
        return float(np.sum(m.weights[mask] * r[mask] ** q))
    return m.scale * _power_integral(q, m.alpha, lo, min(hi, m.cutoff))


def moment_integral(m: LevyMeasure, q: float, region: str = "all", delta: float = 1.0) -> float:
    """``int |u|^q mu(du)`` over ``|u| <= delta`` ("below"), ``|u| > delta``
    ("above") or everywhere ("all").  Marks with ``|u| == delta`` count as below.
    """
    if region != "all" and not delta > 0:
        raise ValueError("threshold must be positive")
    if region == "below":
        return interval_moment(m, q, 0.0, delta)
    if region == "above":
        return interval_moment(m, q, delta, math.inf)
    if region == "all":
        return interval_moment(m, q, 0.0, math.inf)
    raise ValueError(f"unknown region {region!r}")


def total_mass(m: LevyMeasure, eta: float = 0.0) -> float:
    """Mass of ``{|u| > eta}``; for atomic measures ``eta`` defaults to keeping all atoms."""
    return interval_moment(m, 0.0, eta, math.inf)


def validate_measure(m: LevyMeasure) -> ValidationReport:
    """Check ``int (1 ^ |u|^2) mu(du) < inf`` and report its value."""
    if isinstance(m, Atomic):
        r = m.mark_norms
        val = float(np.sum(m.weights * np.minimum(1.0, r ** 2)))
        return ValidationReport(True, val)
    small = interval_moment(m, 2.0, 0.0, 1.0)
    large = interval_moment(m, 0.0, 1.0, math.inf)
    val = small + large
    if math.isinf(small):
        return ValidationReport(False, math.inf, "small-jump integral diverges (alpha >= 2)")
    if math.isinf(large):
        return ValidationReport(False, math.inf, "large-jump mass diverges")
    return ValidationReport(True, val)


def measure_to_json(m: LevyMeasure) -> dict:
    if isinstance(m, Atomic):
        return {"type": "atomic",
                "atoms": [{"u": [float(x) for x in u], "w": float(w)}
                          for u, w in zip(m.marks, m.weights)]}
    out = {"type": "powerlaw", "alpha": m.alpha,
           "cutoff": None if math.isinf(m.cutoff) else m.cutoff}
    if m.scale != 1.0:
        out["scale"] = m.scale
    return out


def measure_from_json(obj: dict) -> LevyMeasure:
    kind = obj.get("type")
    if kind == "atomic":
        atoms = obj.get("atoms")
        if not atoms:
            raise InvalidMeasure("atomic measure needs a non-empty 'atoms' list")
        marks = [np.atleast_1d(np.asarray(a["u"], dtype=float)) for a in atoms]
        return Atomic(np.array(marks), np.array([a["w"] for a in atoms], dtype=float))
    if kind == "powerlaw":
        cutoff = obj.get("cutoff")
        return PowerLaw(float(obj["alpha"]), math.inf if cutoff is None else float(cutoff),
                        float(obj.get("scale", 1.0)))
    raise InvalidMeasure(f"unknown measure type {kind!r}")
