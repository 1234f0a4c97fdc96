"""Moduli of convexity / monotonicity and the p-power constants C(p), t_p."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Mapping

import numpy as np

from .grid import Potential

Kind = Literal["convexity", "monotonicity"]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ModulusSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Modulus:
    """Radial modulus ``m(z) = profile(|z|)``."""

    profile: Callable[[np.ndarray], np.ndarray]
    kind: Kind = "convexity"
    name: str = "modulus"

    def __call__(self, z):
        return self.profile(np.abs(np.asarray(z, dtype=float)))

    def scaled(self, factor: float, kind: Kind | None = None) -> "Modulus":
        prof = self.profile
        return Modulus(lambda t: factor * prof(t), kind or self.kind, f"{factor:g}*{self.name}")


def power_modulus(p: float, coeff: float = 1.0, kind: Kind = "convexity") -> Modulus:
    """``coeff * t^p``."""
    p, coeff = float(p), float(coeff)
    return Modulus(lambda t: coeff * np.abs(t) ** p, kind, f"{coeff:g}*t^{p:g}")


def table_modulus(r, values, kind: Kind = "convexity") -> Modulus:
    r = np.asarray(r, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.shape != v.shape or r[0] != 0 or v[0] != 0 or np.any(v < 0):
        raise ModulusSpecError("table modulus needs r[0] = 0, values[0] = 0, values >= 0")
    return Modulus(lambda t: np.interp(np.abs(t), r, v), kind, "table")


def make_modulus(spec: Mapping, kind: Kind = "convexity") -> Modulus:
    try:
        k = spec["kind"]
        if k == "power":
            return power_modulus(spec["p"], spec.get("coeff", 1.0), kind)
        if k == "table":
            return table_modulus(spec["r"], spec["values"], kind)
        if k == "zero":
            return Modulus(lambda t: np.zeros_like(np.asarray(t, dtype=float)), kind, "zero")
    except KeyError as exc:
        raise ModulusSpecError(f"modulus description {dict(spec)!r} is missing {exc}") from exc
    raise ModulusSpecError(f"unknown modulus kind {spec.get('kind')!r}")


@dataclass
class ModulusReport:
    min_margin: float
    witness_pair: tuple[float, float]
    samples: int

    @property
    def valid(self) -> bool:
        return self.min_margin >= 0


def verify_modulus(V: Potential, m: Modulus, pair_samples: int = 20000,
                   seed: int = 0) -> ModulusReport:
    """Smallest slack of the modulus inequality over sampled node pairs.

    Convexity: ``V(x) - V(y) - V'(y)(x-y) - m(x-y)``.
    Monotonicity: ``(V'(x) - V'(y))(x-y) - m(x-y)``.
    Uses every pair when ``n^2 <= pair_samples``, else a seeded random subset.
    """
    if pair_samples < 1000:
        raise ValueError("pair_samples must be at least 1000")
    x = V.grid.nodes
    n = x.size
    if n * n <= pair_samples:
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        i, j = i.ravel(), j.ravel()
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, pair_samples)
        j = rng.integers(0, n, pair_samples)
    d = x[i] - x[j]
    if m.kind == "convexity":
        gap = V.values[i] - V.values[j] - V.gradient[j] * d
    else:
        gap = (V.gradient[i] - V.gradient[j]) * d
    margin = gap - m(d)
    k = int(np.argmin(margin))
    return ModulusReport(float(margin[k]), (float(x[i[k]]), float(x[j[k]])), int(i.size))


def _check_p(p: float) -> float:
    p = float(p)
    if not p >= 2:
        raise ValueError(f"p-power constants need p >= 2, got {p}")
    return p


def ppower_objective(t, p: float):
    """``|t+1|^p/p - |t|^p/p - |t|^(p-2) t`` (Bregman gap of |x|^p/p at unit step)."""
    t = np.asarray(t, dtype=float)
    at = np.abs(t)
    return np.abs(t + 1) ** p / p - at**p / p - at ** (p - 2) * t


def ppower_C(p: float, tol: float = 1e-12) -> float:
    """Sharp constant C(p) of the convexity modulus ``C(p)|v|^p`` of ``|x|^p/p``.

    Golden-section minimisation of :func:`ppower_objective` over [-1, 0].
    """
    p = _check_p(p)
    lo, hi = -1.0, 0.0
    f = lambda t: float(ppower_objective(t, p))  # noqa: E731
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
    return min(fc, fd, f(0.5 * (lo + hi)))


def _tp_equation(t: float, p: float) -> float:
    at = abs(t)
    return abs(t + 1) ** (p - 2) * (t + 1) - at ** (p - 2) * t - (p - 1) * at ** (p - 2)


def ppower_tp(p: float, tol: float = 1e-12) -> float:
    """Minimiser t_p in [-1, 0] of the C(p) objective, by bisection on its critical-point equation.

    For p = 2 the objective is constant and -1/2 is returned by convention.
    """
    p = _check_p(p)
    if p == 2:
        return -0.5
    lo, hi = -1.0, 0.0
    # equation equals 2 - p < 0 at t = -1 and 1 > 0 at t = 0
    flo = _tp_equation(lo, p)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = _tp_equation(mid, p)
        if fm == 0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ppower_lower_bound(p: float) -> float:
    """``2^(2-p) / p``, the lower bound on C(p)."""
    p = _check_p(p)
    return 2.0 ** (2.0 - p) / p


def integrated_convexity_modulus(omega: Modulus, t: np.ndarray, n_quad: int = 2001) -> np.ndarray:
    """``int_0^1 s^-1 omega(s t) ds``: the convexity modulus implied by a monotonicity modulus."""
    s = np.linspace(0.0, 1.0, n_quad)[1:]
    t = np.atleast_1d(np.asarray(t, dtype=float))
    vals = omega(np.outer(t, s)) / s
    # integrand vanishes as s -> 0 for moduli o(t); prepend that limit
    vals = np.concatenate([np.zeros((t.size, 1)), vals], axis=1)
    return np.trapezoid(vals, dx=1.0 / (n_quad - 1), axis=1)
