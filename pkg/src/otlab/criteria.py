"""Pointwise sufficient conditions for generalised log-Sobolev inequalities.

Everything here is a pure function of radial profiles and moduli evaluated on
a 1D grid of radii.  A failure is a report with a negative margin, never an
exception.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .costs import CostSystem, RadialProfile, conjugate, from_kappa, quadratic
from .grid import Grid, GridMeasure, Potential, make_gibbs
from .moduli import Modulus

PASS_TOL = 1e-10


class CriterionDomainError(ValueError):
    pass


@dataclass
class CriterionReport:
    z_grid: np.ndarray
    margins: np.ndarray
    worst_margin: float
    worst_z: float
    minimal_C: Optional[float] = None
    passed: bool = False
    lhs: Optional[np.ndarray] = None
    rhs: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_sides(cls, z, lhs, rhs, **kw) -> "CriterionReport":
        margins = rhs - lhs
        k = int(np.argmin(margins))
        worst = float(margins[k])
        passed = kw.pop("passed", worst >= -PASS_TOL)
        return cls(z, margins, worst, float(z[k]), passed=bool(passed), lhs=lhs, rhs=rhs, **kw)

    def to_dict(self) -> dict:
        out = {"worst_margin": self.worst_margin, "worst_z": self.worst_z,
               "minimal_C": self.minimal_C, "passed": self.passed,
               "n_z": int(self.z_grid.size),
               "small_z_margin": float(self.margins[0]), "large_z_margin": float(self.margins[-1])}
        out.update(self.extras)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z", "lhs", "rhs", "margin"])
            for row in zip(self.z_grid, self.lhs, self.rhs, self.margins):
                w.writerow([f"{v:.17g}" for v in row])


def z_grid(z_max: float, n_z: int = 2000) -> np.ndarray:
    """Log-spaced radii on ``[1e-6 z_max, z_max]`` (zero excluded)."""
    if not z_max > 0 or n_z < 2:
        raise CriterionDomainError("need z_max > 0 and n_z >= 2")
    return np.logspace(np.log10(1e-6 * z_max), np.log10(z_max), int(n_z))


def default_z_max(V: Potential, h: RadialProfile) -> float:
    """``Lip(V) + max kappa'`` over displacements that fit in the domain."""
    g = V.grid
    return float(V.lipschitz + h.kappa_prime(np.array([g.b - g.a]))[0])


def theorem_criterion(system: CostSystem, sigma: Modulus, omega: Modulus, z_max: float,
                      n_z: int = 2000) -> CriterionReport:
    """Margins of ``sigma(d) + alpha(z) omega(d) - L(z) - L*(d)`` with ``d = (h*)'(z)``."""
    z = z_grid(z_max, n_z)
    h, H, L = system.h, system.H, system.L
    d = h.kappa_conj_prime(z)
    alpha = np.abs(H.kappa_prime(z)) / d
    lhs = L(z) + L.conj(d)
    rhs = sigma(d) + alpha * omega(d)
    return CriterionReport.from_sides(z, lhs, rhs)


def simpler_condition(h: RadialProfile, sigma: Modulus, omega: Modulus, z_max: float,
                      n_z: int = 2000) -> CriterionReport:
    """Smallest ``C >= 0`` with ``kappa'(z) z <= sigma(z) + C omega(z)`` on the z-grid.

    Where ``omega`` vanishes the inequality must hold with ``sigma`` alone;
    otherwise no finite C exists and the report has ``minimal_C = None``.
    """
    z = z_grid(z_max, n_z)
    lhs = h.kappa_prime(z) * z
    s = sigma(z)
    w = omega(z)
    excess = lhs - s
    pos = w > 0
    infeasible = np.any(~pos & (excess > PASS_TOL * np.maximum(1.0, np.abs(lhs))))
    needed = np.full_like(z, -np.inf)
    needed[pos] = excess[pos] / w[pos]
    if infeasible:
        rhs = s
        return CriterionReport.from_sides(z, lhs, rhs, minimal_C=None, passed=False,
                                          extras={"needed": None, "lsi_constant": None})
    C = max(0.0, float(np.max(needed)))
    rhs = s + C * w
    rep = CriterionReport.from_sides(z, lhs, rhs, minimal_C=C, passed=True,
                                     extras={"lsi_constant": 1.0 + C})
    rep.extras["needed_at_worst"] = float(np.max(needed))
    return rep


def _invert_increasing(theta: Callable, s: np.ndarray, t_hi: float, iters: int = 100) -> np.ndarray:
    lo = np.zeros_like(s)
    hi = np.full_like(s, t_hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = theta(mid) < s
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def radial_theta_lsi(theta: Callable, sigma: Modulus, omega: Modulus, C: float,
                     t_max: float = 10.0, n_t: int = 2001):
    """Profile ``l(t) = int_0^t theta^-1`` and the check ``theta <= sigma_r + C omega_r``.

    Returns ``(l, report)``.  The report's extras hold the sup distance
    between ``l`` and the numerical conjugate of ``kappa = int_0^r theta``
    (``conjugate_error``) and the Young-equality defect (``young_error``).
    """
    if C < 0:
        raise CriterionDomainError("C must be nonnegative")
    t = np.linspace(0.0, t_max, n_t)
    th = np.asarray(theta(t), dtype=float)
    if th[0] < 0 or np.any(np.diff(th) <= 0):
        raise CriterionDomainError("theta must be strictly increasing with theta(0) >= 0")
    s_max = float(th[-1])
    # kappa = int_0^r theta, tabulated by cumulative trapezoid on a fine grid
    tf = np.linspace(0.0, t_max, 20 * (n_t - 1) + 1)
    thf = np.asarray(theta(tf), dtype=float)
    kap_tab = np.concatenate([[0.0], np.cumsum(0.5 * (thf[1:] + thf[:-1]) * np.diff(tf))])
    # quadrature nodes for l are the images theta(r_i): the inverse is smooth in r, not in s
    sf = thf
    inv_tab = _invert_increasing(theta, sf, t_max)
    l_tab = np.concatenate([[0.0], np.cumsum(0.5 * (inv_tab[1:] + inv_tab[:-1]) * np.diff(sf))])

    def l_kappa(s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, s_max)
        return np.interp(s, sf, l_tab)

    def l_prime(s):
        return _invert_increasing(theta, np.clip(np.asarray(s, dtype=float), th[0], s_max), t_max)

    def kappa(r):
        return np.interp(np.clip(np.asarray(r, dtype=float), 0.0, t_max), tf, kap_tab)

    def kappa_prime(r):
        return np.asarray(theta(np.clip(np.asarray(r, dtype=float), 0.0, t_max)), dtype=float)

    l = RadialProfile(l_kappa, l_prime, kappa, kappa_prime, analytic=False,
                      r_max=s_max, name="theta-lsi")

    lhs = th
    rhs = sigma(t) + C * omega(t)
    rep = CriterionReport.from_sides(t, lhs, rhs, minimal_C=C)

    # cross-check against the Legendre transform of kappa, away from the range ends
    k_prof = from_kappa(kappa, kappa_prime, r_max=t_max)
    check = np.linspace(th[0], s_max, 201)[1:-1]
    conj_err = float(np.max(np.abs(conjugate(k_prof, numeric=True)(check) - l(check))))
    r = l_prime(check)
    young = float(np.max(np.abs(l(check) + kappa(r) - check * r)))
    rep.extras.update(conjugate_error=conj_err, young_error=young)
    return l, rep


GSpec = Union[Mapping, Callable[[np.ndarray], np.ndarray]]


def eval_g(spec: GSpec, x: np.ndarray) -> np.ndarray:
    """Unnormalised test function ``g > 0`` from a description.

    Kinds: ``tilt{t}`` (``e^{tx}``), ``bump{center, width, height}``
    (``1 + height * gaussian``) and ``two_bump{centers, widths, heights}``.
    """
    if callable(spec):
        return np.asarray(spec(x), dtype=float)
    kind = spec.get("kind")
    if kind == "constant":
        return np.ones_like(x)
    if kind == "tilt":
        return np.exp(float(spec["t"]) * x)
    if kind == "bump":
        c, w, a = float(spec.get("center", 0.0)), float(spec.get("width", 1.0)), float(spec.get("height", 1.0))
        return 1.0 + a * np.exp(-0.5 * ((x - c) / w) ** 2)
    if kind == "two_bump":
        out = np.ones_like(x)
        for c, w, a in zip(spec["centers"], spec["widths"], spec["heights"]):
            out = out + float(a) * np.exp(-0.5 * ((x - float(c)) / float(w)) ** 2)
        return out
    raise CriterionDomainError(f"unknown test function kind {kind!r}")


DEFAULT_TEST_FAMILY = (
    {"kind": "tilt", "t": 0.5},
    {"kind": "tilt", "t": -1.0},
    {"kind": "bump", "center": 0.5, "width": 0.4, "height": 2.0},
    {"kind": "bump", "center": -1.0, "width": 0.8, "height": 5.0},
    {"kind": "two_bump", "centers": [-1.0, 1.0], "widths": [0.5, 0.5], "heights": [3.0, 3.0]},
)


def lsi_gap(g_spec: GSpec, eta: GridMeasure, V: Potential, G: RadialProfile) -> float:
    """``int G(|(log g)'|) g d eta - int g log g d eta`` with g renormalised against eta."""
    grid = eta.grid
    g = eval_g(g_spec, grid.nodes)
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise CriterionDomainError("test function must be positive and finite")
    g = g / eta.expect(g)
    logg = np.log(g)
    dlog = grid.gradient(logg)
    return eta.expect(G(dlog) * g) - eta.expect(g * logg)


def classical_lsi_limit(Lambda: float, tau_sequence: Sequence[float],
                        test_g: Sequence[GSpec] = DEFAULT_TEST_FAMILY,
                        grid: Optional[Grid] = None, h: Optional[RadialProfile] = None) -> dict:
    """Excess of the tau-dependent bound for ``V = Lambda x^2/2`` as ``tau -> 0``.

    For each test function and tau, ``excess = (1/(2 Lambda)) int |(log g)'|^2 g d eta
    + tau int h*((log g)') g d eta - Ent(g)``, compared with the limit
    ``lsi_gap(g, G = r^2/(2 Lambda))``.  ``h`` defaults to ``r^2/2``.
    """
    if not Lambda > 0:
        raise CriterionDomainError("Lambda must be positive")
    taus = np.asarray(tau_sequence, dtype=float)
    if np.any(taus <= 0) or np.any(np.diff(taus) >= 0):
        raise CriterionDomainError("tau_sequence must be positive and strictly decreasing")
    if grid is None:
        half = 10.0 / np.sqrt(Lambda)
        grid = Grid(-half, half, 2001)
    h = quadratic() if h is None else h
    V, eta = make_gibbs({"kind": "quadratic", "lambda": Lambda}, grid)
    A = 1.0 / (2.0 * Lambda)
    G0 = quadratic(2.0 * A)  # A r^2
    rows = []
    for spec in test_g:
        g = eval_g(spec, grid.nodes)
        g = g / eta.expect(g)
        logg = np.log(g)
        dlog = grid.gradient(logg)
        ent = eta.expect(g * logg)
        quad = eta.expect(G0(dlog) * g)
        extra = eta.expect(h.conj(dlog) * g)
        excess = quad + taus * extra - ent
        limit = lsi_gap(spec, eta, V, G0)
        rows.append({
            "g": spec if isinstance(spec, Mapping) else getattr(spec, "__name__", "callable"),
            "excess": excess.tolist(),
            "limit": limit,
            "monotone": bool(np.all(np.diff(excess) <= 1e-15 * (1 + np.abs(excess[:-1])))),
            "final_error": float(abs(excess[-1] - limit)),
        })
    return {"Lambda": Lambda, "A": A, "tau": taus.tolist(), "rows": rows,
            "max_final_error": max(r["final_error"] for r in rows),
            "min_limit": min(r["limit"] for r in rows),
            "all_monotone": all(r["monotone"] for r in rows)}
