"""Radial convex profiles: costs ``h``, Fisher weights ``H``, Young functions ``L``.

A radial function on the line is ``f(z) = kappa(|z|)``; a profile bundles
``kappa``, its derivative, its Legendre conjugate ``kappa*`` and the
conjugate's derivative.  Built-in families carry closed forms; anything
else gets a sampled conjugate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

Fn = Callable[[np.ndarray], np.ndarray]

DEFAULT_R_MAX = 1e3
DEFAULT_CONJ_SAMPLES = 4096


class ConvexityError(ValueError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class DegenerateCostError(ValueError):
    pass


class CostSpecError(ValueError):
    pass


@dataclass(frozen=True)
class RadialProfile:
    kappa: Fn
    kappa_prime: Fn
    kappa_conj: Fn
    kappa_conj_prime: Fn
    analytic: bool = True
    kappa_second: Optional[Fn] = None
    r_max: float = DEFAULT_R_MAX
    name: str = "profile"

    # radial extensions to signed arguments

    def __call__(self, z):
        return self.kappa(np.abs(np.asarray(z, dtype=float)))

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        return self.kappa_prime(np.abs(z)) * np.sign(z)

    def conj(self, z):
        return self.kappa_conj(np.abs(np.asarray(z, dtype=float)))

    def conj_grad(self, z):
        z = np.asarray(z, dtype=float)
        return self.kappa_conj_prime(np.abs(z)) * np.sign(z)

    def hess(self, z):
        """Second derivative of ``kappa(|z|)``; finite differences of kappa' if no closed form."""
        r = np.abs(np.asarray(z, dtype=float))
        if self.kappa_second is not None:
            return self.kappa_second(r)
        step = 1e-6 * np.maximum(1.0, r)
        lo = np.maximum(r - step, 0.0)
        return (self.kappa_prime(r + step) - self.kappa_prime(lo)) / (r + step - lo)


def _pos(r):
    return np.maximum(np.asarray(r, dtype=float), 0.0)


def quadratic(c: float = 1.0) -> RadialProfile:
    """``c r^2 / 2``."""
    c = float(c)
    if c <= 0:
        raise CostSpecError("quadratic coefficient must be positive")
    return RadialProfile(
        kappa=lambda r: 0.5 * c * _pos(r) ** 2,
        kappa_prime=lambda r: c * _pos(r),
        kappa_conj=lambda s: 0.5 * _pos(s) ** 2 / c,
        kappa_conj_prime=lambda s: _pos(s) / c,
        kappa_second=lambda r: np.full_like(np.asarray(r, dtype=float), c),
        name=f"quadratic(c={c:g})",
    )


def power(p: float, c: float = 1.0) -> RadialProfile:
    """``c r^p / p`` with conjugate ``c^(1-q) s^q / q``."""
    p, c = float(p), float(c)
    if p <= 1 or c <= 0:
        raise CostSpecError(f"power profile needs p > 1 and c > 0, got p={p}, c={c}")
    q = p / (p - 1.0)
    cq = c ** (1.0 - q)
    second = None
    if p >= 2:
        second = lambda r: c * (p - 1) * _pos(r) ** (p - 2)  # noqa: E731
    return RadialProfile(
        kappa=lambda r: c * _pos(r) ** p / p,
        kappa_prime=lambda r: c * _pos(r) ** (p - 1),
        kappa_conj=lambda s: cq * _pos(s) ** q / q,
        kappa_conj_prime=lambda s: cq * _pos(s) ** (q - 1),
        kappa_second=second,
        name=f"power(p={p:g}, c={c:g})",
    )


def scaled(tau: float, inner: RadialProfile) -> RadialProfile:
    """``tau * kappa(r / tau)``; its conjugate is ``tau * kappa*(s)``."""
    tau = float(tau)
    if tau <= 0:
        raise CostSpecError("scale tau must be positive")
    second = None
    if inner.kappa_second is not None:
        second = lambda r: inner.kappa_second(_pos(r) / tau) / tau  # noqa: E731
    return RadialProfile(
        kappa=lambda r: tau * inner.kappa(_pos(r) / tau),
        kappa_prime=lambda r: inner.kappa_prime(_pos(r) / tau),
        kappa_conj=lambda s: tau * inner.kappa_conj(s),
        kappa_conj_prime=lambda s: tau * inner.kappa_conj_prime(s),
        analytic=inner.analytic,
        kappa_second=second,
        r_max=tau * inner.r_max,
        name=f"scaled(tau={tau:g}, {inner.name})",
    )


def exponential() -> RadialProfile:
    """``e^r - 1 - r``, conjugate ``(1+s) log(1+s) - s``."""
    return RadialProfile(
        kappa=lambda r: np.expm1(_pos(r)) - _pos(r),
        kappa_prime=lambda r: np.expm1(_pos(r)),
        kappa_conj=lambda s: (1 + _pos(s)) * np.log1p(_pos(s)) - _pos(s),
        kappa_conj_prime=lambda s: np.log1p(_pos(s)),
        kappa_second=lambda r: np.exp(_pos(r)),
        r_max=30.0,
        name="exponential",
    )


def from_kappa(kappa: Fn, kappa_prime: Optional[Fn] = None, r_max: float = DEFAULT_R_MAX,
               n_samples: int = DEFAULT_CONJ_SAMPLES, name: str = "numeric") -> RadialProfile:
    """Profile from a convex ``kappa`` with a sampled conjugate."""
    if kappa_prime is None:
        def kappa_prime(r):
            r = _pos(r)
            step = 1e-6 * np.maximum(1.0, r)
            lo = np.maximum(r - step, 0.0)
            return (kappa(r + step) - kappa(lo)) / (r + step - lo)
    base = RadialProfile(kappa, kappa_prime, _undefined, _undefined, analytic=False,
                         r_max=r_max, name=name)
    return _with_numeric_conjugate(base, n_samples)


def table(r, values, name: str = "table") -> RadialProfile:
    """Piecewise-linear profile through ``(r_i, kappa_i)``; ``r`` must start at 0."""
    r = np.asarray(r, dtype=float)
    k = np.asarray(values, dtype=float)
    if r.ndim != 1 or r.shape != k.shape or r.size < 3:
        raise CostSpecError("table profile needs matching 1D arrays with >= 3 points")
    if r[0] != 0 or np.any(np.diff(r) <= 0):
        raise CostSpecError("table r must start at 0 and increase strictly")
    slopes = np.diff(k) / np.diff(r)
    j = np.flatnonzero(np.diff(slopes) < 0)
    if j.size:
        i = int(j[0])
        raise ConvexityError("table profile is not convex", witness=(r[i], r[i + 1], r[i + 2]))

    def kappa(x):
        x = _pos(x)
        out = np.interp(x, r, k)
        tail = x > r[-1]
        if np.any(tail):
            out = np.where(tail, k[-1] + slopes[-1] * (x - r[-1]), out)
        return out

    def kappa_prime(x):
        idx = np.clip(np.searchsorted(r, _pos(x), side="right") - 1, 0, slopes.size - 1)
        return slopes[idx]

    # Legendre transform of the piecewise-linear interpolant: breakpoints of
    # kappa* sit at the slopes, with values r_i s - kappa_i on each piece.
    def kappa_conj_prime(s):
        s = _pos(s)
        return r[np.searchsorted(slopes, s, side="left")]

    def kappa_conj(s):
        s = _pos(s)
        i = np.searchsorted(slopes, s, side="left")
        return s * r[i] - k[i]

    return RadialProfile(kappa, kappa_prime, kappa_conj, kappa_conj_prime, analytic=False,
                         r_max=float(r[-1]), name=name)


def add(*profiles: RadialProfile, n_samples: int = DEFAULT_CONJ_SAMPLES) -> RadialProfile:
    """Sum of profiles (used for ``G = H + L``); conjugate is sampled."""
    def kappa(r):
        return sum(p.kappa(r) for p in profiles)

    def kappa_prime(r):
        return sum(p.kappa_prime(r) for p in profiles)

    second = None
    if all(p.kappa_second is not None for p in profiles):
        second = lambda r: sum(p.kappa_second(r) for p in profiles)  # noqa: E731
    base = RadialProfile(kappa, kappa_prime, _undefined, _undefined, analytic=False,
                         kappa_second=second, r_max=min(p.r_max for p in profiles),
                         name=" + ".join(p.name for p in profiles))
    return _with_numeric_conjugate(base, n_samples)


def _undefined(_):
    raise NotImplementedError("conjugate not available")


def conjugate(profile: RadialProfile, numeric: Optional[bool] = None,
              n_samples: int = DEFAULT_CONJ_SAMPLES) -> RadialProfile:
    """Legendre conjugate ``kappa*(s) = sup_{r>=0} (r s - kappa(r))`` as a profile.

    Closed forms are swapped in when the profile is analytic (unless
    ``numeric=True``); otherwise the supremum is located by scanning the
    monotone slope ``kappa'`` on a log-spaced r-grid and refined by bisection.
    Raises :class:`ConvexityError` if the sampled kappa is not convex.
    """
    if numeric is None:
        numeric = not profile.analytic
    if not numeric:
        return RadialProfile(
            kappa=profile.kappa_conj,
            kappa_prime=profile.kappa_conj_prime,
            kappa_conj=profile.kappa,
            kappa_conj_prime=profile.kappa_prime,
            analytic=True,
            r_max=float(np.max(profile.kappa_prime(np.array([profile.r_max])))),
            name=f"conj({profile.name})",
        )
    rs = _conj_grid(profile.r_max, n_samples)
    _assert_convex(profile, rs)
    inv = _inverse_slope(profile, rs)

    def kappa_prime(s):
        return inv(s)

    def kappa(s):
        s = _pos(s)
        r = inv(s)
        return s * r - profile.kappa(r)

    s_max = float(profile.kappa_prime(np.array([profile.r_max]))[0])
    conj_profile = RadialProfile(kappa, kappa_prime, profile.kappa, profile.kappa_prime,
                                 analytic=False, r_max=s_max, name=f"conj({profile.name})")
    return conj_profile


def _with_numeric_conjugate(base: RadialProfile, n_samples: int) -> RadialProfile:
    rs = _conj_grid(base.r_max, n_samples)
    inv = _inverse_slope(base, rs)

    def kappa_conj(s):
        s = _pos(s)
        r = inv(s)
        return s * r - base.kappa(r)

    return RadialProfile(base.kappa, base.kappa_prime, kappa_conj, inv, analytic=False,
                         kappa_second=base.kappa_second, r_max=base.r_max, name=base.name)


def _conj_grid(r_max: float, n: int) -> np.ndarray:
    lo = min(1e-8, 1e-8 * r_max)
    return np.concatenate([[0.0], np.geomspace(lo, r_max, n - 1)])


def _assert_convex(profile: RadialProfile, rs: np.ndarray) -> None:
    k = profile.kappa(rs)
    slopes = np.diff(k) / np.diff(rs)
    drop = np.diff(slopes)
    scale = 1e-9 * (1.0 + np.abs(slopes[1:]))
    bad = np.flatnonzero(drop < -scale)
    if bad.size:
        i = int(bad[0])
        raise ConvexityError(f"{profile.name} is not convex near r={rs[i + 1]:.6g}",
                             witness=(float(rs[i]), float(rs[i + 1]), float(rs[i + 2])))


def _inverse_slope(profile: RadialProfile, rs: np.ndarray, iters: int = 80) -> Fn:
    """Vectorised inverse of the nondecreasing map ``r -> kappa'(r)`` on ``[0, r_max]``."""
    slopes = np.maximum.accumulate(profile.kappa_prime(rs))
    r_max = rs[-1]

    def inv(s):
        s = _pos(s)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        j = np.searchsorted(slopes, s, side="left")
        hi = rs[np.clip(j, 0, rs.size - 1)]
        lo = rs[np.clip(j - 1, 0, rs.size - 1)]
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            up = profile.kappa_prime(mid) < s
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        out = 0.5 * (lo + hi)
        out = np.where(s >= slopes[-1], r_max, out)
        out = np.where(s <= slopes[0], 0.0, out)
        return out[0] if scalar else out

    return inv


@dataclass
class AxiomReport:
    zero_at_zero: bool
    strictly_convex: bool
    superlinear: bool
    zero_value: float
    convexity_margin: float
    convexity_witness: float
    superlinearity_margin: float
    superlinearity_witness: float

    @property
    def passed(self) -> bool:
        return self.zero_at_zero and self.strictly_convex and self.superlinear


def verify_cost_axioms(profile: RadialProfile, r_max: float, n_samples: int = 256,
                       strict_floor: float = 1e-9) -> AxiomReport:
    """Sampled checks of ``kappa(0) = 0``, strict convexity and superlinearity.

    Margins are measured above ``strict_floor``: a second divided difference
    (resp. an increment of ``kappa(r)/r`` over the upper half of the grid)
    must exceed it, so flat directions give a negative margin.
    """
    if r_max <= 0 or n_samples < 64:
        raise ValueError("need r_max > 0 and n_samples >= 64")
    r = np.linspace(0.0, r_max, n_samples)
    k = profile.kappa(r)
    k0 = float(profile.kappa(np.array([0.0]))[0])
    dr = r[1] - r[0]
    second = (k[2:] - 2 * k[1:-1] + k[:-2]) / dr**2
    i = int(np.argmin(second))
    conv_margin = float(second[i] - strict_floor)
    tail = r[n_samples // 2:]
    ratio = profile.kappa(tail) / tail
    inc = np.diff(ratio) / dr
    j = int(np.argmin(inc))
    sup_margin = float(inc[j] - strict_floor)
    return AxiomReport(
        zero_at_zero=abs(k0) <= 1e-12,
        strictly_convex=conv_margin > 0,
        superlinear=sup_margin > 0,
        zero_value=k0,
        convexity_margin=conv_margin,
        convexity_witness=float(r[i + 1]),
        superlinearity_margin=sup_margin,
        superlinearity_witness=float(tail[j]),
    )


@dataclass(frozen=True)
class CostSystem:
    """Transport cost ``h``, Fisher weight ``H`` and Young function ``L``."""

    h: RadialProfile
    H: RadialProfile
    L: RadialProfile
    G: RadialProfile = field(init=False)

    def __post_init__(self):
        zero = np.array([0.0])
        for label, prof in (("h", self.h), ("H", self.H), ("L", self.L)):
            v = float(prof.kappa(zero)[0])
            if abs(v) > 1e-12:
                raise CostSpecError(f"{label} must vanish at 0, got {v}")
        object.__setattr__(self, "G", add(self.H, self.L))


def alpha(z, system: CostSystem):
    """``|H'(z)| / |(h*)'(z)|`` with the value 0 at ``z = 0``."""
    z = np.asarray(z, dtype=float)
    r = np.abs(z)
    num = np.abs(system.H.kappa_prime(r))
    den = np.abs(system.h.kappa_conj_prime(r))
    nz = r > 0
    if np.any(nz & (den == 0)):
        raise DegenerateCostError("(h*)' vanishes away from 0; h is not strictly convex")
    out = np.zeros_like(r)
    np.divide(num, den, out=out, where=nz)
    return out if out.ndim else float(out)


def make_profile(spec: Mapping) -> RadialProfile:
    """Build a profile from a tagged description (see ``otlab.config``)."""
    try:
        kind = spec["kind"]
        if kind == "quadratic":
            return quadratic(float(spec.get("c", 1.0)))
        if kind == "power":
            return power(float(spec["p"]), float(spec.get("c", spec.get("coeff", 1.0))))
        if kind == "scaled":
            return scaled(float(spec["tau"]), make_profile(spec["inner"]))
        if kind == "exponential":
            return exponential()
        if kind == "table":
            return table(spec["r"], spec["kappa"])
        if kind == "conjugate":
            return conjugate(make_profile(spec["inner"]))
        if kind == "sum":
            return add(*(make_profile(s) for s in spec["terms"]))
    except KeyError as exc:
        raise CostSpecError(f"cost description {dict(spec)!r} is missing {exc}") from exc
    raise CostSpecError(f"unknown cost kind {spec.get('kind')!r}")
