"""Probability densities on a uniform 1D grid, Gibbs potentials and free energy.

Everything here is sampled nodewise on ``Grid.nodes`` and integrated with the
trapezoid rule.  Densities are renormalised on construction so that
``integrate(density) == 1`` up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

# Guard against log(0); never expected to trigger on valid measures.
DENSITY_FLOOR = 1e-300


class GridError(ValueError):
    pass


class InvalidPotentialError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    a: float
    b: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.a >= self.b:
            raise GridError(f"need a < b, got a={self.a}, b={self.b}")
        if int(self.n) != self.n or self.n < 16:
            raise GridError(f"need an integer n >= 16, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        nodes = np.linspace(self.a, self.b, self.n)
        nodes.setflags(write=False)
        w = np.full(self.n, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        w.setflags(write=False)
        object.__setattr__(self, "_nodes", nodes)
        object.__setattr__(self, "_weights", w)

    @property
    def dx(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        return self._weights

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self._weights, values))

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """Cumulative trapezoid integral from the left endpoint (starts at 0)."""
        out = np.empty(self.n)
        out[0] = 0.0
        np.cumsum(0.5 * self.dx * (values[1:] + values[:-1]), out=out[1:])
        return out

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Central differences inside, second-order one-sided at the ends."""
        return np.gradient(values, self.dx, edge_order=2)

    def refine(self) -> "Grid":
        """Grid with 2n-1 nodes sharing every node of this one."""
        return Grid(self.a, self.b, 2 * self.n - 1)

    def same_as(self, other: "Grid") -> bool:
        return self.a == other.a and self.b == other.b and self.n == other.n


def _check_same_grid(*objs) -> Grid:
    grid = objs[0].grid
    for o in objs[1:]:
        if not grid.same_as(o.grid):
            raise GridError("objects live on different grids")
    return grid


@dataclass(frozen=True)
class GridMeasure:
    """Probability density sampled on ``grid``.

    With ``strict=True`` (the default) every nodal value must be positive,
    which is what entropy and pressure computations require.  Transport
    routines also accept ``strict=False`` measures with zero regions.
    """

    grid: Grid
    density: np.ndarray
    strict: bool = True

    def __post_init__(self):
        rho = np.array(self.density, dtype=float)
        if rho.shape != (self.grid.n,):
            raise GridError(f"density has shape {rho.shape}, expected ({self.grid.n},)")
        if not np.all(np.isfinite(rho)):
            raise GridError("density has non-finite values")
        if self.strict and np.any(rho <= 0):
            raise GridError("density must be strictly positive")
        if np.any(rho < 0):
            raise GridError("density must be nonnegative")
        mass = self.grid.integrate(rho)
        if mass <= 0:
            raise GridError("density has zero mass")
        rho /= mass
        rho.setflags(write=False)
        object.__setattr__(self, "density", rho)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray], strict: bool = True):
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float), strict=strict)

    @classmethod
    def from_log_density(cls, grid: Grid, log_rho: np.ndarray) -> "GridMeasure":
        log_rho = np.asarray(log_rho, dtype=float)
        return cls(grid, np.exp(log_rho - log_rho.max()))

    @classmethod
    def uniform(cls, grid: Grid) -> "GridMeasure":
        return cls(grid, np.ones(grid.n))

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def log_density(self) -> np.ndarray:
        return np.log(np.maximum(self.density, DENSITY_FLOOR))

    def mass(self) -> float:
        return self.grid.integrate(self.density)

    def expect(self, values: np.ndarray) -> float:
        """Integral of ``values`` against this measure."""
        return self.grid.integrate(values * self.density)

    def cdf(self) -> np.ndarray:
        c = self.grid.cumulative(self.density)
        # total mass is 1 up to rounding; pin it so quantiles are well defined
        c /= c[-1]
        return c

    def sup_distance(self, other: "GridMeasure") -> float:
        _check_same_grid(self, other)
        return float(np.max(np.abs(self.density - other.density)))


@dataclass(frozen=True)
class Potential:
    """Confining potential ``V`` with its gradient on the grid nodes.

    After :func:`make_gibbs`, ``exp(-values)`` integrates to one and
    ``normalization_shift`` holds the added constant ``log Z``.
    """

    grid: Grid
    values: np.ndarray
    gradient: np.ndarray
    normalization_shift: float = 0.0
    lipschitz: float = field(default=float("nan"))

    def __post_init__(self):
        for name in ("values", "gradient"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (self.grid.n,):
                raise InvalidPotentialError(f"{name} has wrong shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidPotentialError(f"potential {name} has non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.isnan(self.lipschitz):
            object.__setattr__(self, "lipschitz", float(np.max(np.abs(self.gradient))))


PotentialSpec = Union[Mapping, Callable[[np.ndarray], np.ndarray]]


def _evaluate_potential(spec: PotentialSpec, x: np.ndarray):
    """Return (values, analytic gradient or None)."""
    if callable(spec):
        return np.asarray(spec(x), dtype=float), None
    kind = spec.get("kind")
    if kind == "quadratic":
        lam = float(spec.get("lambda", 1.0))
        center = float(spec.get("center", 0.0))
        return 0.5 * lam * (x - center) ** 2, lam * (x - center)
    if kind == "power":
        p = float(spec["p"])
        c = float(spec.get("coeff", 1.0))
        if p < 1:
            raise InvalidPotentialError(f"power potential needs p >= 1, got {p}")
        ax = np.abs(x)
        return c * ax**p / p, c * ax ** (p - 1) * np.sign(x)
    if kind == "linear":
        s = float(spec["slope"])
        return s * x, np.full_like(x, s)
    if kind == "table":
        vals = np.asarray(spec["values"], dtype=float)
        if vals.shape != x.shape:
            raise InvalidPotentialError(
                f"table potential has {vals.size} values for {x.size} nodes"
            )
        return vals, None
    raise InvalidPotentialError(f"unknown potential kind {kind!r}")


def make_potential(spec: PotentialSpec, grid: Grid) -> Potential:
    """Evaluate a potential description on the grid without normalising it."""
    try:
        values, grad = _evaluate_potential(spec, grid.nodes)
    except (KeyError, TypeError) as exc:
        raise InvalidPotentialError(f"bad potential description {spec!r}: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise InvalidPotentialError("potential has non-finite values on the grid")
    if grad is None:
        grad = grid.gradient(values)
    return Potential(grid, values, grad)


def make_gibbs(spec: PotentialSpec, grid: Grid) -> tuple[Potential, GridMeasure]:
    """Normalised potential ``V + log Z`` and the Gibbs density ``exp(-V - log Z)``."""
    raw = make_potential(spec, grid)
    vmin = float(raw.values.min())
    z = grid.integrate(np.exp(-(raw.values - vmin)))
    shift = float(np.log(z)) - vmin
    V = Potential(grid, raw.values + shift, raw.gradient, shift)
    eta = GridMeasure(grid, np.exp(-V.values))
    return V, eta


def entropy(rho: GridMeasure) -> float:
    return rho.expect(rho.log_density())


def potential_energy(rho: GridMeasure, V: Potential) -> float:
    _check_same_grid(rho, V)
    return rho.expect(V.values)


def _bregman_entropy(u: np.ndarray) -> np.ndarray:
    """``u e^u - e^u + 1 >= 0``, with a series near 0 to avoid cancellation."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-3
    out = np.empty_like(u)
    us = u[small]
    out[small] = us * us * (0.5 + us * (1.0 / 3.0 + us * (0.125 + us / 30.0)))
    ub = u[~small]
    out[~small] = ub * np.exp(ub) - np.expm1(ub)
    return out


def free_energy(rho: GridMeasure, V: Potential) -> float:
    """Entropy plus potential energy ``int rho (log rho + V)``.

    Evaluated as ``int e^-V phi(log rho + V) + 1 - int e^-V`` with
    ``phi(u) = u e^u - e^u + 1``: every term is nonnegative, so the value
    near equilibrium is not swamped by rounding.  With V normalised the
    constant vanishes and this is the relative entropy to ``exp(-V)``.
    """
    _check_same_grid(rho, V)
    g = rho.grid
    u = rho.log_density() + V.values
    gibbs = np.exp(-V.values)
    return g.integrate(gibbs * _bregman_entropy(u)) + (1.0 - g.integrate(gibbs))


def pressure(rho: GridMeasure, V: Potential) -> tuple[np.ndarray, np.ndarray]:
    """``u = log rho + V`` and its finite-difference gradient."""
    _check_same_grid(rho, V)
    u = rho.log_density() + V.values
    return u, rho.grid.gradient(u)


def random_smooth_density(grid: Grid, rng: np.random.Generator, n_modes: int = 6,
                          amplitude: float = 1.0) -> GridMeasure:
    """``exp`` of a random trigonometric polynomial with ``1/k`` decaying coefficients."""
    s = (grid.nodes - grid.a) / (grid.b - grid.a)
    k = np.arange(1, n_modes + 1)
    a = rng.normal(0.0, amplitude, n_modes) / k
    b = rng.normal(0.0, amplitude, n_modes) / k
    phase = np.pi * np.outer(s, k)
    return GridMeasure.from_log_density(grid, np.cos(phase) @ a + np.sin(phase) @ b)
