"""One-step JKO minimisation ``min F(rho) + T_h(rho, mu)`` and the discrete flow.

The step solves the Euler-Lagrange equation ``log rho + V + psi = C`` where
``psi`` is the Kantorovich potential from ``rho`` to ``mu``.  Two iterations
share the same residual:

* ``picard``: ``log rho <- (1-r) log rho + r (-V - psi)``, renormalised;
* ``newton``: the same update with the increment preconditioned by the exact
  Jacobian of ``log rho -> psi`` (available in closed form in 1D).

A projected-gradient solver on the simplex is kept as an independent check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Literal, Optional

import numpy as np

from .costs import CostSystem, RadialProfile
from .grid import Grid, GridMeasure, Potential, _check_same_grid, free_energy
from .moduli import Modulus
from .transport import TransportSolution, quantile, solve_transport

log = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-9


class JkoConfigError(ValueError):
    pass


class JkoSolverError(RuntimeError):
    def __init__(self, message, residual: float, step: Optional[int] = None):
        super().__init__(message)
        self.residual = residual
        self.step = step


@dataclass(frozen=True)
class JkoConfig:
    relaxation: float = 0.5
    max_inner_iters: int = 500
    opt_tol: float = 1e-8
    gap_tol: Optional[float] = None
    oracle_check: bool = False
    method: Literal["newton", "picard"] = "newton"
    max_restarts: int = 3

    def __post_init__(self):
        if not (0 < self.relaxation <= 1):
            raise JkoConfigError(f"relaxation must lie in (0, 1], got {self.relaxation}")
        if not self.opt_tol > 0:
            raise JkoConfigError("opt_tol must be positive")
        if self.max_inner_iters < 1:
            raise JkoConfigError("max_inner_iters must be at least 1")
        if self.method not in ("newton", "picard"):
            raise JkoConfigError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class JkoStepResult:
    rho_next: GridMeasure
    psi: np.ndarray
    psi_grad: np.ndarray
    residual: float
    objective: float
    inner_iters: int
    transport: TransportSolution
    relaxation: float
    oracle_distance: Optional[float] = None

    @property
    def delta(self) -> float:
        """Two-sided bound ``delta <= rho <= 1/delta`` realised by the iterate."""
        rho = self.rho_next.density
        return float(min(rho.min(), 1.0 / rho.max()))


@lru_cache(maxsize=8)
def _cumulative_matrix(n: int, dx: float) -> np.ndarray:
    A = np.tril(np.full((n, n), dx), -1)
    A[1:, 0] = 0.5 * dx
    A[np.arange(1, n), np.arange(1, n)] = 0.5 * dx
    A.setflags(write=False)
    return A


class _StepProblem:
    """Residual of the optimality condition and its Jacobian for fixed ``(mu, V, h)``."""

    def __init__(self, mu: GridMeasure, V: Potential, h: RadialProfile):
        self.grid = mu.grid
        self.x = mu.grid.nodes
        self.w = mu.grid.weights
        self.V = V.values
        self.h = h
        self.mu_cdf = mu.cdf()

    def normalise(self, g: np.ndarray) -> np.ndarray:
        m = g.max()
        return g - (m + np.log(np.dot(self.w, np.exp(g - m))))

    def evaluate(self, g: np.ndarray):
        """For normalised log-density ``g``: (rho, T, psi, psi', centred residual)."""
        rho = np.exp(g)
        cdf = self.grid.cumulative(rho)
        cdf /= cdf[-1]
        T = quantile(self.mu_cdf, self.x, cdf)
        dpsi = self.h.grad(self.x - T)
        psi = self.grid.cumulative(dpsi)
        r = g + self.V + psi
        r = r - np.dot(self.w * rho, r)
        return rho, cdf, T, psi, dpsi, r

    def jacobian_psi(self, rho: np.ndarray, cdf: np.ndarray, T: np.ndarray) -> np.ndarray:
        """d psi / d log rho for the discrete chain cdf -> quantile -> h' -> cumulative."""
        n, dx = self.grid.n, self.grid.dx
        A = _cumulative_matrix(n, dx)
        j = np.clip(np.searchsorted(self.mu_cdf, cdf, side="left"), 1, n - 1)
        slope = (self.mu_cdf[j] - self.mu_cdf[j - 1]) / dx
        dT_dC = np.divide(1.0, slope, out=np.zeros_like(slope), where=slope > 0)
        inner = -self.h.hess(self.x - T) * dT_dC
        return A @ ((inner[:, None] * A) * rho[None, :])


def _objective(rho: GridMeasure, mu: GridMeasure, V: Potential, h: RadialProfile,
               sol: TransportSolution) -> float:
    return free_energy(rho, V) + sol.cost


def jko_step(mu: GridMeasure, V: Potential, h: RadialProfile,
             config: JkoConfig = JkoConfig(), start: Optional[np.ndarray] = None) -> JkoStepResult:
    """Minimiser of ``F + T_h(., mu)`` on the grid.

    Iterates until the sup-norm of ``log rho + V + psi - mean`` is below
    ``config.opt_tol``.  On failure the relaxation is halved and the solve
    restarted, up to ``config.max_restarts`` times, before raising
    :class:`JkoSolverError`.
    """
    _check_same_grid(mu, V)
    prob = _StepProblem(mu, V, h)
    g0 = prob.normalise(mu.log_density() if start is None else np.asarray(start, float))
    relaxation = config.relaxation
    last = np.inf
    total_iters = 0
    for attempt in range(config.max_restarts + 1):
        solver = _newton if config.method == "newton" else _picard
        g, res, iters = solver(prob, g0, relaxation, config)
        total_iters += iters
        last = res
        if res <= config.opt_tol:
            break
        log.debug("jko_step: attempt %d stalled at residual %.3e (relaxation %.4g)",
                  attempt, res, relaxation)
        relaxation *= 0.5
    else:
        raise JkoSolverError(f"JKO step did not converge: residual {last:.3e}", last)

    rho_next = GridMeasure(mu.grid, np.exp(g))
    sol = solve_transport(rho_next, mu, h, gap_tol=config.gap_tol)
    resid = optimality_residual(rho_next, V, sol.psi)
    objective = _objective(rho_next, mu, V, h, sol)
    oracle_distance = None
    if config.oracle_check:
        oracle = jko_oracle(mu, V, h)
        oracle_distance = rho_next.sup_distance(oracle)
    return JkoStepResult(rho_next, sol.psi, sol.psi_grad, resid, objective, total_iters,
                         sol, relaxation, oracle_distance)


def optimality_residual(rho: GridMeasure, V: Potential, psi: np.ndarray) -> float:
    r = rho.log_density() + V.values + psi
    return float(np.max(np.abs(r - rho.expect(r))))


def _picard(prob: _StepProblem, g: np.ndarray, relaxation: float, config: JkoConfig):
    res = np.inf
    for it in range(1, config.max_inner_iters + 1):
        _, _, _, _, _, r = prob.evaluate(g)
        res = float(np.max(np.abs(r)))
        if res <= config.opt_tol:
            return g, res, it
        if not np.isfinite(res):
            break
        g = prob.normalise(g - relaxation * r)
    return g, res, config.max_inner_iters


def _newton(prob: _StepProblem, g: np.ndarray, relaxation: float, config: JkoConfig):
    """Damped Newton on the bordered system ``[I + J, -1; (w rho)^T, 0]``.

    The step length starts at ``relaxation``, doubles (up to 1) after every
    accepted step and halves when the residual grows.
    """
    n = prob.grid.n
    rho, cdf, T, _, _, r = prob.evaluate(g)
    res = float(np.max(np.abs(r)))
    step = relaxation
    polish = 2
    for it in range(1, config.max_inner_iters + 1):
        if res <= config.opt_tol:
            polish -= 1
            if polish < 0 or res < 1e-14:
                return g, res, it
        M = np.empty((n + 1, n + 1))
        M[:n, :n] = prob.jacobian_psi(rho, cdf, T)
        M[np.arange(n), np.arange(n)] += 1.0
        M[:n, n] = -1.0
        M[n, :n] = prob.w * rho
        M[n, n] = 0.0
        rhs = np.concatenate([-r, [0.0]])
        try:
            delta = np.linalg.solve(M, rhs)[:n]
        except np.linalg.LinAlgError:
            delta = -r
        while True:
            g_try = prob.normalise(g + step * delta)
            rho_t, cdf_t, T_t, _, _, r_t = prob.evaluate(g_try)
            res_t = float(np.max(np.abs(r_t)))
            if np.isfinite(res_t) and res_t < res:
                g, rho, cdf, T, r, res = g_try, rho_t, cdf_t, T_t, r_t, res_t
                step = min(1.0, 2.0 * step)
                break
            if res <= config.opt_tol:
                # polishing made no progress; keep the converged iterate
                return g, res, it
            step *= 0.5
            if step < 1e-8:
                return g, res, it
    return g, res, config.max_inner_iters


def _oracle_objective(m, w, V, mu_cdf, h, grid, floor):
    rho = np.maximum(m, floor) / w
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * grid.dx * (rho[1:] + rho[:-1]))])
    cdf /= cdf[-1]
    T = quantile(mu_cdf, grid.nodes, cdf)
    d = grid.nodes - T
    psi = grid.cumulative(h.grad(d))
    logr = np.log(rho)
    value = float(np.dot(m, logr + V + h(d)))
    return value, logr + 1.0 + V + psi


def jko_oracle(mu: GridMeasure, V: Potential, h: RadialProfile, max_iter: int = 20000,
               tol: float = 1e-12, floor: float = 1e-300) -> GridMeasure:
    """Projected gradient descent over nodal masses ``m = w rho`` on the simplex.

    The gradient is the first variation ``log rho + 1 + V + psi_rho``.  It is
    taken in the metric ``diag(m)`` (the entropy is then uniformly convex) and
    projected onto ``sum m = 1``; step lengths follow Armijo backtracking on
    the discretised objective, capped so that no mass drops below a tenth of
    its value.  The start is ``mu`` itself.
    """
    grid = mu.grid
    w = grid.weights
    mu_cdf = mu.cdf()
    args = (w, V.values, mu_cdf, h, grid, floor)
    m = w * mu.density
    f, g = _oracle_objective(m, *args)
    step = 1.0
    for _ in range(max_iter):
        d = -m * (g - np.dot(m, g))
        slope = float(np.dot(g, d))
        if -slope < 1e-30:
            break
        # keep every mass at least a tenth of its current value
        neg = d < 0
        cap = 0.9 * float(np.min(m[neg] / -d[neg])) if np.any(neg) else np.inf
        step = min(step, cap)
        while True:
            trial = np.maximum(m + step * d, floor)
            trial /= trial.sum()
            f_t, g_t = _oracle_objective(trial, *args)
            if f_t <= f + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        change = float(np.max(np.abs(trial - m) / w))
        m, f, g = trial, f_t, g_t
        step = 2.0 * step
        if change < tol:
            break
    return GridMeasure(grid, np.maximum(m, floor) / w)


def run_flow(rho0: GridMeasure, V: Potential, h: RadialProfile, n_steps: int,
             config: JkoConfig, system: CostSystem, sigma: Modulus, omega: Modulus,
             eta: Optional[GridMeasure] = None, equilibrium_tol: float = EQUILIBRIUM_TOL):
    """Iterate :func:`jko_step` from ``rho0`` and record a :class:`FlowTrace`.

    Stops early once ``sup |rho_k - eta| < equilibrium_tol``.  Solver
    failures are re-raised as :class:`JkoSolverError` carrying the step index.
    """
    from .diagnostics import FlowTrace, initial_state, step_state

    if n_steps < 1:
        raise JkoConfigError("n_steps must be at least 1")
    if eta is None:
        eta = GridMeasure(V.grid, np.exp(-V.values))
    trace = FlowTrace(V=V, eta=eta, system=system, sigma=sigma, omega=omega)
    trace.append(initial_state(rho0, V, system, eta))
    rho = rho0
    cfg = config
    for k in range(1, n_steps + 1):
        if rho.sup_distance(eta) < equilibrium_tol:
            break
        try:
            step = jko_step(rho, V, h, cfg)
        except JkoSolverError as exc:
            raise JkoSolverError(f"step {k}: {exc}", exc.residual, step=k) from exc
        # carry a reduced relaxation forward instead of rediscovering it every step
        if step.relaxation < cfg.relaxation:
            cfg = replace(cfg, relaxation=step.relaxation)
        trace.append(step_state(step, V, system, eta))
        rho = step.rho_next
    return trace
