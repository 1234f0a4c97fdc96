"""Fisher informations, per-step dissipation residuals and the log-Sobolev certificate.

A :class:`FlowTrace` stores every iterate of a discrete flow together with the
pressure gradient used at that iterate: the finite-difference gradient of
``log rho + V`` for the initial density and ``-psi'`` (exact optimality) for
the JKO iterates.  All other quantities are derived from those states.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .costs import CostSystem, RadialProfile, alpha
from .grid import GridMeasure, Potential, free_energy, pressure
from .moduli import Modulus


class DiagnosticsConfigError(ValueError):
    pass


def tol_d(dx: float, magnitude: float = 0.0, scale: float = 1.0) -> float:
    """Discretisation tolerance ``100 dx (1 + |magnitude|)`` for integral inequalities."""
    return 100.0 * dx * (1.0 + abs(magnitude)) * scale


def fisher_information(rho: GridMeasure, V: Potential, W: RadialProfile,
                       du: Optional[np.ndarray] = None) -> float:
    """``int W(|u'|) d rho``; ``u'`` defaults to the finite-difference pressure gradient."""
    if du is None:
        _, du = pressure(rho, V)
    return rho.expect(W(du))


@dataclass(frozen=True)
class FlowState:
    rho: GridMeasure
    du: np.ndarray
    du_fd: np.ndarray
    transport_cost: float = 0.0
    jko_residual: float = 0.0
    duality_gap: float = 0.0
    inner_iters: int = 0


def initial_state(rho0: GridMeasure, V: Potential, system: CostSystem, eta=None) -> FlowState:
    _, du = pressure(rho0, V)
    return FlowState(rho0, du, du)


def step_state(step, V: Potential, system: CostSystem, eta=None) -> FlowState:
    """State built from a :class:`~otlab.jko.JkoStepResult`."""
    _, du_fd = pressure(step.rho_next, V)
    return FlowState(step.rho_next, -np.asarray(step.psi_grad), du_fd,
                     step.transport.cost, step.residual, step.transport.duality_gap,
                     step.inner_iters)


COLUMNS = ("k", "F", "I_H", "I_L", "I_G", "R_ent", "R_inf", "Delta", "sup_dist",
           "transport_cost", "ent_residual", "fisher_residual", "jko_residual",
           "duality_gap", "inner_iters")


@dataclass
class FlowTrace:
    """Iterates of a discrete flow and the per-step quantities derived from them.

    ``ent_residual[k]`` and ``fisher_residual[k]`` (for ``k >= 1``) compare
    step ``k-1 -> k``; row 0 holds NaN there.
    """

    V: Potential
    eta: GridMeasure
    system: CostSystem
    sigma: Modulus
    omega: Modulus
    states: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def dx(self) -> float:
        return self.V.grid.dx

    def displacement(self, k: int) -> np.ndarray:
        """``(h*)'(u'_k)``, the transport displacement attached to iterate k."""
        return self.system.h.conj_grad(self.states[k].du)

    def append(self, state: FlowState) -> None:
        self.states.append(state)
        k = len(self.states) - 1
        rho, du = state.rho, state.du
        s = self.system
        d = s.h.conj_grad(du)
        I_H = rho.expect(s.H(du))
        I_L = rho.expect(s.L(du))
        R_ent = I_L + rho.expect(s.L.conj(d) - self.sigma(d))
        R_inf = rho.expect(alpha(du, s) * self.omega(d))
        row = dict(k=k, F=free_energy(rho, self.V), I_H=I_H, I_L=I_L, I_G=I_H + I_L,
                   R_ent=R_ent, R_inf=R_inf, Delta=R_ent - R_inf,
                   sup_dist=rho.sup_distance(self.eta), transport_cost=state.transport_cost,
                   ent_residual=math.nan, fisher_residual=math.nan,
                   jko_residual=state.jko_residual, duality_gap=state.duality_gap,
                   inner_iters=state.inner_iters)
        if k >= 1:
            prev = self.rows[k - 1]
            row["ent_residual"] = (row["F"] + prev["I_L"] + R_ent - I_L) - prev["F"]
            row["fisher_residual"] = prev["I_H"] - I_H - R_inf
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([r["k"]] + [f"{r[c]:.17g}" for c in COLUMNS[1:-1]] + [r["inner_iters"]])

    def summary(self) -> dict:
        last = self.rows[-1]
        ent = self.column("ent_residual")[1:]
        fis = self.column("fisher_residual")[1:]
        return {
            "steps": len(self) - 1,
            "final_F": last["F"],
            "final_sup_dist": last["sup_dist"],
            "min_ent_residual": float(ent.min()) if ent.size else 0.0,
            "min_fisher_residual": float(fis.min()) if fis.size else 0.0,
            "F_increases": int(np.sum(np.diff(self.column("F")) > 0)),
            "max_jko_residual": float(self.column("jko_residual").max()),
            "max_abs_duality_gap": float(np.abs(self.column("duality_gap")).max()),
        }


def entropy_dissipation_residual(trace: FlowTrace, k: int, sigma: Optional[Modulus] = None,
                                 L: Optional[RadialProfile] = None) -> float:
    """LHS - RHS of the entropy dissipation inequality for ``mu = rho_k``, ``rho = rho_{k+1}``.

    ``F(rho) + int L(u'_mu) d mu + int L*(d) d rho - F(mu) - int sigma(d) d rho``
    with ``d = (h*)'(u'_rho)``.
    """
    sigma = trace.sigma if sigma is None else sigma
    L = trace.system.L if L is None else L
    mu, rho = trace.states[k], trace.states[k + 1]
    d = trace.displacement(k + 1)
    return (trace.rows[k + 1]["F"] + mu.rho.expect(L(mu.du))
            + rho.rho.expect(L.conj(d) - sigma(d)) - trace.rows[k]["F"])


def fisher_dissipation_residual(trace: FlowTrace, k: int, H: Optional[RadialProfile] = None,
                                omega: Optional[Modulus] = None,
                                system: Optional[CostSystem] = None) -> float:
    """``I_H(rho_k) - I_H(rho_{k+1}) - int alpha(u') omega((h*)'(u')) d rho_{k+1}``."""
    system = trace.system if system is None else system
    H = system.H if H is None else H
    omega = trace.omega if omega is None else omega
    mu, rho = trace.states[k], trace.states[k + 1]
    d = system.h.conj_grad(rho.du)
    return (mu.rho.expect(H(mu.du)) - rho.rho.expect(H(rho.du))
            - rho.rho.expect(alpha(rho.du, system) * omega(d)))


@dataclass
class LsiCertificate:
    F0: float
    IG0: float
    Fn: float
    IGn: float
    sum_delta: float
    certified: bool
    tol: float
    status: str
    telescoping_ok: bool
    telescoping_margin: float
    margin: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("F0", "IG0", "Fn", "IGn", "sum_delta", "certified",
                                              "tol", "status", "telescoping_ok",
                                              "telescoping_margin", "margin")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def lsi_certificate(trace: FlowTrace, system: Optional[CostSystem] = None,
                    converged_tol: float = 1e-4, tol_scale: float = 1.0) -> LsiCertificate:
    """Check ``F_0 <= I_G(rho_0) + tol_d`` and the telescoped inequality at every n.

    ``status`` is ``"certified"``, ``"failed"`` or, when the trace did not get
    within ``converged_tol`` of equilibrium, ``"inconclusive"``.
    """
    if system is not None and system is not trace.system:
        G = system.G
        IG = np.array([s.rho.expect(G(s.du)) for s in trace.states])
    else:
        IG = trace.column("I_G")
    F = trace.column("F")
    delta = trace.column("Delta")
    tol = tol_d(trace.dx, max(abs(F[0]), abs(IG[0])), tol_scale)
    cum_delta = np.concatenate([[0.0], np.cumsum(delta[1:])])
    tele = (IG[0] - IG + cum_delta) - (F[0] - F)
    tele_margin = float(tele[1:].min()) if tele.size > 1 else 0.0
    margin = float(IG[0] - F[0])
    certified = margin >= -tol
    converged = trace.rows[-1]["sup_dist"] < converged_tol
    if not converged:
        status = "inconclusive"
    else:
        status = "certified" if certified else "failed"
    return LsiCertificate(float(F[0]), float(IG[0]), float(F[-1]), float(IG[-1]),
                          float(cum_delta[-1]), bool(certified), float(tol), status,
                          bool(tele_margin >= -tol), tele_margin, margin)


def ppower_flow_constants(trace: FlowTrace, alpha_coef: float, beta_coef: float, p: float,
                          tau: float, q: Optional[float] = None, tol_scale: float = 1.0) -> dict:
    """Per-step p-power dissipation checks and the summed entropy bound along a flow.

    With ``I_k = int |u'_k|^q d rho_k``, ``K = 1/(q alpha^(q-1))`` and
    ``theta = beta tau^(p-1)`` this checks ``F_{k+1} + K I_k >= F_k``,
    ``I_{k+1} <= I_k/(1+theta)``, ``I_k <= (1+theta)^-k I_0`` and
    ``F_0 <= K (1 + 1/theta) I_0``, each up to ``100 dx``.
    """
    p = float(p)
    if not p > 1:
        raise DiagnosticsConfigError(f"need p > 1, got {p}")
    q_expected = p / (p - 1.0)
    if q is None:
        q = q_expected
    elif not math.isclose(1.0 / p + 1.0 / q, 1.0, rel_tol=1e-12):
        raise DiagnosticsConfigError(f"exponents p={p}, q={q} are not conjugate")
    if alpha_coef <= 0 or beta_coef <= 0 or tau <= 0:
        raise DiagnosticsConfigError("alpha_coef, beta_coef and tau must be positive")
    tol = tol_d(trace.dx, 0.0, tol_scale)
    K = 1.0 / (q * alpha_coef ** (q - 1.0))
    theta = beta_coef * tau ** (p - 1.0)
    F = trace.column("F")
    I = np.array([s.rho.expect(np.abs(s.du) ** q) for s in trace.states])
    ent_margin = F[1:] + K * I[:-1] - F[:-1]
    fisher_margin = I[:-1] / (1.0 + theta) - I[1:]
    k = np.arange(I.size)
    decay_margin = (1.0 + theta) ** (-k) * I[0] * (1.0 + tol) - I
    bound = K * (1.0 + 1.0 / theta) * I[0]
    out = {
        "p": p, "q": q, "tau": tau, "alpha_coef": alpha_coef, "beta_coef": beta_coef,
        "theta": theta, "K": K, "F0": float(F[0]), "I0": float(I[0]), "summed_bound": float(bound),
        "summed_ok": bool(F[0] <= bound + tol),
        "min_entropy_margin": float(ent_margin.min()) if ent_margin.size else 0.0,
        "min_fisher_margin": float(fisher_margin.min()) if fisher_margin.size else 0.0,
        "min_decay_margin": float(decay_margin.min()),
        "tol": tol,
    }
    out["entropy_ok"] = out["min_entropy_margin"] >= -tol
    out["fisher_ok"] = out["min_fisher_margin"] >= -tol
    out["decay_ok"] = out["min_decay_margin"] >= 0
    out["passed"] = all(out[k] for k in ("summed_ok", "entropy_ok", "fisher_ok", "decay_ok"))
    return out
