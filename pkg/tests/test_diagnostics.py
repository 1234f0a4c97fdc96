import json
import math

import numpy as np
import pytest

from otlab.costs import CostSystem, power, quadratic, scaled
from otlab.diagnostics import (COLUMNS, DiagnosticsConfigError, entropy_dissipation_residual,
                               fisher_dissipation_residual, fisher_information, lsi_certificate,
                               ppower_flow_constants, tol_d)
from otlab.grid import Grid, GridMeasure, make_gibbs
from otlab.jko import JkoConfig, run_flow
from otlab.moduli import power_modulus, ppower_C

ALPHA3 = 2 - math.sqrt(2)  # 3 C(3)
BETA3 = 0.75


def gaussian_trace(n=201, steps=120, tau=0.1, center=1.0):
    g = Grid(-4.0, 4.0, n)
    V, eta = make_gibbs({"kind": "quadratic"}, g)
    h = scaled(tau, quadratic())
    system = CostSystem(h, quadratic(), quadratic(tau))
    rho0 = GridMeasure.from_function(g, lambda x: np.exp(-0.5 * (x - center) ** 2))
    return run_flow(rho0, V, h, steps, JkoConfig(), system, power_modulus(2, 0.5),
                    power_modulus(2, 1.0, "monotonicity"), eta)


def cubic_trace(n, steps=50, tau=1.0):
    g = Grid(-3.0, 3.0, n)
    V, eta = make_gibbs({"kind": "power", "p": 3}, g)
    h = scaled(tau, power(3.0))
    system = CostSystem(h, power(1.5), power(1.5, ALPHA3 ** -2.0))
    rho0 = GridMeasure.from_function(g, lambda x: np.exp(-np.abs(x - 1) ** 3 / 3))
    return run_flow(rho0, V, h, steps, JkoConfig(), system,
                    power_modulus(3, ppower_C(3)), power_modulus(3, 0.5, "monotonicity"), eta)


@pytest.fixture(scope="module")
def gtrace():
    return gaussian_trace()


def test_fisher_information_examples():
    g = Grid(-4.0, 4.0, 401)
    V, eta = make_gibbs({"kind": "quadratic"}, g)
    assert fisher_information(eta, V, quadratic()) < 1e-20
    t = 0.7
    rho = GridMeasure(g, np.exp(-V.values + t * g.nodes))
    # u' = t exactly for this density
    assert fisher_information(rho, V, quadratic(2.0)) == pytest.approx(t**2, abs=1e-10)
    assert fisher_information(rho, V, power(3.0)) == pytest.approx(t**3 / 3, abs=1e-10)


def test_fisher_information_detects_small_perturbation():
    g = Grid(-4.0, 4.0, 401)
    V, eta = make_gibbs({"kind": "quadratic"}, g)
    rho = GridMeasure(g, eta.density * (1 + 1e-4 * np.sin(g.nodes)))
    assert rho.sup_distance(eta) > 1e-6
    assert fisher_information(rho, V, quadratic()) > 0


def test_trace_columns_and_definitions(gtrace, tmp_path):
    assert len(gtrace.rows[0]) == len(COLUMNS)
    delta = gtrace.column("Delta")
    assert np.array_equal(delta, gtrace.column("R_ent") - gtrace.column("R_inf"))
    F = gtrace.column("F")
    for n in range(1, len(F)):
        assert math.isclose(np.sum(F[:n] - F[1:n + 1]), F[0] - F[n], abs_tol=1e-14)
    gtrace.to_csv(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == ",".join(COLUMNS) and len(lines) == len(gtrace) + 1


def test_residual_functions_match_rows(gtrace):
    for k in range(len(gtrace) - 1):
        assert entropy_dissipation_residual(gtrace, k) == pytest.approx(
            gtrace.rows[k + 1]["ent_residual"], abs=1e-14)
        assert fisher_dissipation_residual(gtrace, k) == pytest.approx(
            gtrace.rows[k + 1]["fisher_residual"], abs=1e-14)


def test_quadratic_dissipation_and_fisher_monotone(gtrace):
    tol = tol_d(gtrace.dx)
    assert np.min(gtrace.column("ent_residual")[1:]) >= -tol
    assert np.min(gtrace.column("fisher_residual")[1:]) >= -tol
    assert np.all(np.diff(gtrace.column("I_H")) <= 1e-12)


def test_pressure_from_potential_matches_fd(gtrace):
    for s in gtrace.states[1:]:
        fd = fisher_information(s.rho, gtrace.V, quadratic(), s.du_fd)
        pot = fisher_information(s.rho, gtrace.V, quadratic(), s.du)
        assert abs(fd - pot) <= 10 * gtrace.dx


def test_stationary_residuals_vanish():
    g = Grid(-4.0, 4.0, 201)
    V, eta = make_gibbs({"kind": "quadratic"}, g)
    h = scaled(0.1, quadratic())
    system = CostSystem(h, quadratic(), quadratic(0.1))
    trace = run_flow(eta, V, h, 3, JkoConfig(), system, power_modulus(2, 0.5),
                     power_modulus(2, 1.0, "monotonicity"), eta, equilibrium_tol=0.0)
    assert len(trace) == 4
    for k in range(3):
        assert abs(entropy_dissipation_residual(trace, k)) < 1e-8
        assert abs(fisher_dissipation_residual(trace, k)) < 1e-8


def test_cubic_dissipation_two_resolutions():
    worst = []
    for n in (151, 301):
        tr = cubic_trace(n)
        tol = tol_d(tr.dx)
        ent = tr.column("ent_residual")[1:]
        fis = tr.column("fisher_residual")[1:]
        assert ent.min() >= -tol and fis.min() >= -tol
        worst.append(max(0.0, -ent.min(), -fis.min()))
    assert worst[1] <= worst[0] + 1e-12


def test_certificate_trivial_and_gaussian(gtrace):
    cert = lsi_certificate(gtrace)
    assert cert.status == "certified" and cert.certified and cert.telescoping_ok
    assert cert.margin == pytest.approx(cert.IG0 - cert.F0)
    rec = json.loads(cert.to_json())
    assert {"F0", "IG0", "Fn", "IGn", "sum_delta", "certified", "tol"} <= set(rec)
    eq = run_flow(gtrace.eta, gtrace.V, gtrace.system.h, 5, JkoConfig(), gtrace.system,
                  gtrace.sigma, gtrace.omega, gtrace.eta)
    c0 = lsi_certificate(eq)
    assert c0.status == "certified" and abs(c0.F0) < 1e-10 and abs(c0.IG0) < 1e-10


def test_delta_nonpositive_when_criterion_holds(gtrace):
    assert np.max(gtrace.column("Delta")[1:]) <= tol_d(gtrace.dx)


def test_certificate_inconclusive_when_not_converged():
    tr = gaussian_trace(steps=2)
    assert lsi_certificate(tr).status == "inconclusive"


def test_certificate_with_other_system(gtrace):
    tiny = CostSystem(gtrace.system.h, quadratic(1e-6), quadratic(1e-6))
    # at dx = 0.04 the default tolerance (about 6) swamps F0, so shrink it
    assert lsi_certificate(gtrace, system=tiny).certified
    cert = lsi_certificate(gtrace, system=tiny, tol_scale=1e-3)
    assert cert.status == "failed" and not cert.certified


@pytest.mark.parametrize("tau", [0.5, 1.0, 10.0])
def test_ppower_two_rates(tau):
    tr = gaussian_trace(steps=60, tau=tau)
    rep = ppower_flow_constants(tr, 1.0, 1.0, 2.0, tau)
    assert rep["passed"]
    assert rep["K"] == pytest.approx(0.5)
    assert rep["summed_bound"] == pytest.approx(0.5 * (1 + 1 / tau) * rep["I0"])


def test_ppower_large_theta_limit():
    tr = cubic_trace(151, steps=20, tau=10.0)
    rep = ppower_flow_constants(tr, ALPHA3, BETA3, 3.0, 10.0)
    assert rep["passed"]
    K = 1 / (1.5 * ALPHA3**0.5)
    assert rep["K"] == pytest.approx(K)
    assert rep["summed_bound"] / rep["I0"] == pytest.approx(K * (1 + 1 / (0.75 * 100)))


def test_ppower_bad_exponents(gtrace):
    with pytest.raises(DiagnosticsConfigError):
        ppower_flow_constants(gtrace, 1.0, 1.0, 2.0, 1.0, q=3.0)
    with pytest.raises(DiagnosticsConfigError):
        ppower_flow_constants(gtrace, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(DiagnosticsConfigError):
        ppower_flow_constants(gtrace, -1.0, 1.0, 2.0, 1.0)
