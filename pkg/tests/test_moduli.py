import math

import numpy as np
import pytest

from otlab.grid import Grid, make_potential
from otlab.moduli import (ModulusSpecError, integrated_convexity_modulus, make_modulus,
                          power_modulus, ppower_C, ppower_lower_bound, ppower_objective,
                          ppower_tp, table_modulus, verify_modulus)

# dense 10^6-point scan of the objective for p = 4 gives C = 1/12 at t = -1/3;
# t = -1/3 is also the exact root of (t+1)^3 = t^3 + 3t^2
C4, T4 = 1.0 / 12.0, -1.0 / 3.0


def quad_V(lam, a=-2.0, b=2.0, n=101):
    return make_potential({"kind": "quadratic", "lambda": lam}, Grid(a, b, n))


@pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
def test_quadratic_moduli_exact(lam):
    V = quad_V(lam)
    rs = verify_modulus(V, power_modulus(2, lam / 2, "convexity"))
    rw = verify_modulus(V, power_modulus(2, lam, "monotonicity"))
    assert abs(rs.min_margin) < 1e-10
    assert abs(rw.min_margin) < 1e-10
    assert rs.samples == 101 * 101


def test_cubic_monotonicity_modulus():
    V = make_potential({"kind": "power", "p": 3}, Grid(-2.0, 2.0, 201))
    rep = verify_modulus(V, power_modulus(3, 0.5, "monotonicity"))
    # sharp: equality at x = -y, so only rounding is allowed
    assert rep.min_margin >= -1e-12


def test_too_strong_modulus_reports_witness():
    V = quad_V(1.0)
    rep = verify_modulus(V, power_modulus(2, 1.0, "convexity"))
    assert rep.min_margin < 0 and not rep.valid
    x, y = rep.witness_pair
    assert abs(x - y) == pytest.approx(4.0)


def test_pair_subsampling_is_seeded():
    V = quad_V(1.0, n=401)
    m = power_modulus(2, 0.5)
    a = verify_modulus(V, m, pair_samples=5000, seed=3)
    b = verify_modulus(V, m, pair_samples=5000, seed=3)
    assert a == b and a.samples == 5000
    with pytest.raises(ValueError):
        verify_modulus(V, m, pair_samples=10)


def test_convexity_to_monotonicity_doubling():
    V = make_potential({"kind": "power", "p": 3}, Grid(-1.0, 1.0, 101))
    sigma = power_modulus(3, ppower_C(3), "convexity")
    assert verify_modulus(V, sigma).min_margin >= -1e-8
    assert verify_modulus(V, sigma.scaled(2.0, "monotonicity")).min_margin >= -1e-8


def test_ppower_constants_closed_form():
    assert ppower_C(3) == pytest.approx((2 - math.sqrt(2)) / 3, abs=1e-10)
    assert ppower_tp(3) == pytest.approx(1 / math.sqrt(2) - 1, abs=1e-10)
    assert ppower_C(2) == pytest.approx(0.5, abs=1e-12)
    assert ppower_tp(2) == pytest.approx(-0.5, abs=1e-12)
    assert ppower_C(4) == pytest.approx(C4, abs=1e-9)
    assert ppower_tp(4) == pytest.approx(T4, abs=1e-10)
    assert 2.0**-2 / 4 <= ppower_C(4) <= 0.25


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 3.7, 4.0, 5.0, 6.0, 8.0])
def test_ppower_lower_bound_and_consistency(p):
    C = ppower_C(p)
    assert C >= ppower_lower_bound(p) - 1e-12
    assert ppower_lower_bound(p) == pytest.approx(2.0 ** (2 - p) / p)
    assert ppower_objective(ppower_tp(p), p) == pytest.approx(C, abs=1e-10)
    if p == 3.0:
        assert C > ppower_lower_bound(p) + 1e-3


def test_ppower_domain():
    for fn in (ppower_C, ppower_tp):
        with pytest.raises(ValueError):
            fn(1.5)


def test_ppower_modulus_validates():
    for p in (3.0, 4.0):
        V = make_potential({"kind": "power", "p": p}, Grid(-1.0, 1.0, 121))
        rep = verify_modulus(V, power_modulus(p, ppower_C(p)))
        assert rep.min_margin >= -1e-8


def test_integrated_convexity_modulus_quadratic():
    # omega = t^2 gives int_0^1 s^-1 (s t)^2 ds = t^2 / 2
    t = np.linspace(0.0, 3.0, 31)
    got = integrated_convexity_modulus(power_modulus(2, 1.0, "monotonicity"), t)
    assert np.max(np.abs(got - t**2 / 2)) < 1e-6


def test_make_modulus():
    m = make_modulus({"kind": "power", "p": 2, "coeff": 0.5})
    assert m(np.array([-2.0]))[0] == pytest.approx(2.0)
    tab = make_modulus({"kind": "table", "r": [0, 1, 2], "values": [0, 1, 4]})
    assert tab(1.5) == pytest.approx(2.5)
    assert make_modulus({"kind": "zero"})(3.0) == 0.0
    with pytest.raises(ModulusSpecError):
        make_modulus({"kind": "power"})
    with pytest.raises(ModulusSpecError):
        table_modulus([0, 1], [1, 2])


def test_cubic_monotonicity_beyond_sharp_fails():
    # omega = (2/3) t^3 exceeds the sharp t^3/2 at x = -y
    V = make_potential({"kind": "power", "p": 3}, Grid(-2.0, 2.0, 201))
    assert verify_modulus(V, power_modulus(3, 2 / 3, "monotonicity")).min_margin < 0
