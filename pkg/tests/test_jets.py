"""Jet arithmetic against finite-difference oracles."""

import math

import numpy as np
import pytest

from utweak import jets
from utweak.jets import Jet


def fd_derivative(f, x, k, h):
    """Central finite-difference derivative of order k with Richardson step halving."""
    def stencil(h):
        if k == 1:
            return (f(x + h) - f(x - h)) / (2 * h)
        if k == 2:
            return (f(x + h) - 2 * f(x) + f(x - h)) / h ** 2
        if k == 3:
            return (f(x + 2 * h) - 2 * f(x + h) + 2 * f(x - h) - f(x - 2 * h)) / (2 * h ** 3)
        return (f(x + 2 * h) - 4 * f(x + h) + 6 * f(x) - 4 * f(x - h) + f(x - 2 * h)) / h ** 4

    coarse, fine = stencil(h), stencil(h / 2)
    return (4.0 * fine - coarse) / 3.0


FUNCS = [
    (jets.sin, np.sin, 0.7, 0.05),
    (jets.cos, np.cos, 0.7, 0.05),
    (jets.tan, np.tan, 0.4, 0.02),
    (jets.atan, np.arctan, 0.9, 0.05),
    (jets.tanh, np.tanh, 0.3, 0.05),
    (jets.sinh, np.sinh, 0.6, 0.05),
    (jets.cosh, np.cosh, 0.6, 0.05),
    (jets.exp, np.exp, 0.5, 0.05),
    (jets.log, np.log, 1.7, 0.05),
    (jets.sqrt, np.sqrt, 2.3, 0.05),
]


@pytest.mark.parametrize("jf,nf,x,h", FUNCS, ids=[f[0].__name__ for f in FUNCS])
def test_jet_derivatives_match_finite_differences(jf, nf, x, h):
    jet = jf(Jet.variable(x, 4))
    assert jet.value == pytest.approx(nf(x), abs=1e-14)
    for k in range(1, 5):
        ad = jet.derivative(k)
        fd = fd_derivative(nf, x, k, h)
        assert abs(ad - fd) <= max(1e-5, 1e-3 * abs(ad)), (k, ad, fd)


def test_smoothstep5_derivatives_match_finite_differences():
    f = lambda r: jets.smoothstep5(r, 1.0, 3.0)
    for x in (1.4, 2.0, 2.7):
        jet = jets.smoothstep5(Jet.variable(x, 4), 1.0, 3.0)
        assert jet.value == pytest.approx(f(x), abs=1e-14)
        for k in range(1, 5):
            fd = fd_derivative(f, x, k, 0.02)
            assert abs(jet.derivative(k) - fd) <= max(1e-5, 1e-3 * abs(jet.derivative(k)))


def test_smoothstep5_boundary_values():
    assert jets.smoothstep5(0.9, 1.0, 3.0) == 0.0
    assert jets.smoothstep5(3.1, 1.0, 3.0) == 1.0
    assert jets.smoothstep5(1.0, 1.0, 3.0) == 0.0
    assert jets.smoothstep5(3.0, 1.0, 3.0) == 1.0
    # interior value, slope and curvature of the quintic at the midpoint
    assert jets.smoothstep5(2.0, 1.0, 3.0) == pytest.approx(0.5)
    # degenerate bridge is a hard step
    assert jets.smoothstep5(2.9999, 3.0, 3.0) == 0.0
    assert jets.smoothstep5(3.0001, 3.0, 3.0) == 1.0
    assert jets.smoothstep5(3.0, 3.0, 3.0) == 0.0


def test_smoothstep5_c2_matching():
    for k, expected in ((1, 0.0), (2, 0.0)):
        at_a = jets.smoothstep5(Jet.variable(1.0 + 1e-9, 4), 1.0, 3.0).derivative(k)
        at_b = jets.smoothstep5(Jet.variable(3.0 - 1e-9, 4), 1.0, 3.0).derivative(k)
        assert abs(at_a - expected) < 1e-7
        assert abs(at_b - expected) < 1e-7


def test_leibniz_rule_exact():
    x = Jet.variable(0.8, 4)
    prod = jets.sin(x) * jets.exp(x)
    # d/dx sin e^x = e^x (sin + cos), etc.: compare with the jet of the closed form
    s, c, e = math.sin(0.8), math.cos(0.8), math.exp(0.8)
    assert prod.derivative(0) == pytest.approx(s * e, rel=1e-15)
    assert prod.derivative(1) == pytest.approx(e * (s + c), rel=1e-14)
    assert prod.derivative(2) == pytest.approx(2 * e * c, rel=1e-13)


def test_division_and_power_consistency():
    x = Jet.variable(0.5, 4)
    t1 = jets.tan(x)
    # independent route: tan = sin * cos^-1 via float power
    t2 = jets.sin(x) * (jets.cos(x) ** -1)
    for k in range(5):
        assert t1.derivative(k) == pytest.approx(t2.derivative(k), rel=1e-12)
    p = x ** 2.5
    fd = fd_derivative(lambda v: v ** 2.5, 0.5, 2, 0.01)
    assert p.derivative(2) == pytest.approx(fd, rel=1e-6)


def test_order_zero_equals_plain_evaluation():
    for v in (-1.3, 0.0, 2.4):
        j = jets.tanh(Jet.variable(v, 3) * 2.0 + 1.0)
        assert j.value == pytest.approx(np.tanh(2.0 * v + 1.0), rel=1e-15)


def test_array_coefficients():
    xs = np.linspace(-2, 2, 11)
    jet = jets.atan(Jet.variable(xs, 2))
    assert np.allclose(jet.value, np.arctan(xs))
    assert np.allclose(jet.derivative(1), 1 / (1 + xs ** 2))
    assert np.allclose(jet.derivative(2), -2 * xs / (1 + xs ** 2) ** 2)


def test_order_cap():
    with pytest.raises(ValueError):
        Jet.variable(1.0, 5)
