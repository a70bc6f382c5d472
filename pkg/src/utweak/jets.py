"""Truncated Taylor jets: scalar forward-mode AD up to fourth order.

A jet carries the Taylor coefficients ``[f, f'/1!, f''/2!, ...]`` of a
quantity along one seed direction.  Coefficients may be floats or numpy
arrays of a common shape, so a single tree walk differentiates an
expression along every path of a simulation batch at once.
"""

from __future__ import annotations

import numpy as np

MAX_ORDER = 4

# k! for k = 0..MAX_ORDER
_FACT = (1.0, 1.0, 2.0, 6.0, 24.0)


class Jet:
    """Taylor expansion truncated after `order` terms beyond the value.

    Arithmetic follows truncated power-series rules, which is exactly the
    Leibniz rule order by order.  The zeroth coefficient always equals the
    plain evaluation of the same expression.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        self.coeffs = list(coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def value(self):
        return self.coeffs[0]

    def derivative(self, k: int):
        """k-th derivative (coefficient rescaled by k!)."""
        return self.coeffs[k] * _FACT[k]

    @classmethod
    def variable(cls, value, order: int = MAX_ORDER) -> "Jet":
        if not 1 <= order <= MAX_ORDER:
            raise ValueError(f"jet order must be in 1..{MAX_ORDER}, got {order}")
        one = np.ones_like(value) if isinstance(value, np.ndarray) else 1.0
        zero = np.zeros_like(value) if isinstance(value, np.ndarray) else 0.0
        return cls([value, one] + [zero] * (order - 1))

    @classmethod
    def constant(cls, value, order: int = MAX_ORDER) -> "Jet":
        zero = np.zeros_like(value) if isinstance(value, np.ndarray) else 0.0
        return cls([value] + [zero] * order)

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ValueError("mixed jet orders")
            return other
        return Jet.constant(other, self.order)

    # ------------------------------------------------------------------
    # ring operations
    # ------------------------------------------------------------------

    def __add__(self, other):
        o = self._coerce(other)
        return Jet([a + b for a, b in zip(self.coeffs, o.coeffs)])

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Jet([a - b for a, b in zip(self.coeffs, o.coeffs)])

    def __rsub__(self, other):
        o = self._coerce(other)
        return Jet([b - a for a, b in zip(self.coeffs, o.coeffs)])

    def __neg__(self):
        return Jet([-a for a in self.coeffs])

    def __mul__(self, other):
        o = self._coerce(other)
        n = self.order
        a, b = self.coeffs, o.coeffs
        out = []
        for k in range(n + 1):
            s = a[0] * b[k]
            for i in range(1, k + 1):
                s = s + a[i] * b[k - i]
            out.append(s)
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        n = self.order
        a, b = self.coeffs, o.coeffs
        inv0 = 1.0 / b[0]
        out = [a[0] * inv0]
        for k in range(1, n + 1):
            s = a[k]
            for i in range(1, k + 1):
                s = s - b[i] * out[k - i]
            out.append(s * inv0)
        return Jet(out)

    def __rtruediv__(self, other):
        return Jet.constant(other, self.order).__truediv__(self)

    def __pow__(self, p):
        if isinstance(p, Jet):
            # general exponent: a^p = exp(p log a)
            return exp(p * log(self))
        if isinstance(p, (int, np.integer)) or (isinstance(p, float) and p.is_integer()):
            return self._int_pow(int(p))
        return self.compose(_pow_derivs(self.value, float(p), self.order))

    def _int_pow(self, k: int) -> "Jet":
        if k == 0:
            return Jet.constant(np.ones_like(self.value) if isinstance(self.value, np.ndarray) else 1.0, self.order)
        if k < 0:
            return 1.0 / self._int_pow(-k)
        out = self
        for _ in range(k - 1):
            out = out * self
        return out

    # ------------------------------------------------------------------
    # composition with an outer scalar function
    # ------------------------------------------------------------------

    def compose(self, derivs) -> "Jet":
        """Compose with f given by derivs[k] = f^(k) at self.value.

        Builds the truncated series of f(self) via Horner evaluation in the
        zero-constant part of self.
        """
        n = self.order
        zero = np.zeros_like(self.value) if isinstance(self.value, np.ndarray) else 0.0
        delta = Jet([zero] + self.coeffs[1:])
        acc = Jet.constant(derivs[n] / _FACT[n], n)
        for k in range(n - 1, -1, -1):
            acc = acc * delta + Jet.constant(derivs[k] / _FACT[k], n)
        return acc


def _pow_derivs(u, p: float, order: int):
    derivs = [u ** p]
    c = 1.0
    for k in range(1, order + 1):
        c *= p - (k - 1)
        derivs.append(c * u ** (p - k))
    return derivs


# ----------------------------------------------------------------------
# elementary functions on jets (and plain values)
# ----------------------------------------------------------------------

def exp(u):
    if not isinstance(u, Jet):
        return np.exp(u)
    e = np.exp(u.value)
    return u.compose([e] * (u.order + 1))


def log(u):
    if not isinstance(u, Jet):
        return np.log(u)
    v = u.value
    derivs = [np.log(v), 1.0 / v, -1.0 / v ** 2, 2.0 / v ** 3, -6.0 / v ** 4]
    return u.compose(derivs[: u.order + 1])


def sqrt(u):
    if not isinstance(u, Jet):
        return np.sqrt(u)
    v = u.value
    s = np.sqrt(v)
    derivs = [s, 0.5 / s, -0.25 / (v * s), 0.375 / (v ** 2 * s), -0.9375 / (v ** 3 * s)]
    return u.compose(derivs[: u.order + 1])


def sin(u):
    if not isinstance(u, Jet):
        return np.sin(u)
    s, c = np.sin(u.value), np.cos(u.value)
    return u.compose([s, c, -s, -c, s][: u.order + 1])


def cos(u):
    if not isinstance(u, Jet):
        return np.cos(u)
    s, c = np.sin(u.value), np.cos(u.value)
    return u.compose([c, -s, -c, s, c][: u.order + 1])


def tan(u):
    if not isinstance(u, Jet):
        return np.tan(u)
    return sin(u) / cos(u)


def sinh(u):
    if not isinstance(u, Jet):
        return np.sinh(u)
    s, c = np.sinh(u.value), np.cosh(u.value)
    return u.compose([s, c, s, c, s][: u.order + 1])


def cosh(u):
    if not isinstance(u, Jet):
        return np.cosh(u)
    s, c = np.sinh(u.value), np.cosh(u.value)
    return u.compose([c, s, c, s, c][: u.order + 1])


def tanh(u):
    if not isinstance(u, Jet):
        return np.tanh(u)
    return sinh(u) / cosh(u)


def atan(u):
    if not isinstance(u, Jet):
        return np.arctan(u)
    v = u.value
    w = 1.0 + v * v
    derivs = [
        np.arctan(v),
        1.0 / w,
        -2.0 * v / w ** 2,
        (6.0 * v * v - 2.0) / w ** 3,
        (24.0 * v - 24.0 * v ** 3) / w ** 4,
    ]
    return u.compose(derivs[: u.order + 1])


def _quintic_step_derivs(r, a: float, b: float, order: int):
    """Value and derivatives of the clamped quintic bridge at r.

    q(t) = 10 t^3 - 15 t^4 + 6 t^5 on [0, 1]; value/slope/curvature vanish
    at t=0 and slope/curvature vanish at t=1 where the value is 1.  With
    a == b the bridge degenerates to a hard step 1_{r > a}.
    """
    r = np.asarray(r, dtype=float) if isinstance(r, np.ndarray) else float(r)
    if a == b:
        val = np.where(r > a, 1.0, 0.0) if isinstance(r, np.ndarray) else (1.0 if r > a else 0.0)
        zero = np.zeros_like(val) if isinstance(val, np.ndarray) else 0.0
        return [val] + [zero] * order
    scale = 1.0 / (b - a)
    t = (r - a) * scale
    tc = np.clip(t, 0.0, 1.0)
    inside = (t > 0.0) & (t < 1.0) if isinstance(t, np.ndarray) else (0.0 < t < 1.0)
    q = tc ** 3 * (10.0 - 15.0 * tc + 6.0 * tc * tc)
    polys = (
        lambda s: 30.0 * s ** 2 - 60.0 * s ** 3 + 30.0 * s ** 4,
        lambda s: 60.0 * s - 180.0 * s ** 2 + 120.0 * s ** 3,
        lambda s: 60.0 - 360.0 * s + 360.0 * s ** 2,
        lambda s: -360.0 + 720.0 * s,
    )
    derivs = [q]
    for k in range(1, order + 1):
        dk = polys[k - 1](tc) * scale ** k
        dk = np.where(inside, dk, 0.0) if isinstance(t, np.ndarray) else (dk if inside else 0.0)
        derivs.append(dk)
    return derivs


def smoothstep5(r, a, b):
    """C^2 quintic ramp: 0 for r <= a, 1 for r >= b; hard step when a == b."""
    if not isinstance(r, Jet):
        return _quintic_step_derivs(r, float(a), float(b), 0)[0]
    av = a.value if isinstance(a, Jet) else float(a)
    bv = b.value if isinstance(b, Jet) else float(b)
    return r.compose(_quintic_step_derivs(r.value, av, bv, r.order))
