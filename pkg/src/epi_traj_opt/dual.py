"""Forward-mode automatic differentiation with dual numbers.

A :class:`Dual` carries a value and a tangent.  The tangent may be a numpy
vector, so that one evaluation propagates several seed directions at once;
:func:`jacobian` uses this to get a full Jacobian in a single pass.
"""

import math

import numpy as np


class Dual:
    __slots__ = ("value", "tangent")

    # keep numpy from treating Dual as an array-like in mixed expressions
    __array_priority__ = 1000

    def __init__(self, value, tangent=0.0):
        self.value = float(value)
        self.tangent = tangent

    def __repr__(self):
        return f"Dual({self.value!r}, {self.tangent!r})"

    @staticmethod
    def _lift(other):
        if isinstance(other, Dual):
            return other
        return Dual(other, 0.0)

    def __add__(self, other):
        other = self._lift(other)
        return Dual(self.value + other.value, self.tangent + other.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        return Dual(self.value - other.value, self.tangent - other.tangent)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __pos__(self):
        return self

    def __mul__(self, other):
        other = self._lift(other)
        return Dual(
            self.value * other.value,
            self.tangent * other.value + self.value * other.tangent,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        if other.value == 0.0:
            raise ZeroDivisionError("dual division by zero")
        value = self.value / other.value
        return Dual(value, (self.tangent - value * other.tangent) / other.value)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, power):
        if isinstance(power, Dual):
            raise TypeError("dual exponents are not supported")
        if power == 0:
            return Dual(1.0, 0.0 * self.tangent)
        return Dual(self.value**power, power * self.value ** (power - 1) * self.tangent)

    def sin(self):
        return Dual(math.sin(self.value), math.cos(self.value) * self.tangent)

    def cos(self):
        return Dual(math.cos(self.value), -math.sin(self.value) * self.tangent)

    def exp(self):
        e = math.exp(self.value)
        return Dual(e, e * self.tangent)


def jacobian(fun, x):
    """Jacobian of ``fun`` at ``x`` by forward-mode differentiation.

    ``fun`` maps a sequence of scalars to a sequence of scalars and must only
    use operations :class:`Dual` supports.  Returns ``(values, J)`` with
    ``J[i, j] = d fun_i / d x_j``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    seeds = np.eye(n)
    args = [Dual(xi, seeds[j]) for j, xi in enumerate(x.ravel())]
    out = fun(args)
    values = np.empty(len(out))
    jac = np.zeros((len(out), n))
    for i, o in enumerate(out):
        if isinstance(o, Dual):
            values[i] = o.value
            jac[i] = o.tangent
        else:
            values[i] = float(o)
    return values, jac
