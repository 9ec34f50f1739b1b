"""Second-order forward-mode dual numbers over numpy arrays.

A ``Jet`` carries a value, its gradient with respect to (x1, x2) and, when
``order == 2``, its Hessian. Leading axes of ``grad``/``hess`` index the
derivative directions; trailing axes broadcast like the value.
"""
from __future__ import annotations

import numpy as np


class Jet:
    __slots__ = ("val", "grad", "hess")
    # numpy scalars on the left must defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, val, grad, hess=None):
        self.val = val
        self.grad = grad
        self.hess = hess

    @property
    def order(self) -> int:
        return 1 if self.hess is None else 2

    @classmethod
    def variables(cls, x1, x2, order: int = 2) -> tuple["Jet", "Jet"]:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        x1, x2 = np.broadcast_arrays(x1, x2)
        zeros = np.zeros_like(x1)
        ones = np.ones_like(x1)
        hess = np.zeros((2, 2) + x1.shape) if order == 2 else None
        j1 = cls(x1, np.stack([ones, zeros]), None if hess is None else hess.copy())
        j2 = cls(x2, np.stack([zeros, ones]), None if hess is None else hess.copy())
        return j1, j2

    def constant_like(self, c) -> "Jet":
        val = np.broadcast_to(np.asarray(c, dtype=float), np.shape(self.val)).copy()
        grad = np.zeros_like(self.grad)
        hess = None if self.hess is None else np.zeros_like(self.hess)
        return Jet(val, grad, hess)

    # chain rule for scalar functions: f(a), f'(a), f''(a)
    def _apply(self, f0, f1, f2) -> "Jet":
        grad = f1 * self.grad
        hess = None
        if self.hess is not None:
            hess = f1 * self.hess + f2 * self.grad[:, None] * self.grad[None, :]
        return Jet(f0, grad, hess)

    def __neg__(self) -> "Jet":
        return Jet(-self.val, -self.grad, None if self.hess is None else -self.hess)

    def __add__(self, other) -> "Jet":
        if isinstance(other, Jet):
            hess = None if self.hess is None else self.hess + other.hess
            return Jet(self.val + other.val, self.grad + other.grad, hess)
        return Jet(self.val + other, self.grad, self.hess)

    __radd__ = __add__

    def __sub__(self, other) -> "Jet":
        if isinstance(other, Jet):
            hess = None if self.hess is None else self.hess - other.hess
            return Jet(self.val - other.val, self.grad - other.grad, hess)
        return Jet(self.val - other, self.grad, self.hess)

    def __rsub__(self, other) -> "Jet":
        return (-self) + other

    def __mul__(self, other) -> "Jet":
        if isinstance(other, Jet):
            grad = self.val * other.grad + other.val * self.grad
            hess = None
            if self.hess is not None:
                cross = self.grad[:, None] * other.grad[None, :]
                hess = self.val * other.hess + other.val * self.hess + cross + np.swapaxes(cross, 0, 1)
            return Jet(self.val * other.val, grad, hess)
        return Jet(self.val * other, self.grad * other, None if self.hess is None else self.hess * other)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        inv = 1.0 / self.val
        return self._apply(inv, -inv * inv, 2.0 * inv * inv * inv)

    def __truediv__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other) -> "Jet":
        return self.reciprocal() * other

    def __pow__(self, power) -> "Jet":
        if isinstance(power, Jet):
            return (power * self.log()).exp()
        p = float(power)
        if p == 0.0:
            return self.constant_like(1.0)
        if p == 1.0:
            return self
        if p == 2.0:
            return self * self
        f0 = np.power(self.val, p)
        f1 = p * np.power(self.val, p - 1.0)
        f2 = p * (p - 1.0) * np.power(self.val, p - 2.0) if p != 1.0 else 0.0
        return self._apply(f0, f1, f2)

    def __rpow__(self, base) -> "Jet":
        return (self * np.log(base)).exp()

    def sin(self) -> "Jet":
        s = np.sin(self.val)
        return self._apply(s, np.cos(self.val), -s)

    def cos(self) -> "Jet":
        c = np.cos(self.val)
        return self._apply(c, -np.sin(self.val), -c)

    def exp(self) -> "Jet":
        e = np.exp(self.val)
        return self._apply(e, e, e)

    def log(self) -> "Jet":
        inv = 1.0 / self.val
        return self._apply(np.log(self.val), inv, -inv * inv)

    def sqrt(self) -> "Jet":
        r = np.sqrt(self.val)
        return self._apply(r, 0.5 / r, -0.25 / (r * self.val))


UNARY_FUNCTIONS = {
    "sin": (np.sin, Jet.sin),
    "cos": (np.cos, Jet.cos),
    "exp": (np.exp, Jet.exp),
    "log": (np.log, Jet.log),
    "sqrt": (np.sqrt, Jet.sqrt),
}
