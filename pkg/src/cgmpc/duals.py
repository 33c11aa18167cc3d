"""First-order forward-mode AD via dual numbers with multi-directional tangents.

A Dual carries a value (float or ndarray) and a tangent array whose trailing
axis indexes seed directions, so one sweep propagates derivatives along k
directions at once. Plant right-hand sides written with the arithmetic ops
and `exp` below work unchanged on floats, batched ndarrays, and Duals.
"""

import numpy as np


def _ex(v):
    # align a value against a tangent that has a trailing direction axis
    return v[..., None] if isinstance(v, np.ndarray) else v


class Dual:
    __slots__ = ("val", "tan")

    def __init__(self, val, tan):
        self.val = val
        self.tan = tan

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.tan + other.tan)
        return Dual(self.val + other, self.tan)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.tan - other.tan)
        return Dual(self.val - other, self.tan)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.tan)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                _ex(self.val) * other.tan + self.tan * _ex(other.val),
            )
        return Dual(self.val * other, self.tan * _ex(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            return Dual(val, (self.tan - _ex(val) * other.tan) * _ex(inv))
        return Dual(self.val / other, self.tan / _ex(other))

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, _ex(-val * inv) * self.tan)

    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.tan!r})"


def exp(v):
    if isinstance(v, Dual):
        e = np.exp(v.val)
        return Dual(e, _ex(e) * v.tan)
    return np.exp(v)


def log(v):
    if isinstance(v, Dual):
        return Dual(np.log(v.val), v.tan / _ex(v.val))
    return np.log(v)


def sqrt(v):
    if isinstance(v, Dual):
        s = np.sqrt(v.val)
        return Dual(s, v.tan / _ex(2.0 * s))
    return np.sqrt(v)


def value(v):
    return v.val if isinstance(v, Dual) else v


def seed(values, width, offset=0):
    """Lift scalars to Duals with unit tangents e_{offset+i} in R^width."""
    out = []
    for i, v in enumerate(values):
        t = np.zeros(width)
        t[offset + i] = 1.0
        out.append(Dual(float(v), t))
    return out


def tangents(duals):
    """Stack the tangent rows of an iterable of Duals into one matrix."""
    return np.stack([d.tan for d in duals], axis=0)
