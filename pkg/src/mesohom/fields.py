"""Closed-form potential fields used by the transport patch tests."""

from __future__ import annotations

import numpy as np


def linear_potential(x, y):
    """``p = 2(2x - 1) + 2(2y - 1)``; uniform flux ``a = (-4, -4)`` for unit conductivity."""
    return 2.0 * (2.0 * np.asarray(x) - 1.0) + 2.0 * (2.0 * np.asarray(y) - 1.0)


class QuadraticPatch:
    """``p = 16 xi eta (1 - xi)(1 - eta)`` on a box, with ``xi, eta`` the
    normalised coordinates. ``p`` vanishes on the boundary; the source that
    produces it is ``q = -lam * laplace(p)``.
    """

    def __init__(self, lo, hi, lam: float = 1.0):
        self.lo = np.asarray(lo, dtype=float)
        self.size = np.asarray(hi, dtype=float) - self.lo
        self.lam = float(lam)

    def _xi_eta(self, x, y):
        return (np.asarray(x) - self.lo[0]) / self.size[0], (np.asarray(y) - self.lo[1]) / self.size[1]

    def potential(self, x, y):
        xi, eta = self._xi_eta(x, y)
        return 16.0 * xi * eta * (1.0 - xi) * (1.0 - eta)

    def source(self, x, y):
        xi, eta = self._xi_eta(x, y)
        Lx, Ly = self.size
        return 32.0 * self.lam * (eta * (1.0 - eta) / Lx**2 + xi * (1.0 - xi) / Ly**2)

    def flux(self, x, y):
        xi, eta = self._xi_eta(x, y)
        Lx, Ly = self.size
        a1 = -16.0 * self.lam / Lx * (1.0 - 2.0 * xi) * eta * (1.0 - eta)
        a2 = -16.0 * self.lam / Ly * xi * (1.0 - xi) * (1.0 - 2.0 * eta)
        return np.stack([a1, a2], axis=-1)

    def flux_box_average(self, lo, hi) -> np.ndarray:
        """Mean of :meth:`flux` over the box ``[lo, hi]``; the field is separable."""
        (xa, ya), (xb, yb) = self._xi_eta(lo[0], lo[1]), self._xi_eta(hi[0], hi[1])

        def lin(a, b):  # mean of 1 - 2s
            return 1.0 - (a + b)

        def quad(a, b):  # mean of s - s^2
            return (b * b / 2 - b**3 / 3 - a * a / 2 + a**3 / 3) / (b - a)

        Lx, Ly = self.size
        return -16.0 * self.lam * np.array([lin(xa, xb) * quad(ya, yb) / Lx, quad(xa, xb) * lin(ya, yb) / Ly])
