"""Agent dynamics and tracking controllers.

All functions broadcast over a leading agent axis: positions and velocities
are ``(..., m)``, parameter vectors ``(..., k)``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

GRAVITY = 9.81


@dataclass(frozen=True)
class ManipulatorParams:
    """Two-link planar arm. Defaults are the identical arms of the reference network."""

    m1: float = 1.0
    m2: float = 1.0
    l1: float = 0.5
    l2: float = 0.5
    lc1: float = 0.25
    lc2: float = 0.25
    I1: float = 0.1
    I2: float = 0.1
    g: float = GRAVITY

    @property
    def theta(self) -> np.ndarray:
        return np.array(
            [
                self.m1 * self.lc1**2 + self.m2 * (self.l1**2 + self.lc2**2) + self.I1 + self.I2,
                self.m2 * self.l1 * self.lc2,
                self.m2 * self.lc2**2 + self.I2,
                self.m2 * self.lc2,
                self.m1 * self.lc1 + self.m2 * self.l1,
            ]
        )


def mass_matrix(theta, p):
    theta, p = np.asarray(theta, float), np.asarray(p, float)
    c2 = np.cos(p[..., 1])
    m11 = theta[..., 0] + 2 * theta[..., 1] * c2
    m12 = theta[..., 2] + theta[..., 1] * c2
    m22 = np.broadcast_to(theta[..., 2], m11.shape)
    return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)


def mass_matrix_dot(theta, p, v):
    """Time derivative of the inertia matrix along ``p' = v``."""
    theta, p, v = (np.asarray(a, float) for a in (theta, p, v))
    d = -theta[..., 1] * np.sin(p[..., 1]) * v[..., 1]
    zero = np.zeros_like(d)
    return np.stack([np.stack([2 * d, d], -1), np.stack([d, zero], -1)], -2)


def coriolis(theta, p, v):
    theta, p, v = (np.asarray(a, float) for a in (theta, p, v))
    s = theta[..., 1] * np.sin(p[..., 1])
    v1, v2 = v[..., 0], v[..., 1]
    zero = np.zeros_like(s * v1)
    return np.stack(
        [np.stack([-s * v2, -s * (v1 + v2)], -1), np.stack([s * v1, zero], -1)], -2
    )


def gravity(theta, p, g=GRAVITY):
    theta, p = np.asarray(theta, float), np.asarray(p, float)
    c12 = np.cos(p[..., 0] + p[..., 1])
    return np.stack(
        [g * theta[..., 4] * np.cos(p[..., 0]) + g * theta[..., 3] * c12, g * theta[..., 3] * c12], -1
    )


def regressor(p, v, x, xdot, g=GRAVITY):
    """``Y`` with ``Y @ theta = M(p) xdot + C(p, v) x + G(p)``; shape ``(..., 2, 5)``.

    Two gravity entries print a garbled argument in the reference listing;
    the first joint angle is the only reading consistent with the identity.
    """
    p, v, x, xdot = (np.asarray(a, float) for a in (p, v, x, xdot))
    c2, s2 = np.cos(p[..., 1]), np.sin(p[..., 1])
    gc12 = g * np.cos(p[..., 0] + p[..., 1])
    y11 = xdot[..., 0]
    y12 = c2 * (2 * xdot[..., 0] + xdot[..., 1]) - s2 * (
        x[..., 0] * v[..., 1] + x[..., 1] * (v[..., 0] + v[..., 1])
    )
    y13 = xdot[..., 1]
    y15 = g * np.cos(p[..., 0])
    y22 = xdot[..., 0] * c2 + x[..., 0] * v[..., 0] * s2
    y23 = xdot[..., 0] + xdot[..., 1]
    zero = np.zeros_like(y11 + y15)
    row1 = np.stack([y11 + zero, y12 + zero, y13 + zero, gc12 + zero, y15 + zero], -1)
    row2 = np.stack([zero, y22 + zero, y23 + zero, gc12 + zero, zero], -1)
    return np.stack([row1, row2], -2)


def solve2(mat, rhs):
    """Closed-form solve of stacked 2x2 systems."""
    a, b = mat[..., 0, 0], mat[..., 0, 1]
    c, d = mat[..., 1, 0], mat[..., 1, 1]
    det = a * d - b * c
    r1, r2 = rhs[..., 0], rhs[..., 1]
    return np.stack([(d * r1 - b * r2) / det, (a * r2 - c * r1) / det], -1)


class Plant(ABC):
    """Second-order agent ``p' = v, v' = F(p, v, u)`` with its tracking controller.

    ``n_params`` is the size of the adapted parameter vector (0 if none).
    """

    m: int
    n_params: int

    @abstractmethod
    def control(self, p, v, theta_hat, v_r, dv_r, k_e): ...

    @abstractmethod
    def adapt(self, p, v, theta_hat, v_r, dv_r, Pi): ...

    @abstractmethod
    def acceleration(self, p, v, u): ...

    def true_params(self, n: int) -> np.ndarray:
        return np.zeros((n, self.n_params))

    def loop_terms(self, p, v, theta_hat, v_r, dv_r, k_e, Pi):
        """``(u, theta_hat', v')`` for the simulator's derivative."""
        u, dth = self.closed_loop(p, v, theta_hat, v_r, dv_r, k_e, Pi)
        return u, dth, self.acceleration(p, v, u)

    def closed_loop(self, p, v, theta_hat, v_r, dv_r, k_e, Pi):
        """``(u, theta_hat')`` in one call."""
        return self.control(p, v, theta_hat, v_r, dv_r, k_e), self.adapt(p, v, theta_hat, v_r, dv_r, Pi)


class DoubleIntegrator(Plant):
    """``v' = u`` with the exact tracking law ``u = dv_r - k_e e``."""

    n_params = 0

    def __init__(self, m: int = 2):
        self.m = m

    def control(self, p, v, theta_hat, v_r, dv_r, k_e):
        return dv_r - np.asarray(k_e)[..., None] * (v - v_r)

    def adapt(self, p, v, theta_hat, v_r, dv_r, Pi):
        return np.zeros_like(theta_hat)

    def acceleration(self, p, v, u):
        return np.array(u, dtype=float)


class EulerLagrangeArm(Plant):
    """Two-link arms, one ``theta`` row per agent, under certainty-equivalence adaptive control.

    The adaptation runs ``theta_hat' = -Pi Y^T e`` with ``e = v - v_r``; this
    sign makes ``V = (e^T M e + theta_err^T Pi^-1 theta_err)/2`` decrease as
    ``-k_e |e|^2``.
    """

    m = 2
    n_params = 5

    def __init__(self, theta, g: float = GRAVITY):
        self.theta = np.atleast_2d(np.asarray(theta, dtype=float))
        self.g = g

    @classmethod
    def identical(cls, n: int, params: ManipulatorParams = ManipulatorParams()) -> "EulerLagrangeArm":
        return cls(np.tile(params.theta, (n, 1)), params.g)

    def true_params(self, n: int) -> np.ndarray:
        return np.broadcast_to(self.theta, (n, 5)).copy()

    def control(self, p, v, theta_hat, v_r, dv_r, k_e):
        y = regressor(p, v, v_r, dv_r, self.g)
        return np.einsum("...ij,...j->...i", y, theta_hat) - np.asarray(k_e)[..., None] * (v - v_r)

    def adapt(self, p, v, theta_hat, v_r, dv_r, Pi):
        return self._adapt(regressor(p, v, v_r, dv_r, self.g), v - v_r, Pi)

    @staticmethod
    def _adapt(y, e, Pi):
        yte = np.einsum("...ji,...j->...i", y, e)
        Pi = np.asarray(Pi, float)
        if Pi.ndim == 0:
            return -Pi * yte
        return -np.einsum("...ij,...j->...i", Pi, yte)

    def closed_loop(self, p, v, theta_hat, v_r, dv_r, k_e, Pi):
        y = regressor(p, v, v_r, dv_r, self.g)
        e = v - v_r
        u = np.einsum("...ij,...j->...i", y, theta_hat) - np.asarray(k_e)[..., None] * e
        return u, self._adapt(y, e, Pi)

    def loop_terms(self, p, v, theta_hat, v_r, dv_r, k_e, Pi):
        """Fused elementwise form of ``closed_loop`` plus ``acceleration`` for ``(n, 2)`` inputs."""
        if np.ndim(Pi) != 0:
            return super().loop_terms(p, v, theta_hat, v_r, dv_r, k_e, Pi)
        g, th, ht = self.g, self.theta, theta_hat
        p1, p2, v1, v2 = p[:, 0], p[:, 1], v[:, 0], v[:, 1]
        x1, x2, a1, a2 = v_r[:, 0], v_r[:, 1], dv_r[:, 0], dv_r[:, 1]
        c1, c2, s2, c12 = np.cos(p1), np.cos(p2), np.sin(p2), np.cos(p1 + p2)
        gc12, gc1 = g * c12, g * c1
        y12 = c2 * (2 * a1 + a2) - s2 * (x1 * v2 + x2 * (v1 + v2))
        y22 = a1 * c2 + x1 * v1 * s2
        y23 = a1 + a2
        e1, e2 = v1 - x1, v2 - x2
        u = np.empty_like(p)
        u[:, 0] = a1 * ht[:, 0] + y12 * ht[:, 1] + a2 * ht[:, 2] + gc12 * ht[:, 3] + gc1 * ht[:, 4] - k_e * e1
        u[:, 1] = y22 * ht[:, 1] + y23 * ht[:, 2] + gc12 * ht[:, 3] - k_e * e2
        dth = np.empty_like(ht)
        dth[:, 0] = a1 * e1
        dth[:, 1] = y12 * e1 + y22 * e2
        dth[:, 2] = a2 * e1 + y23 * e2
        dth[:, 3] = gc12 * (e1 + e2)
        dth[:, 4] = gc1 * e1
        dth *= -Pi
        s = th[:, 1] * s2
        r1 = u[:, 0] + s * v2 * v1 + s * (v1 + v2) * v2 - g * th[:, 4] * c1 - g * th[:, 3] * c12
        r2 = u[:, 1] - s * v1 * v1 - g * th[:, 3] * c12
        m11 = th[:, 0] + 2 * th[:, 1] * c2
        m12 = th[:, 2] + th[:, 1] * c2
        m22 = th[:, 2]
        det = m11 * m22 - m12 * m12
        acc = np.empty_like(p)
        acc[:, 0] = (m22 * r1 - m12 * r2) / det
        acc[:, 1] = (m11 * r2 - m12 * r1) / det
        return u, dth, acc

    def acceleration(self, p, v, u):
        mm = mass_matrix(self.theta, p)
        rhs = u - np.einsum("...ij,...j->...i", coriolis(self.theta, p, v), v) - gravity(self.theta, p, self.g)
        return solve2(mm, rhs)

    def lyapunov(self, p, e, theta_hat, Pi):
        """``(e^T M e + theta_err^T Pi^-1 theta_err) / 2`` per agent; ``Pi`` is a scalar or ``(..., 5, 5)``."""
        mm = mass_matrix(self.theta, p)
        err = theta_hat - self.theta
        kin = np.einsum("...i,...ij,...j->...", e, mm, e)
        Pi = np.asarray(Pi, float)
        if Pi.ndim == 0:
            par = np.einsum("...i,...i->...", err, err) / Pi
        else:
            par = np.einsum("...i,...i->...", err, np.linalg.solve(Pi, err[..., None])[..., 0])
        return 0.5 * (kin + par)
