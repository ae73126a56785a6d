"""Discrete-time dynamics models with analytic Jacobians.

Every model exposes ``nx``, ``nu``, ``step(k, x, u, dt)`` and
``derivatives(k, x, u, dt) -> (fx, fu)``. Integration is semi-implicit
Euler: velocity first, then position with the new velocity.
"""
from __future__ import annotations

import numpy as np

GRAVITY = 9.81


class NoStaticEquilibrium(RuntimeError):
    pass


class LinearModel:
    """x' = A x + B u, independent of dt."""

    def __init__(self, A, B):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.nx, self.nu = self.B.shape

    def step(self, k, x, u, dt):
        return self.A @ x + self.B @ u

    def derivatives(self, k, x, u, dt):
        return self.A, self.B


def double_integrator(dt: float, dim: int = 1) -> LinearModel:
    I = np.eye(dim)
    Z = np.zeros((dim, dim))
    A = np.block([[I, dt * I], [Z, I]])
    B = np.vstack([0.5 * dt**2 * I, dt * I])
    return LinearModel(A, B)


class PointMass:
    """3-D point mass driven by contact forces.

    State ``(p, v)``; control stacks one 3-D force per contact candidate.
    ``schedule[k]`` lists which candidates are active at knot k; inactive
    forces still enter the dynamics and are driven to zero by a cost term.
    """

    def __init__(self, mass: float, contacts, schedule=None, normals=None, gravity: float = GRAVITY):
        self.mass = float(mass)
        self.contacts = list(contacts)
        self.nc = len(self.contacts)
        self.nx = 6
        self.nu = 3 * self.nc
        self.g = np.array([0.0, 0.0, -gravity])
        self.schedule = schedule
        self.normals = normals

    def total_force(self, u):
        return u.reshape(self.nc, 3).sum(axis=0) if self.nc else np.zeros(3)

    def step(self, k, x, u, dt):
        p, v = x[:3], x[3:]
        a = self.total_force(u) / self.mass + self.g
        v2 = v + dt * a
        return np.concatenate([p + dt * v2, v2])

    def derivatives(self, k, x, u, dt):
        I = np.eye(3)
        fx = np.block([[I, dt * I], [np.zeros((3, 3)), I]])
        S = np.tile(I, (1, self.nc)) / self.mass
        fu = np.vstack([dt * dt * S, dt * S])
        return fx, fu

    def active(self, k) -> list[int]:
        if self.schedule is None:
            return list(range(self.nc))
        return list(self.schedule[min(k, len(self.schedule) - 1)])

    def normal(self, k, c) -> np.ndarray:
        if self.normals is None:
            return np.array([0.0, 0.0, 1.0])
        return np.asarray(self.normals[min(k, len(self.normals) - 1)][c], dtype=float)

    def static_controls(self, x=None, k=0) -> np.ndarray:
        act = self.active(k)
        if not act:
            raise NoStaticEquilibrium("no active contact can carry the weight")
        support = [c for c in act if self.normal(k, c)[2] > 0.5] or act
        u = np.zeros(self.nu)
        share = -self.mass * self.g / len(support)
        for c in support:
            u[3 * c:3 * c + 3] = share
        return u

    def position(self, x):
        return x[:3], np.hstack([np.eye(3), np.zeros((3, 3))])


def _e(phi):
    return np.stack([np.sin(phi), -np.cos(phi)], axis=-1)


def _de(phi):
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


class PlanarLeg3Link:
    """Planar serial chain in the x-z plane with point masses at link ends.

    Joint angles are relative; absolute link angles are cumulative sums and
    zero means hanging straight down. The base may accelerate, which enters
    as an inertial force together with gravity.
    """

    def __init__(self, lengths=(0.4, 0.4, 0.1), masses=(4.0, 2.5, 1.0), damping: float = 0.5,
                 gravity: float = GRAVITY, base_accel=None):
        self.l = np.asarray(lengths, dtype=float)
        self.m = np.asarray(masses, dtype=float)
        self.n = len(self.l)
        self.nx = 2 * self.n
        self.nu = self.n
        self.b = float(damping)
        self.gravity = gravity
        self.base_accel = None if base_accel is None else np.asarray(base_accel, dtype=float)
        self.S = np.tril(np.ones((self.n, self.n)))
        tail = np.cumsum(self.m[::-1])[::-1]          # sum of masses at or beyond link j
        self.W = np.outer(self.l, self.l) * tail[np.maximum.outer(np.arange(self.n), np.arange(self.n))]
        self.c = self.l * tail

    def gamma(self, k):
        g = np.array([0.0, self.gravity])
        if self.base_accel is not None:
            g = g + self.base_accel[min(k, len(self.base_accel) - 1)]
        return g

    def _terms(self, k, q, v):
        phi = self.S @ q
        w = self.S @ v
        dphi = phi[:, None] - phi[None, :]
        C, Sn = np.cos(dphi), np.sin(dphi)
        WC = self.W * C
        M = self.S.T @ WC @ self.S
        h = self.S.T @ ((self.W * Sn) @ (w**2))
        G = self.S.T @ (self.c * (_de(phi) @ self.gamma(k)))
        return phi, w, C, Sn, M, h, G

    def mass_matrix(self, q):
        return self._terms(0, q, np.zeros(self.n))[4]

    def gravity_torque(self, q, k=0):
        return self._terms(k, q, np.zeros(self.n))[6]

    def accel(self, k, x, u):
        q, v = x[:self.n], x[self.n:]
        _, _, _, _, M, h, G = self._terms(k, q, v)
        return np.linalg.solve(M, u - h - G - self.b * v)

    def step(self, k, x, u, dt):
        n = self.n
        a = self.accel(k, x, u)
        v2 = x[n:] + dt * a
        return np.concatenate([x[:n] + dt * v2, v2])

    def derivatives(self, k, x, u, dt):
        n = self.n
        q, v = x[:n], x[n:]
        phi, w, C, Sn, M, h, G = self._terms(k, q, v)
        Minv = np.linalg.inv(M)
        a = Minv @ (u - h - G - self.b * v)
        W = self.W
        # derivatives with respect to absolute angles, then chain through S
        # dM/dphi_p = S^T (dWC/dphi_p) S, with dWC_jk/dphi_p = -W_jk sin(phi_j - phi_k)(d_jp - d_kp)
        WS = W * Sn
        Sa = self.S @ a
        # (dM/dphi_p) a = S^T [ -(WS)[:, p] * Sa[p] ... ] assembled columnwise
        dMa = np.empty((n, n))
        for p in range(n):
            col = np.zeros(n)
            col[p] -= WS[p] @ Sa
            col += WS[:, p] * Sa[p]
            dMa[:, p] = self.S.T @ col
        w2 = w**2
        WCm = W * C
        dh = np.empty((n, n))
        for p in range(n):
            col = np.zeros(n)
            col[p] += WCm[p] @ w2
            col -= WCm[:, p] * w2[p]
            dh[:, p] = self.S.T @ col
        dG = self.S.T @ np.diag(-self.c * (_e(phi) @ self.gamma(k)))
        a_q = -Minv @ (dMa + dh + dG) @ self.S
        dh_dw = 2.0 * WS * w[None, :]
        a_v = -Minv @ (self.S.T @ dh_dw @ self.S + self.b * np.eye(n))
        I = np.eye(n)
        fx = np.block([[I + dt * dt * a_q, dt * I + dt * dt * a_v], [dt * a_q, I + dt * a_v]])
        fu = np.vstack([dt * dt * Minv, dt * Minv])
        return fx, fu

    def joint_points(self, q):
        phi = self.S @ np.asarray(q, dtype=float)
        return np.cumsum(self.l[:, None] * _e(phi), axis=0)

    def position(self, x):
        """End-point position in the plane and its Jacobian with respect to the state."""
        q = x[:self.n]
        phi = self.S @ q
        p = (self.l[:, None] * _e(phi)).sum(axis=0)
        J = (self.l[:, None] * _de(phi)).T @ self.S
        return p, np.hstack([J, np.zeros((2, self.n))])

    def static_controls(self, x, k=0) -> np.ndarray:
        return self.gravity_torque(x[:self.n], k)
