"""Stage costs with first derivatives and Gauss-Newton Hessians.

A term returns ``(l, lx, lu, lxx, luu, lux)`` at knot ``k``; terminal
knots are called with ``u=None`` and must only return state parts. Costs
carry no 1/2 factor.
"""
from __future__ import annotations

import numpy as np


class Term:
    name = "term"
    terminal = True
    running = True

    def __call__(self, k, x, u):
        raise NotImplementedError

    def value(self, k, x, u):
        return self(k, x, u)[0]


def _zeros(nx, nu):
    return (0.0, np.zeros(nx), np.zeros(nu), np.zeros((nx, nx)), np.zeros((nu, nu)), np.zeros((nu, nx)))


class Quadratic(Term):
    """(x - xr)' Q (x - xr) + (u - ur)' R (u - ur) with exact derivatives."""

    name = "quadratic"

    def __init__(self, Q=None, R=None, x_ref=None, u_ref=None, terminal=False):
        self.Q = None if Q is None else np.asarray(Q, dtype=float)
        self.R = None if R is None else np.asarray(R, dtype=float)
        self.x_ref = x_ref
        self.u_ref = u_ref
        self.terminal = terminal
        self.running = not terminal

    def _ref(self, ref, k):
        if ref is None:
            return 0.0
        ref = np.asarray(ref, dtype=float)
        return ref[min(k, len(ref) - 1)] if ref.ndim == 2 else ref

    def __call__(self, k, x, u):
        nu = 0 if u is None else len(u)
        l, lx, lu, lxx, luu, lux = _zeros(len(x), nu)
        if self.Q is not None:
            dx = x - self._ref(self.x_ref, k)
            l += dx @ self.Q @ dx
            lx = 2 * self.Q @ dx
            lxx = 2 * self.Q
        if self.R is not None and u is not None:
            du = u - self._ref(self.u_ref, k)
            l += du @ self.R @ du
            lu = 2 * self.R @ du
            luu = 2 * self.R
        return l, lx, lu, lxx, luu, lux


class Residual(Term):
    """weight * ||r||^2 for a residual with Jacobians; Hessian is Gauss-Newton."""

    def residual(self, k, x, u):
        """Return (r, rx, ru); ru may be None."""
        raise NotImplementedError

    weight = 1.0

    def __call__(self, k, x, u):
        nu = 0 if u is None else len(u)
        r, rx, ru = self.residual(k, x, u)
        w = self.weight
        l = w * float(r @ r)
        lx = 2 * w * (rx.T @ r) if rx is not None else np.zeros(len(x))
        lxx = 2 * w * (rx.T @ rx) if rx is not None else np.zeros((len(x), len(x)))
        if ru is not None and u is not None:
            lu = 2 * w * (ru.T @ r)
            luu = 2 * w * (ru.T @ ru)
            lux = 2 * w * (ru.T @ rx) if rx is not None else np.zeros((nu, len(x)))
        else:
            lu, luu, lux = np.zeros(nu), np.zeros((nu, nu)), np.zeros((nu, len(x)))
        return l, lx, lu, lxx, luu, lux


class Tracking(Residual):
    """Track a sampled reference with a model output ``position(x) -> (p, J)``.

    ``ref_vel`` adds velocity tracking through ``x[vel_index]``.
    """

    name = "tracking"

    def __init__(self, model, ref_pos, weight=1.0, ref_vel=None, vel_weight=0.0, vel_index=None):
        self.model = model
        self.ref_pos = np.asarray(ref_pos, dtype=float)
        self.ref_vel = None if ref_vel is None else np.asarray(ref_vel, dtype=float)
        self.weight = 1.0
        self.wp = float(weight)
        self.wv = float(vel_weight)
        self.vel_index = vel_index

    def residual(self, k, x, u):
        p, J = self.model.position(x)
        r = [np.sqrt(self.wp) * (p - self.ref_pos[k])]
        R = [np.sqrt(self.wp) * J]
        if self.ref_vel is not None and self.wv > 0:
            idx = self.vel_index
            E = np.zeros((len(idx), len(x)))
            E[np.arange(len(idx)), idx] = 1.0
            r.append(np.sqrt(self.wv) * (x[idx] - self.ref_vel[k]))
            R.append(np.sqrt(self.wv) * E)
        return np.concatenate(r), np.vstack(R), None


def friction_penalty(lam, n, mu: float, weight: float = 1.0):
    """Soft Coulomb cone: weight * (max(0, |lt| - mu ln)^2 + max(0, -ln)^2).

    Returns ``(value, gradient)`` with respect to ``lam``.
    """
    if mu <= 0:
        raise ValueError("friction coefficient must be positive")
    lam = np.asarray(lam, dtype=float)
    n = np.asarray(n, dtype=float)
    ln = float(n @ lam)
    lt = lam - ln * n
    nt = float(np.linalg.norm(lt))
    val = 0.0
    grad = np.zeros(3)
    cone = nt - mu * ln
    if cone > 0:
        val += cone**2
        dt = lt / nt if nt > 0 else np.zeros(3)
        grad += 2 * cone * (dt - mu * n)
    if ln < 0:
        val += ln**2
        grad += 2 * ln * n
    return weight * val, weight * grad


def _friction_residual(lam, n, mu):
    """Residuals (cone, unilateral) and their 2x3 Jacobian."""
    ln = float(n @ lam)
    lt = lam - ln * n
    nt = float(np.linalg.norm(lt))
    r = np.zeros(2)
    J = np.zeros((2, 3))
    cone = nt - mu * ln
    if cone > 0:
        r[0] = cone
        J[0] = (lt / nt if nt > 0 else 0.0) - mu * n
    if ln < 0:
        r[1] = ln
        J[1] = n
    return r, J


class FrictionCone(Residual):
    """Friction penalty on every active contact of a PointMass-like model."""

    name = "friction"
    terminal = False

    def __init__(self, model, mu: float, weight: float = 1.0):
        self.model = model
        self.mu = float(mu)
        self.weight = float(weight)

    def residual(self, k, x, u):
        nc = self.model.nc
        r = np.zeros(2 * nc)
        ru = np.zeros((2 * nc, 3 * nc))
        for c in self.model.active(k):
            rc, Jc = _friction_residual(u[3 * c:3 * c + 3], self.model.normal(k, c), self.mu)
            r[2 * c:2 * c + 2] = rc
            ru[2 * c:2 * c + 2, 3 * c:3 * c + 3] = Jc
        return r, np.zeros((2 * nc, len(x))), ru


class InactiveContact(Residual):
    """Drive forces of inactive contacts to zero."""

    name = "inactive_contact"
    terminal = False

    def __init__(self, model, weight: float = 1.0):
        self.model = model
        self.weight = float(weight)

    def residual(self, k, x, u):
        act = set(self.model.active(k))
        mask = np.zeros(len(u))
        for c in range(self.model.nc):
            if c not in act:
                mask[3 * c:3 * c + 3] = 1.0
        return mask * u, np.zeros((len(u), len(x))), np.diag(mask)


class StateBox(Residual):
    """Quadratic penalty outside lower <= x <= upper (NaN/inf bounds are ignored)."""

    name = "state_box"

    def __init__(self, lower, upper, weight: float = 1.0):
        self.lo = np.asarray(lower, dtype=float)
        self.hi = np.asarray(upper, dtype=float)
        self.weight = float(weight)

    def residual(self, k, x, u):
        over = np.maximum(0.0, x - self.hi)
        under = np.minimum(0.0, x - self.lo)
        r = over + under
        J = np.diag(((x > self.hi) | (x < self.lo)).astype(float))
        return r, J, None


class ControlBox(Residual):
    name = "control_box"
    terminal = False

    def __init__(self, lower, upper, weight: float = 1.0):
        self.lo = np.asarray(lower, dtype=float)
        self.hi = np.asarray(upper, dtype=float)
        self.weight = float(weight)

    def residual(self, k, x, u):
        r = np.maximum(0.0, u - self.hi) + np.minimum(0.0, u - self.lo)
        J = np.diag(((u > self.hi) | (u < self.lo)).astype(float))
        return r, np.zeros((len(u), len(x))), J
