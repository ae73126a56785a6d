"""Regularized iLQR/DDP with backtracking line search and soft constraints."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..bezier import reconstruct_reference, time_grid
from .costs import Tracking

log = logging.getLogger(__name__)


class HorizonMismatch(ValueError):
    pass


class Diverged(RuntimeError):
    pass


@dataclass
class TrajOptProblem:
    model: object
    x0: np.ndarray
    steps: list
    durations: list
    running: list = field(default_factory=list)
    terminal: list = field(default_factory=list)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.steps = [int(n) for n in self.steps]
        self.durations = [float(d) for d in self.durations]
        if len(self.steps) != len(self.durations):
            raise ValueError("one step count per segment is required")
        if any(n < 1 for n in self.steps) or any(d <= 0 for d in self.durations):
            raise ValueError("step counts and durations must be positive")
        self._dt = np.concatenate([np.full(n, d / n) for n, d in zip(self.steps, self.durations)])

    @property
    def N(self) -> int:
        return sum(self.steps)

    @property
    def horizon(self) -> float:
        return sum(self.durations)

    def dt(self, k) -> float:
        return float(self._dt[k])

    def times(self) -> np.ndarray:
        return time_grid(self.steps, self.durations)[0]

    def stage_cost(self, k, x, u):
        return sum(t.value(k, x, u) for t in self.running)

    def terminal_cost(self, x):
        return sum(t.value(self.N, x, None) for t in self.terminal)

    def cost(self, xs, us) -> float:
        return float(sum(self.stage_cost(k, xs[k], us[k]) for k in range(self.N))
                     + self.terminal_cost(xs[-1]))

    def term_values(self, xs, us) -> dict:
        out = {}
        for t in self.running:
            out[t.name] = out.get(t.name, 0.0) + sum(t.value(k, xs[k], us[k]) for k in range(self.N))
        for t in self.terminal:
            out[t.name] = out.get(t.name, 0.0) + t.value(self.N, xs[-1], None)
        return out


@dataclass
class Trajectory:
    xs: np.ndarray
    us: np.ndarray
    costs: list = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    iterations: int = 0
    solve_time: float = 0.0

    @property
    def cost(self) -> float:
        return self.costs[-1] if self.costs else np.nan


@dataclass
class DDPOptions:
    max_iter: int = 100
    tol: float = 1e-9
    rtol: float = 1e-10
    reg_init: float = 1e-9
    reg_min: float = 1e-9
    reg_max: float = 1e9
    reg_up: float = 10.0
    reg_down: float = 0.5
    accept_ratio: float = 0.1
    line_search: tuple = tuple(2.0 ** -i for i in range(11))


def rollout(problem: TrajOptProblem, us, x0=None) -> np.ndarray:
    m = problem.model
    xs = np.empty((problem.N + 1, m.nx))
    xs[0] = problem.x0 if x0 is None else x0
    for k in range(problem.N):
        xs[k + 1] = m.step(k, xs[k], us[k], problem.dt(k))
    return xs


def static_initial_guess(problem: TrajOptProblem) -> Trajectory:
    m = problem.model
    us = np.array([m.static_controls(problem.x0, k) for k in range(problem.N)])
    xs = rollout(problem, us)
    return Trajectory(xs, us, [problem.cost(xs, us)])


def _derivatives(problem, xs, us):
    m = problem.model
    N = problem.N
    out = []
    for k in range(N):
        fx, fu = m.derivatives(k, xs[k], us[k], problem.dt(k))
        acc = None
        for t in problem.running:
            parts = t(k, xs[k], us[k])
            acc = list(parts) if acc is None else [a + p for a, p in zip(acc, parts)]
        if acc is None:
            nx, nu = m.nx, m.nu
            acc = [0.0, np.zeros(nx), np.zeros(nu), np.zeros((nx, nx)), np.zeros((nu, nu)),
                   np.zeros((nu, nx))]
        out.append((fx, fu, *acc[1:]))
    Vx = np.zeros(m.nx)
    Vxx = np.zeros((m.nx, m.nx))
    for t in problem.terminal:
        _, lx, _, lxx, _, _ = t(N, xs[-1], None)
        Vx = Vx + lx
        Vxx = Vxx + lxx
    return out, Vx, Vxx


def _backward(derivs, Vx, Vxx, mu):
    N = len(derivs)
    ks, Ks = [None] * N, [None] * N
    dV1 = dV2 = 0.0
    for k in range(N - 1, -1, -1):
        fx, fu, lx, lu, lxx, luu, lux = derivs[k]
        Qx = lx + fx.T @ Vx
        Qu = lu + fu.T @ Vx
        VF = Vxx @ fx
        Qxx = lxx + fx.T @ VF
        Qux = lux + fu.T @ VF
        Quu = luu + fu.T @ Vxx @ fu
        Quu_r = Quu + mu * np.eye(len(Qu))
        try:
            L = np.linalg.cholesky(Quu_r)
        except np.linalg.LinAlgError:
            return None
        kk = -_chol_solve(L, Qu)
        KK = -_chol_solve(L, Qux)
        ks[k], Ks[k] = kk, KK
        dV1 += kk @ Qu
        dV2 += 0.5 * kk @ Quu @ kk
        Vx = Qx + KK.T @ Quu @ kk + KK.T @ Qu + Qux.T @ kk
        Vxx = Qxx + KK.T @ Quu @ KK + KK.T @ Qux + Qux.T @ KK
        Vxx = 0.5 * (Vxx + Vxx.T)
    return ks, Ks, dV1, dV2


def _chol_solve(L, b):
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def _forward(problem, xs, us, ks, Ks, alpha):
    m = problem.model
    N = problem.N
    xn = np.empty_like(xs)
    un = np.empty_like(us)
    xn[0] = xs[0]
    for k in range(N):
        un[k] = us[k] + alpha * ks[k] + Ks[k] @ (xn[k] - xs[k])
        xn[k + 1] = m.step(k, xn[k], un[k], problem.dt(k))
    return xn, un


def solve_ddp(problem: TrajOptProblem, init: Trajectory, opts: DDPOptions | None = None) -> Trajectory:
    opts = opts or DDPOptions()
    t0 = time.perf_counter()
    us = np.array(init.us, dtype=float)
    if us.shape != (problem.N, problem.model.nu):
        raise ValueError(f"initial controls have shape {us.shape}, expected {(problem.N, problem.model.nu)}")
    xs = rollout(problem, us)
    J = problem.cost(xs, us)
    costs = [J]
    mu = opts.reg_init
    converged = diverged = False
    it = 0
    derivs = None
    while it < opts.max_iter:
        it += 1
        if derivs is None:
            derivs = _derivatives(problem, xs, us)
        bw = _backward(*derivs, mu)
        if bw is None:
            mu *= opts.reg_up
            if mu > opts.reg_max:
                diverged = True
                break
            continue
        ks, Ks, dV1, dV2 = bw
        expected_full = -(dV1 + dV2)
        if expected_full < opts.tol + opts.rtol * abs(J):
            converged = True
            break
        accepted = False
        for a in opts.line_search:
            xn, un = _forward(problem, xs, us, ks, Ks, a)
            Jn = problem.cost(xn, un)
            expected = -(a * dV1 + a * a * dV2)
            if np.isfinite(Jn) and Jn < J and (J - Jn) >= opts.accept_ratio * expected:
                accepted = True
                break
        if accepted:
            improvement = J - Jn
            xs, us, J = xn, un, Jn
            costs.append(J)
            derivs = None
            mu = max(mu * opts.reg_down, opts.reg_min)
            log.debug("ddp it %d cost %.6g step %.3g reg %.1e", it, J, a, mu)
            if improvement < opts.tol + opts.rtol * abs(J):
                converged = True
                break
        else:
            mu *= opts.reg_up
            if mu > opts.reg_max:
                diverged = True
                break
    return Trajectory(xs, us, costs, converged, diverged, it, time.perf_counter() - t0)


def build_tracking_costs(splines: dict, problem: TrajOptProblem, frame, weight: float = 1.0,
                         vel_weight: float = 0.0, vel_index=None, project=None, tol: float = 1e-9):
    """Tracking terms on the exact Bezier reference sampled at the problem grid.

    ``project`` maps a 3-D reference into the model output space (for planar
    models); identity by default.
    """
    s = splines[frame]
    if abs(s.duration - problem.horizon) > tol:
        raise HorizonMismatch(f"spline lasts {s.duration:.9g} s but the problem spans "
                              f"{problem.horizon:.9g} s")
    ref = reconstruct_reference({frame: s}, problem.steps, problem.durations)
    pos, vel = ref.positions[frame], ref.velocities[frame]
    if project is not None:
        pos, vel = project(pos), project(vel)
    term = Tracking(problem.model, pos, weight, vel, vel_weight, vel_index)
    return term, ref
