import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import least_squares

from ccfp.bezier import BezierSegment, BezierSpline
from ccfp.motionseq import FrameId
from ccfp.trajopt import (GRAVITY, ControlBox, DDPOptions, FrictionCone, HorizonMismatch, NoStaticEquilibrium,
                          PlanarLeg3Link, PointMass, Quadratic, StateBox, Tracking, TrajOptProblem,
                          build_tracking_costs, double_integrator, friction_penalty, rollout, solve_ddp,
                          static_initial_guess)
from ccfp.trajopt.costs import InactiveContact


def riccati_cost(A, B, Q, R, Qf, x0, N):
    """Optimal cost of sum x'Qx + u'Ru + x_N' Qf x_N by the backward Riccati recursion."""
    P = Qf
    for _ in range(N):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
    return float(x0 @ P @ x0)


def lqr_problem(x0, N=50, dt=0.05, dim=1):
    model = double_integrator(dt, dim)
    nx = 2 * dim
    Q, R, Qf = np.eye(nx), 0.1 * np.eye(dim), 10 * np.eye(nx)
    pr = TrajOptProblem(model, x0, [N], [N * dt], [Quadratic(Q, R)], [Quadratic(Qf, terminal=True)])
    return pr, riccati_cost(model.A, model.B, Q, R, Qf, np.asarray(x0, dtype=float), N)


def _traj(pr, us):
    from ccfp.trajopt import Trajectory
    return Trajectory(rollout(pr, us), us)


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.integers(10, 60))
def test_lqr_matches_riccati(x0, N):
    pr, want = lqr_problem(np.array(x0), N, dim=2)
    tr = solve_ddp(pr, _traj(pr, np.zeros((pr.N, 2))))
    assert tr.converged and tr.iterations <= 3
    assert abs(tr.cost - want) <= 1e-6 * max(abs(want), 1e-12) + 1e-12


def test_lqr_restart_from_optimum():
    pr, _ = lqr_problem(np.array([1.0, -0.5]))
    tr = solve_ddp(pr, _traj(pr, np.zeros((pr.N, 1))))
    again = solve_ddp(pr, tr)
    assert again.converged and again.iterations <= 2
    assert abs(again.cost - tr.cost) < 1e-9


def test_rejects_bad_initial_shape():
    pr, _ = lqr_problem(np.array([1.0, 0.0]))
    bad = _traj(pr, np.zeros((pr.N, 1)))
    bad.us = np.zeros((3, 1))
    with pytest.raises(ValueError):
        solve_ddp(pr, bad)


def fd_jacobians(model, k, x, u, dt, h=1e-6):
    fx = np.empty((model.nx, model.nx))
    fu = np.empty((model.nx, model.nu))
    for i in range(model.nx):
        e = np.zeros(model.nx)
        e[i] = h
        fx[:, i] = (model.step(k, x + e, u, dt) - model.step(k, x - e, u, dt)) / (2 * h)
    for i in range(model.nu):
        e = np.zeros(model.nu)
        e[i] = h
        fu[:, i] = (model.step(k, x, u + e, dt) - model.step(k, x, u - e, dt)) / (2 * h)
    return fx, fu


def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


MODELS = {
    "double_integrator": lambda: double_integrator(0.01, 3),
    "point_mass": lambda: PointMass(30.0, ["LF", "RF"]),
    "leg": lambda: PlanarLeg3Link(),
    "leg_accel": lambda: PlanarLeg3Link(base_accel=np.array([[0.5, -1.0]])),
}


@pytest.mark.parametrize("name", MODELS)
def test_model_jacobians(name):
    model = MODELS[name]()
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.uniform(-1.5, 1.5, model.nx)
        u = rng.uniform(-20, 20, model.nu)
        fx, fu = model.derivatives(0, x, u, 0.01)
        gx, gu = fd_jacobians(model, 0, x, u, 0.01)
        assert _rel_err(fx, gx) <= 1e-4 and _rel_err(fu, gu) <= 1e-4


def test_leg_position_jacobian():
    leg = PlanarLeg3Link()
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.uniform(-1.5, 1.5, 6)
        _, J = leg.position(x)
        h = 1e-6
        G = np.column_stack([(leg.position(x + h * e)[0] - leg.position(x - h * e)[0]) / (2 * h)
                             for e in np.eye(6)])
        assert _rel_err(J, G) <= 1e-4


def gravity_torque_oracle(leg, q):
    """tau_i = g * sum over masses beyond joint i of m_p * (x_p - x_joint_i)."""
    pts = np.vstack([[0.0, 0.0], leg.joint_points(q)])
    tau = np.zeros(3)
    for i in range(3):
        for p in range(i, 3):
            tau[i] += GRAVITY * leg.m[p] * (pts[p + 1, 0] - pts[i, 0])
    return tau


def test_leg_static_guess_hanging_and_bent():
    leg = PlanarLeg3Link()
    for q in (np.zeros(3), np.array([0.4, -0.7, 0.3])):
        x0 = np.concatenate([q, np.zeros(3)])
        pr = TrajOptProblem(leg, x0, [10], [0.1])
        init = static_initial_guess(pr)
        assert np.allclose(init.us[0], gravity_torque_oracle(leg, q), atol=1e-10)
        assert np.max(np.abs(init.xs - x0)) < 1e-6


def test_point_mass_static_and_free_fall():
    pm = PointMass(30.0, ["LF"], schedule=[[0]], normals=[[[0, 0, 1]]])
    u = pm.static_controls()
    assert np.allclose(u, [0, 0, 30.0 * GRAVITY])
    assert friction_penalty(u, [0, 0, 1], 0.5)[0] == 0
    with pytest.raises(NoStaticEquilibrium):
        PointMass(30.0, ["LF"], schedule=[[]]).static_controls()


def test_friction_examples():
    assert friction_penalty([0, 0, 10], [0, 0, 1], 0.5)[0] == 0
    assert friction_penalty([6, 0, 10], [0, 0, 1], 0.5, weight=3.0)[0] == pytest.approx(3.0)
    assert friction_penalty([0, 0, -2], [0, 0, 1], 0.5)[0] == pytest.approx(4.0 + 1.0)
    with pytest.raises(ValueError):
        friction_penalty([0, 0, 1], [0, 0, 1], 0.0)


def test_friction_gradient():
    rng = np.random.default_rng(3)
    for _ in range(100):
        lam = rng.normal(size=3) * 10
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        _, g = friction_penalty(lam, n, 0.5)
        h = 1e-6
        fd = np.array([(friction_penalty(lam + h * e, n, 0.5)[0] - friction_penalty(lam - h * e, n, 0.5)[0])
                       / (2 * h) for e in np.eye(3)])
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(fd).max()))


def reachable_by_ik(leg, target):
    res = least_squares(lambda q: leg.joint_points(q)[-1] - target, np.array([0.3, -0.3, 0.0]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return np.linalg.norm(res.fun) < 1e-9


def test_leg_reaches_target():
    leg = PlanarLeg3Link()
    target = np.array([0.25, -0.7])
    assert reachable_by_ik(leg, target)
    N = 100
    ref = np.tile(target, (N + 1, 1))
    pr = TrajOptProblem(leg, np.zeros(6), [N], [1.0])
    pr.running = [Quadratic(R=1e-4 * np.eye(3), u_ref=leg.gravity_torque(np.zeros(3))), Tracking(leg, ref, 10.0)]
    pr.terminal = [Tracking(leg, ref, 1e3, np.zeros((N + 1, 3)), 10.0, [3, 4, 5])]
    tr = solve_ddp(pr, static_initial_guess(pr), DDPOptions(max_iter=100))
    assert np.linalg.norm(leg.position(tr.xs[-1])[0] - target) < 0.01
    assert all(b <= a for a, b in zip(tr.costs[:-1], tr.costs[1:]))
    assert np.max(np.abs(rollout(pr, tr.us) - tr.xs)) <= 1e-10


def test_leg_soft_limits_enter_cost():
    leg = PlanarLeg3Link()
    box = StateBox(-np.ones(6), np.ones(6), 5.0)
    x = np.array([1.5, 0, 0, 0, 0, 0])
    assert box.value(0, x, None) == pytest.approx(5.0 * 0.25)
    cb = ControlBox(-np.ones(3), np.ones(3), 2.0)
    assert cb.value(0, x, np.array([0, 3.0, 0])) == pytest.approx(2.0 * 4.0)
    assert leg.nu == 3


def constant_spline(p, durations):
    knots = np.concatenate([[0.0], np.cumsum(durations)])
    segs = [BezierSegment(np.tile(p, (6, 1)), d) for d in durations]
    return {FrameId.T: BezierSpline(FrameId.T, segs, knots)}


def test_tracking_constant_reference_is_free():
    p = np.array([0.1, 0.2, 0.9])
    pm = PointMass(30.0, ["LF"], schedule=[[0]], normals=[[[0, 0, 1]]])
    steps, durs = [80, 150, 80, 150, 100], [3.0] * 5
    pr = TrajOptProblem(pm, np.concatenate([p, np.zeros(3)]), steps, durs)
    term, ref = build_tracking_costs(constant_spline(p, durs), pr, FrameId.T, 1e3, 10.0, [3, 4, 5])
    pr.running = [term]
    init = static_initial_guess(pr)
    assert pr.cost(init.xs, init.us) < 1e-18
    assert len(ref.times) == sum(steps) + 1


def test_tracking_horizon_mismatch():
    pm = PointMass(30.0, ["LF"], schedule=[[0]])
    pr = TrajOptProblem(pm, np.zeros(6), [10], [2.0])
    with pytest.raises(HorizonMismatch):
        build_tracking_costs(constant_spline(np.zeros(3), [3.0]), pr, FrameId.T)


def sliding_problem(friction_weight):
    """Point mass pushed sideways on one low-friction contact."""
    pm = PointMass(10.0, ["LF"], schedule=[[0]], normals=[[[0, 0, 1]]])
    N = 40
    t = np.linspace(0, 1, N + 1)
    ref = np.column_stack([0.5 * t**2 * 2.0, np.zeros(N + 1), np.full(N + 1, 1.0)])
    pr = TrajOptProblem(pm, np.array([0, 0, 1.0, 0, 0, 0]), [N], [1.0])
    pr.running = [Tracking(pm, ref, 10.0), Quadratic(R=1e-6 * np.eye(3), u_ref=pm.static_controls()),
                  FrictionCone(pm, 0.1, friction_weight), InactiveContact(pm, 1.0)]
    pr.terminal = [Tracking(pm, ref, 10.0)]
    return pr


def test_penalty_weight_sweep_is_monotone():
    values = []
    for w in (1e-3, 1e-2, 1e-1):
        pr = sliding_problem(w)
        tr = solve_ddp(pr, static_initial_guess(pr), DDPOptions(max_iter=200))
        assert tr.converged
        values.append(pr.term_values(tr.xs, tr.us)["friction"] / w)
    assert values[0] > 0
    assert all(b <= a * (1 + 1e-6) for a, b in zip(values[:-1], values[1:]))


def test_problem_validation():
    with pytest.raises(ValueError):
        TrajOptProblem(double_integrator(0.1), np.zeros(2), [10, 5], [1.0])
    with pytest.raises(ValueError):
        TrajOptProblem(double_integrator(0.1), np.zeros(2), [0], [1.0])
