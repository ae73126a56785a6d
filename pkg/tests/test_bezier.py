from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import Delaunay

from ccfp.bezier import (BezierSegment, BezierSpline, DegenerateCurve, SmoothingSpec, bernstein_gram,
                         derivative, derivative_energy, evaluate, reconstruct_reference, solve_smoothing,
                         time_grid)
from ccfp.geom import contains
from ccfp.kinpath import solve_polygonal
from ccfp.motionseq import ExpandedPlanLayout, FrameId
from ccfp.regions import build_region_graph

from conftest import box, corridor_instance

F = FrameId


def bernstein_sum(b, u):
    b = np.asarray(b, dtype=float)
    n = len(b) - 1
    return sum(comb(n, m) * u**m * (1 - u) ** (n - m) * b[m] for m in range(n + 1))


def test_evaluate_examples():
    c = np.array([0.3, -1.0, 2.0])
    assert np.allclose(evaluate(BezierSegment(np.tile(c, (5, 1))), 0.37), c)
    assert np.allclose(evaluate(BezierSegment([[0, 0, 0], [1, 0, 0]]), 0.5), [0.5, 0, 0])
    b = [[0, 0, 0], [1, 0, 0], [1, 1, 0]]
    got = evaluate(BezierSegment(b), 0.5)
    assert np.allclose(got, [0.75, 0.25, 0]) and np.allclose(got, bernstein_sum(b, 0.5))


def test_derivative_examples():
    d = derivative(BezierSegment(np.ones((4, 3))))
    assert d.M == 3 and np.allclose(d.control_points, 0)
    lin = derivative(BezierSegment([[0.0], [1.0]]))
    assert lin.M == 1 and lin.control_points[0, 0] == 1.0
    with pytest.raises(DegenerateCurve):
        derivative(lin)


ctrl = st.integers(2, 8).flatmap(
    lambda M: st.lists(st.lists(st.floats(-5, 5), min_size=3, max_size=3), min_size=M, max_size=M))


@given(ctrl, st.floats(0.2, 4.0), st.floats(0.01, 0.99))
def test_derivative_matches_finite_differences(b, duration, u):
    seg = BezierSegment(np.array(b), duration)
    h = 1e-5
    fd = (evaluate(seg, u + h) - evaluate(seg, u - h)) / (2 * h * duration)
    an = evaluate(derivative(seg), u)
    assert np.allclose(an, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(an).max()))


@given(ctrl, st.floats(0, 1))
def test_evaluate_matches_bernstein_sum(b, u):
    assert np.allclose(evaluate(BezierSegment(np.array(b)), u), bernstein_sum(b, u), atol=1e-9)


@given(ctrl)
def test_endpoints_and_degree_reduction(b):
    seg = BezierSegment(np.array(b))
    assert np.array_equal(evaluate(seg, 0.0), seg.control_points[0])
    assert np.array_equal(evaluate(seg, 1.0), seg.control_points[-1])
    d = seg
    for _ in range(seg.M - 1):
        d = derivative(d)
    assert d.M == 1
    assert np.allclose(evaluate(d, np.linspace(0, 1, 7)), d.control_points[0])


@given(st.integers(0, 10_000))
def test_convex_hull_property(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(6, 3))
    X = evaluate(BezierSegment(b), np.linspace(0, 1, 1000))
    hull = Delaunay(b)
    inside = hull.find_simplex(X, tol=1e-9) >= 0
    assert inside.all()


@pytest.mark.parametrize("n", [0, 1, 3, 5])
def test_gram_matches_quadrature(n):
    x, w = np.polynomial.legendre.leggauss(20)
    u = 0.5 * (x + 1)
    B = np.array([comb(n, m) * u**m * (1 - u) ** (n - m) for m in range(n + 1)])
    G = 0.5 * (B * w) @ B.T
    assert np.allclose(bernstein_gram(n), G, atol=1e-14)


def corridor_plan(seed=3, normal=None):
    lay, regs, s, g, _ = corridor_instance(np.random.default_rng(seed))
    if normal is not None:
        lay = ExpandedPlanLayout(lay.n_points, lay.safe, lay.region_seq, lay.spans, lay.durations,
                                 lay.roles, {(F.T, 0): np.asarray(normal, dtype=float)})
    rs = build_region_graph(regs)
    return lay, rs, solve_polygonal(lay, rs, {}, [])


def test_min_jerk_two_regions_is_contained_and_c2():
    lay, rs, plan = corridor_plan()
    sp = solve_smoothing(plan, lay, rs, {}, [], SmoothingSpec(alpha=(0, 0, 1)))[F.T]
    u = np.linspace(0, 1, 1000)
    for k, seg in enumerate(sp.segments):
        assert contains(rs.regions[lay.region_seq[F.T][k]], evaluate(seg, u), 1e-7).all()
    for order in range(3):
        a = evaluate(_deriv(sp.segments[0], order), 1.0)
        b = evaluate(_deriv(sp.segments[1], order), 0.0)
        assert np.linalg.norm(a - b) <= 1e-8, order


def _deriv(seg, order):
    for _ in range(order):
        seg = derivative(seg)
    return seg


def test_contact_approach_constraints():
    n = np.array([0.0, 0.0, 1.0])
    lay, rs, plan = corridor_plan(normal=n)
    sp = solve_smoothing(plan, lay, rs, {}, [])[F.T]
    last = sp.segments[-1]
    v = evaluate(derivative(last), 1.0)
    assert np.linalg.norm(np.cross(n, v)) <= 1e-8
    b = last.control_points
    assert n @ (b[-2] - b[-3]) <= 1e-9


def test_fixed_frame_is_constant():
    p = np.array([0.5, 0.5, 0.5])
    lay = ExpandedPlanLayout(3, {F.T: [p, p, p]}, {F.T: (0, 0)}, ((0, 1), (1, 2)), (3.0, 3.0),
                             ({F.T: "fixed"},) * 2)
    rs = build_region_graph([box([0] * 3, [1] * 3)])
    plan = solve_polygonal(lay, rs, {}, [])
    sp = solve_smoothing(plan, lay, rs, {}, [])[F.T]
    assert all(np.array_equal(s.control_points, np.tile(p, (6, 1))) for s in sp.segments)
    assert all(derivative_energy(sp, d) == 0 for d in (1, 2, 3))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_raising_a_weight_never_raises_its_energy(seed):
    lay, rs, plan = corridor_plan(seed)
    energies = []
    for a1 in (0.01, 0.1, 1.0):
        sp = solve_smoothing(plan, lay, rs, {}, [], SmoothingSpec(alpha=(a1, 0, 1)))[F.T]
        energies.append(derivative_energy(sp, 1))
    assert all(b <= a * (1 + 1e-6) + 1e-9 for a, b in zip(energies[:-1], energies[1:]))


def test_spline_rejects_bad_knots():
    seg = BezierSegment(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        BezierSpline(F.T, [seg, seg], [0.0, 1.0, 1.0])


def test_time_grid():
    t, seg = time_grid([2, 4], [1.0, 2.0])
    assert t.tolist() == [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
    assert seg.tolist() == [0, 0, 1, 1, 1, 1, 1]


def test_reconstruction_is_exact_across_grids():
    lay, rs, plan = corridor_plan()
    splines = solve_smoothing(plan, lay, rs, {}, [])
    a = reconstruct_reference(splines, [3], [3.0])
    b = reconstruct_reference(splines, [3], [3.0])
    assert np.array_equal(a.positions[F.T], b.positions[F.T])
    c = reconstruct_reference(splines, [6], [3.0])
    assert np.max(np.abs(c.positions[F.T][::2] - a.positions[F.T])) <= 1e-12
    assert np.max(np.abs(c.velocities[F.T][::2] - a.velocities[F.T])) <= 1e-12
