"""Bezier segments, piecewise splines, and the smoothing program.

The smoothing program works on control points. Every linear equality
(pinning, C0..C2 knot continuity, tangential-velocity cancellation at
contacts) is eliminated per frame through an affine nullspace
parameterization, so the equalities hold to machine precision regardless
of solver tolerance. What remains is a convex QP with linear and SOC rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import cvxpy as cp
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .kinpath import PIN_CHECK_TOL, PolygonalPlan
from .motionseq import ExpandedPlanLayout, FrameId
from .regions import RegionSet
from .solver import ConicProgram, SolveError, SolverOptions, diagnose, solve


class DegenerateCurve(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BezierSegment:
    control_points: np.ndarray
    duration: float = 1.0

    def __post_init__(self):
        b = np.array(self.control_points, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        b.setflags(write=False)
        object.__setattr__(self, "control_points", b)
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")

    @property
    def M(self) -> int:
        return len(self.control_points)

    def evaluate(self, u):
        return evaluate(self, u)

    def derivative(self) -> "BezierSegment":
        return derivative(self)

    def __eq__(self, other):
        if not isinstance(other, BezierSegment):
            return NotImplemented
        return self.duration == other.duration and np.array_equal(self.control_points,
                                                                  other.control_points)


def evaluate(seg: BezierSegment, u):
    """de Casteljau evaluation; ``u`` may be a scalar or a 1-D array."""
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))[:, None, None]
    pts = np.broadcast_to(seg.control_points, (u.shape[0],) + seg.control_points.shape).copy()
    for r in range(seg.M - 1, 0, -1):
        pts = (1.0 - u) * pts[:, :r] + u * pts[:, 1:r + 1]
    out = pts[:, 0]
    return out[0] if scalar else out


def derivative(seg: BezierSegment) -> BezierSegment:
    M = seg.M
    if M < 2:
        raise DegenerateCurve("a single control point has no derivative curve")
    b = seg.control_points
    return BezierSegment((M - 1) * (b[1:] - b[:-1]) / seg.duration, seg.duration)


def bernstein_gram(n: int) -> np.ndarray:
    """Integral over [0, 1] of products of degree-n Bernstein polynomials."""
    G = np.empty((n + 1, n + 1))
    for i in range(n + 1):
        for j in range(n + 1):
            G[i, j] = comb(n, i) * comb(n, j) / (comb(2 * n, i + j) * (2 * n + 1))
    return G


def difference_matrix(M: int, duration: float, order: int) -> np.ndarray:
    """Scalar map from M control points to those of the ``order``-th derivative."""
    D = np.eye(M)
    for r in range(order):
        m = M - r
        step = np.zeros((m - 1, m))
        idx = np.arange(m - 1)
        step[idx, idx] = -1.0
        step[idx, idx + 1] = 1.0
        D = (m - 1) / duration * step @ D
    return D


@dataclass(frozen=True, eq=False)
class BezierSpline:
    frame: FrameId
    segments: tuple
    knot_times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        k = np.array(self.knot_times, dtype=float)
        if len(k) != len(self.segments) + 1 or np.any(np.diff(k) <= 0):
            raise ValueError("knot times must be strictly increasing with one more entry than segments")
        k.setflags(write=False)
        object.__setattr__(self, "knot_times", k)

    @property
    def duration(self) -> float:
        return float(self.knot_times[-1] - self.knot_times[0])

    def locate(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.searchsorted(self.knot_times, t, side="right") - 1
        k = np.clip(k, 0, len(self.segments) - 1)
        u = (t - self.knot_times[k]) / (self.knot_times[k + 1] - self.knot_times[k])
        return k, np.clip(u, 0.0, 1.0)

    def evaluate(self, t, order: int = 0):
        scalar = np.ndim(t) == 0
        k, u = self.locate(t)
        out = np.empty((len(k), self.segments[0].control_points.shape[1]))
        for s in np.unique(k):
            seg = self.segments[s]
            for _ in range(order):
                seg = derivative(seg)
            mask = k == s
            out[mask] = evaluate(seg, u[mask])
        return out[0] if scalar else out

    def __eq__(self, other):
        if not isinstance(other, BezierSpline):
            return NotImplemented
        return (self.frame == other.frame and self.segments == other.segments
                and np.array_equal(self.knot_times, other.knot_times))


@dataclass
class SmoothingSpec:
    alpha: tuple = (0.0, 0.0, 1.0)
    M: int = 6
    approach_weight: float = 1.0
    continuity: int = 2

    def __post_init__(self):
        if any(a < 0 for a in self.alpha):
            raise ValueError("derivative weights must be nonnegative")
        if len(self.alpha) > self.M - 1:
            raise ValueError("derivative order exceeds curve degree")
        if self.continuity > self.M - 2:
            raise ValueError("not enough control points for the requested continuity")

    @property
    def D(self) -> int:
        return len(self.alpha)


@dataclass
class _FrameVars:
    T: np.ndarray        # b = T y + t
    t: np.ndarray
    offset: int          # column of y inside the global variable
    durations: np.ndarray
    knots: np.ndarray


def _frame_equalities(f, layout: ExpandedPlanLayout, durations, spec: SmoothingSpec):
    M = spec.M
    S = layout.n_points - 1
    nb = 3 * S * M

    def ix(k, m):
        return 3 * (k * M + m)

    pins = {}

    def pin(k, m, x):
        for a in range(3):
            pins[ix(k, m) + a] = float(x[a])

    safe = layout.safe[f]
    for k in range(S):
        j = layout.segment_of_transition(k)
        if layout.roles and layout.roles[j].get(f) == "fixed":
            for m in range(M):
                pin(k, m, safe[k + 1])
        else:
            if safe[k] is not None:
                pin(k, 0, safe[k])
            if safe[k + 1] is not None:
                pin(k, M - 1, safe[k + 1])

    rows = []
    for k in range(S - 1):
        for order in range(spec.continuity + 1):
            left = difference_matrix(M, durations[k], order)[-1]
            right = difference_matrix(M, durations[k + 1], order)[0]
            for a in range(3):
                r = np.zeros(nb)
                r[ix(k, 0) + a:ix(k, M - 1) + a + 1:3] = left
                r[ix(k + 1, 0) + a:ix(k + 1, M - 1) + a + 1:3] -= right
                rows.append(r)
    for j, (a, b) in enumerate(layout.spans):
        n = layout.normals.get((f, j))
        if n is None:
            continue
        k = b - 1
        X = np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])  # X v = n x v
        for row in X:
            r = np.zeros(nb)
            r[ix(k, M - 1):ix(k, M - 1) + 3] = row
            r[ix(k, M - 2):ix(k, M - 2) + 3] = -row
            rows.append(r)
    E = np.array(rows) if rows else np.zeros((0, nb))
    return nb, pins, E


def _parameterize(nb, pins, E, tag):
    pin_idx = np.array(sorted(pins), dtype=int)
    free_idx = np.setdiff1d(np.arange(nb), pin_idx)
    v = np.array([pins[i] for i in pin_idx])
    t = np.zeros(nb)
    t[pin_idx] = v
    if E.shape[0] == 0 or free_idx.size == 0:
        if E.shape[0] and np.max(np.abs(E @ t)) > 1e-9:
            raise SolveError(f"{tag}: pinned control points violate continuity", {"continuity": True})
        T = np.zeros((nb, free_idx.size))
        T[free_idx, np.arange(free_idx.size)] = 1.0
        return T, t
    Ef = E[:, free_idx]
    rhs = -E[:, pin_idx] @ v if pin_idx.size else np.zeros(E.shape[0])
    y0, *_ = np.linalg.lstsq(Ef, rhs, rcond=None)
    res = np.max(np.abs(Ef @ y0 - rhs)) if rhs.size else 0.0
    if res > 1e-9 * max(1.0, np.max(np.abs(rhs))):
        raise SolveError(f"{tag}: pinning and continuity cannot both hold (residual {res:.3g})",
                         {"continuity": float(res)})
    N = sla.null_space(Ef, rcond=1e-12)
    T = np.zeros((nb, N.shape[1]))
    T[free_idx] = N
    t[free_idx] = y0
    return T, t


def _cost_rows(S, durations, spec: SmoothingSpec):
    M = spec.M
    blocks = []
    for d, a in enumerate(spec.alpha, start=1):
        if a == 0:
            continue
        L = np.linalg.cholesky(bernstein_gram(M - 1 - d))
        per = []
        for k in range(S):
            Dd = difference_matrix(M, durations[k], d)
            W = np.sqrt(a * durations[k]) * L.T @ Dd
            per.append(np.kron(W, np.eye(3)))
        blocks.append(sla.block_diag(*per))
    if not blocks:
        return np.zeros((0, 3 * S * M))
    return np.vstack(blocks)


def solve_smoothing(plan: PolygonalPlan, layout: ExpandedPlanLayout, rs: RegionSet, reach: dict,
                    links, spec: SmoothingSpec | None = None,
                    opts: SolverOptions | None = None, dump=None, info: dict | None = None) -> dict:
    spec = spec or SmoothingSpec()
    M = spec.M
    S = layout.n_points - 1
    frames = layout.frames
    fv = {}
    offset = 0
    for f in frames:
        knots = np.concatenate([[0.0], plan.transition_times[f]])
        dur = np.diff(knots)
        nb, pins, E = _frame_equalities(f, layout, dur, spec)
        T, t = _parameterize(nb, pins, E, f"frame {f}")
        fv[f] = _FrameVars(T, t, offset, dur, knots)
        offset += T.shape[1]
    ny = offset
    nb = 3 * S * M
    col0 = {f: i * nb for i, f in enumerate(frames)}
    Tg = sp.block_diag([sp.csr_matrix(fv[f].T) if fv[f].T.shape[1] else
                        sp.csr_matrix((nb, 0)) for f in frames], format="csr")
    tg = np.concatenate([fv[f].t for f in frames])

    prog = ConicProgram()
    y = prog.var("y", max(ny, 1))
    if ny == 0:
        Tg = sp.csr_matrix((Tg.shape[0], 1))

    F = sp.block_diag([sp.csr_matrix(_cost_rows(S, fv[f].durations, spec)) for f in frames],
                      format="csr")
    Fy, fc = (F @ Tg).tocsr(), F @ tg
    if F.shape[0]:
        prog.minimize(cp.sum_squares(Fy @ y + fc))

    def add_rows(group, G_b, h):
        G_b = sp.csr_matrix(G_b)
        G = (G_b @ Tg).tocsr()
        G.eliminate_zeros()
        h = h - G_b @ tg
        live = np.diff(G.indptr) > 0
        if np.any(h[~live] < -PIN_CHECK_TOL):
            worst = float(-np.min(h[~live]))
            raise SolveError(f"pinned control points violate {group} constraints by {worst:.3g}",
                             {group: worst})
        if live.any():
            prog.add(group, [G[live] @ y <= h[live]])

    def cp_index(f, k, m):
        return col0[f] + 3 * (k * M + m)

    # region containment of every control point
    rows, cols, vals, h = [], [], [], []
    r0 = 0
    for f in frames:
        for k, r in enumerate(layout.region_seq[f]):
            R = rs.regions[r]
            H, d = R.normals, R.offsets
            for m in range(M):
                c = cp_index(f, k, m)
                for q in range(len(d)):
                    for a in range(3):
                        rows.append(r0 + q)
                        cols.append(c + a)
                        vals.append(H[q, a])
                h.extend(d)
                r0 += len(d)
    add_rows("regions", sp.csr_matrix((vals, (rows, cols)), shape=(r0, Tg.shape[0])), np.array(h))

    # reachability, matched control-point index
    if FrameId.T in frames:
        rows, cols, vals, h = [], [], [], []
        r0 = 0
        for f in frames:
            if f is FrameId.T or f not in reach:
                continue
            H, d = reach[f].normals, reach[f].offsets
            for k in range(S):
                for m in range(M):
                    cf, ct = cp_index(f, k, m), cp_index(FrameId.T, k, m)
                    for q in range(len(d)):
                        for a in range(3):
                            rows += [r0 + q, r0 + q]
                            cols += [cf + a, ct + a]
                            vals += [H[q, a], -H[q, a]]
                    h.extend(d)
                    r0 += len(d)
        if r0:
            add_rows("reachability", sp.csr_matrix((vals, (rows, cols)), shape=(r0, Tg.shape[0])),
                     np.array(h))

    # slow normal approach on the velocity curve
    if spec.approach_weight != 0 and layout.normals:
        rows, cols, vals = [], [], []
        r0 = 0
        for (f, j), n in layout.normals.items():
            if f not in frames:
                continue
            k = layout.spans[j][1] - 1
            for a in range(3):
                rows += [r0, r0]
                cols += [cp_index(f, k, M - 2) + a, cp_index(f, k, M - 3) + a]
                vals += [spec.approach_weight * n[a], -spec.approach_weight * n[a]]
            r0 += 1
        if r0:
            add_rows("approach", sp.csr_matrix((vals, (rows, cols)), shape=(r0, Tg.shape[0])),
                     np.zeros(r0))

    # rigid links on first control points and the final curve point
    for link in links:
        if link.foot not in frames or link.knee not in frames:
            continue
        picks = [(k, 0) for k in range(S)] + [(S - 1, M - 1)]
        rows, cols, vals = [], [], []
        for b, (k, m) in enumerate(picks):
            for a in range(3):
                rows += [3 * b + a, 3 * b + a]
                cols += [cp_index(link.knee, k, m) + a, cp_index(link.foot, k, m) + a]
                vals += [1.0, -1.0]
        A = sp.csr_matrix((vals, (rows, cols)), shape=(3 * len(picks), Tg.shape[0]))
        Ay = (A @ Tg).tocsr()
        Ay.eliminate_zeros()
        ac = A @ tg
        live = [b for b in range(len(picks)) if Ay[3 * b:3 * b + 3].nnz]
        for b in range(len(picks)):
            if b not in live and np.linalg.norm(ac[3 * b:3 * b + 3]) > link.length + PIN_CHECK_TOL:
                raise SolveError("pinned control points exceed link length", {"rigid_links": True})
        if live:
            sel = np.concatenate([np.arange(3 * b, 3 * b + 3) for b in live])
            expr = cp.reshape(Ay[sel] @ y + ac[sel], (len(live), 3), order="C")
            prog.add("rigid_links", [cp.norm(expr, axis=1) <= link.length])

    if dump:
        prog.dump(dump, (opts or SolverOptions()).exp_cone)
    sol = solve(prog, opts)
    if not sol.ok:
        raise SolveError(f"smoothing program {sol.status.value.lower()}", diagnose(prog, opts))
    yv = sol.values["y"][:ny] if ny else np.zeros(0)
    out = {}
    for f in frames:
        v = fv[f]
        yf = yv[v.offset:v.offset + v.T.shape[1]]
        b = (v.T @ yf + v.t).reshape(S, M, 3)
        segs = [BezierSegment(b[k], v.durations[k]) for k in range(S)]
        out[f] = BezierSpline(f, segs, v.knots)
    if info is not None:
        info.update(status=sol.status.value, objective=sol.objective_value,
                    solve_time=sol.solve_time, backend=sol.backend)
    return out


def derivative_energy(spline: BezierSpline, order: int) -> float:
    total = 0.0
    for seg in spline.segments:
        s = seg
        for _ in range(order):
            s = derivative(s)
        G = bernstein_gram(s.M - 1)
        c = s.control_points
        total += seg.duration * float(np.einsum("ia,ij,ja->", c, G, c))
    return total


@dataclass
class Reference:
    times: np.ndarray
    segment: np.ndarray
    positions: dict = field(default_factory=dict)
    velocities: dict = field(default_factory=dict)

    def at(self, f):
        return self.positions[f], self.velocities[f]


def time_grid(steps, durations) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment uniform knots plus the final time; returns (times, segment id)."""
    steps = [int(n) for n in steps]
    if len(steps) != len(durations):
        raise ValueError("one step count per segment is required")
    if sum(steps) < 2 or min(steps) < 1:
        raise ValueError("need at least one step per segment and two in total")
    times, seg = [], []
    start = 0.0
    for j, (n, T) in enumerate(zip(steps, durations)):
        times.extend(start + T * k / n for k in range(n))
        seg.extend([j] * n)
        start += T
    times.append(start)
    seg.append(len(steps) - 1)
    return np.array(times), np.array(seg)


def reconstruct_reference(splines: dict, steps, durations) -> Reference:
    times, seg = time_grid(steps, durations)
    ref = Reference(times, seg)
    for f, s in splines.items():
        ref.positions[f] = s.evaluate(times)
        ref.velocities[f] = s.evaluate(times, order=1)
    return ref
