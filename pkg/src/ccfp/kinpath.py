"""Polygonal waypoint program and per-frame transition-time allocation."""
from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .motionseq import ExpandedPlanLayout, FrameId
from .regions import RegionSet
from .solver import ConicProgram, SolveError, SolverOptions, diagnose, solve

PIN_CHECK_TOL = 1e-7


@dataclass(frozen=True)
class RigidLinkSpec:
    side: str
    foot: FrameId
    knee: FrameId
    length: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("link length must be positive")
        if (self.foot, self.knee) not in ((FrameId.LF, FrameId.LK), (FrameId.RF, FrameId.RK)):
            raise ValueError(f"unsupported link {self.foot}-{self.knee}")


def default_links(left: float, right: float | None = None) -> list[RigidLinkSpec]:
    right = left if right is None else right
    return [RigidLinkSpec("L", FrameId.LF, FrameId.LK, left),
            RigidLinkSpec("R", FrameId.RF, FrameId.RK, right)]


@dataclass
class PolygonalPlan:
    waypoints: dict          # frame -> (P, 3)
    lengths: dict            # frame -> (P-1,) per-transition path length
    transition_times: dict   # frame -> (P-1,) cumulative end time of each transition
    objective: float = 0.0
    status: str = "Optimal"
    solve_time: float = 0.0

    def path_length(self, f) -> float:
        return float(np.sum(self.lengths[f]))


class WaypointMap:
    """Affine map from the stacked free-waypoint vector ``z`` to all waypoints."""

    def __init__(self, layout: ExpandedPlanLayout):
        self.layout = layout
        self.col = {}
        n = 0
        for f in layout.frames:
            for i, x in enumerate(layout.safe[f]):
                if x is None:
                    self.col[(f, i)] = n
                    n += 3
        self.n = n

    def stack(self, blocks):
        """Rows for ``sum(coef * x[f, i])`` per block; returns (M, c) with x = M z + c."""
        rows, cols, vals = [], [], []
        c = np.zeros(3 * len(blocks))
        for b, terms in enumerate(blocks):
            for coef, f, i in terms:
                j = self.col.get((f, i))
                if j is None:
                    c[3 * b:3 * b + 3] += coef * self.layout.safe[f][i]
                else:
                    rows += [3 * b, 3 * b + 1, 3 * b + 2]
                    cols += [j, j + 1, j + 2]
                    vals += [coef] * 3
        M = sp.csr_matrix((vals, (rows, cols)), shape=(3 * len(blocks), self.n))
        return M, c

    def values(self, z) -> dict:
        out = {}
        for f in self.layout.frames:
            pts = []
            for i, x in enumerate(self.layout.safe[f]):
                if x is None:
                    j = self.col[(f, i)]
                    x = z[j:j + 3]
                pts.append(x)
            out[f] = np.array(pts, dtype=float)
        return out


def halfspace_rows(H_blocks, d_blocks, M, c, group: str):
    """Return (G, h) for blockdiag(H) (M z + c) <= d with constant rows removed."""
    H = sp.block_diag(H_blocks, format="csr")
    d = np.concatenate(d_blocks)
    G = (H @ M).tocsr()
    h = d - H @ c
    live = np.diff(G.indptr) > 0
    if np.any(h[~live] < -PIN_CHECK_TOL):
        bad = int(np.argmin(np.where(~live, h, np.inf)))
        raise SolveError(f"pinned waypoints violate {group} constraints by {-h[bad]:.3g}",
                         {group: float(-h[bad])})
    return G[live], h[live]


def build_polygonal(layout: ExpandedPlanLayout, rs: RegionSet, reach: dict, links,
                    barrier_w=(0.0, 0.0, 0.1)):
    wm = WaypointMap(layout)
    frames = layout.frames
    P = layout.n_points
    prog = ConicProgram()
    z = prog.var("z", max(wm.n, 1))

    # path length
    blocks = [[(1.0, f, i + 1), (-1.0, f, i)] for f in frames for i in range(P - 1)]
    D, e = wm.stack(blocks)
    live = np.array([D[3 * b:3 * b + 3].nnz > 0 for b in range(len(blocks))], dtype=bool)
    const_len = float(sum(np.linalg.norm(e[3 * b:3 * b + 3]) for b in np.flatnonzero(~live)))
    if live.any():
        rows = np.repeat(np.flatnonzero(live) * 3, 3) + np.tile([0, 1, 2], live.sum())
        diff = D[rows] @ z + e[rows]
        prog.minimize(cp.sum(cp.norm(cp.reshape(diff, (int(live.sum()), 3), order="C"), axis=1)))

    # region containment of both transition endpoints
    Hs, ds, blocks = [], [], []
    for f in frames:
        for k, r in enumerate(layout.region_seq[f]):
            R = rs.regions[r]
            for i in (k, k + 1):
                Hs.append(R.normals)
                ds.append(R.offsets)
                blocks.append([(1.0, f, i)])
    M, c = wm.stack(blocks)
    G, h = halfspace_rows(Hs, ds, M, c, "regions")
    if G.shape[0]:
        prog.add("regions", [G @ z <= h])

    # reachability relative to the torso
    if FrameId.T in frames:
        Hs, ds, blocks = [], [], []
        for f in frames:
            if f is FrameId.T or f not in reach:
                continue
            R = reach[f]
            for i in range(1, P):
                Hs.append(R.normals)
                ds.append(R.offsets)
                blocks.append([(1.0, f, i), (-1.0, FrameId.T, i)])
        if blocks:
            M, c = wm.stack(blocks)
            G, h = halfspace_rows(Hs, ds, M, c, "reachability")
            if G.shape[0]:
                prog.add("reachability", [G @ z <= h])

    # rigid links
    for link in links:
        if link.foot not in frames or link.knee not in frames:
            continue
        blocks = [[(1.0, link.knee, i), (-1.0, link.foot, i)] for i in range(P)]
        M, c = wm.stack(blocks)
        rows_live = [b for b in range(P) if M[3 * b:3 * b + 3].nnz > 0]
        for b in range(P):
            if b not in rows_live and np.linalg.norm(c[3 * b:3 * b + 3]) > link.length + PIN_CHECK_TOL:
                raise SolveError(f"pinned {link.foot}/{link.knee} waypoints exceed link length",
                                 {"rigid_links": float(np.linalg.norm(c[3 * b:3 * b + 3]) - link.length)})
        if not rows_live:
            continue
        rows = np.concatenate([np.arange(3 * b, 3 * b + 3) for b in rows_live])
        diff = cp.reshape(M[rows] @ z + c[rows], (len(rows_live), 3), order="C")
        prog.add("rigid_links", [cp.norm(diff, axis=1) <= link.length])
        # separation reward at indices 1..P-1
        bar = [b for b in rows_live if b >= 1]
        if bar:
            sel = [rows_live.index(b) for b in bar]
            for k, wk in enumerate(barrier_w):
                if wk > 0:
                    prog.add_log_barrier(diff[sel, k], wk, upper=link.length)
    return prog, wm, const_len


def solve_polygonal(layout: ExpandedPlanLayout, rs: RegionSet, reach: dict, links,
                    barrier_w=(0.0, 0.0, 0.1), opts: SolverOptions | None = None,
                    dump=None) -> PolygonalPlan:
    prog, wm, const_len = build_polygonal(layout, rs, reach, links, barrier_w)
    if dump:
        prog.dump(dump, (opts or SolverOptions()).exp_cone)
    sol = solve(prog, opts)
    if not sol.ok:
        raise SolveError(f"polygonal program {sol.status.value.lower()}", diagnose(prog, opts))
    way = wm.values(sol.values["z"])
    lengths = {f: np.linalg.norm(np.diff(way[f], axis=0), axis=1) for f in layout.frames}
    times = allocate_transition_times(lengths, layout)
    return PolygonalPlan(way, lengths, times, sol.objective_value + const_len,
                         sol.status.value, sol.solve_time)


def allocate_transition_times(lengths: dict, layout: ExpandedPlanLayout,
                              min_dwell: float = 0.1) -> dict:
    """Cumulative end time of each transition, per frame.

    Within a segment of duration T spanning n transitions, dwell times are
    proportional to path length. Dwells shorter than ``min_dwell * T / n``
    are lifted to that floor and the rest rescaled so the segment still sums
    to T; frames that do not move split T uniformly.
    """
    out = {}
    for f in layout.frames:
        L = np.asarray(lengths[f], dtype=float)
        t = np.empty(len(L))
        start = 0.0
        for j, (a, b) in enumerate(layout.spans):
            T = layout.durations[j]
            dwell = segment_dwell(L[a:b], T, min_dwell)
            end = start + T
            t[a:b] = start + np.cumsum(dwell)
            t[b - 1] = end
            start = end
        out[f] = t
    return out


def segment_dwell(L, T: float, min_dwell: float = 0.1) -> np.ndarray:
    L = np.asarray(L, dtype=float)
    n = len(L)
    total = L.sum()
    if total <= 0:
        return np.full(n, T / n)
    dwell = T * L / total
    floor = min_dwell * T / n
    if n > 1 and np.any(dwell < floor):
        dwell = floor + (T - n * floor) * L / total
    return dwell
