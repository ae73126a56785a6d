"""Convex geometry primitives in H-representation.

A :class:`Polytope` is the set ``{x : normals @ x <= offsets}``. Rows are
normalized to unit length on construction so that plane offsets are signed
distances, which keeps Chebyshev LPs and clearance margins in meters.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

EMPTY_TOL = 1e-9
REDUNDANCY_TOL = 1e-9


class GeometryError(Exception):
    pass


class UnboundedRegion(GeometryError):
    pass


class DegenerateCloud(GeometryError):
    pass


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Polytope:
    normals: np.ndarray
    offsets: np.ndarray
    empty: bool = False

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.normals, dtype=float))
        b = np.asarray(self.offsets, dtype=float).reshape(-1)
        if A.size == 0:
            A = np.zeros((0, 3))
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"normals has {A.shape[0]} rows but offsets has {b.shape[0]}")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms <= 1e-12):
            raise ValueError("polytope normals must be nonzero")
        object.__setattr__(self, "normals", _readonly(A / norms[:, None]))
        object.__setattr__(self, "offsets", _readonly(b / norms))

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def n_planes(self) -> int:
        return self.normals.shape[0]

    @classmethod
    def from_box(cls, lower, upper) -> "Polytope":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        d = lower.shape[0]
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    def contains(self, x, tol: float = 0.0):
        return contains(self, x, tol)

    def translate(self, shift) -> "Polytope":
        return shift_reachable(self, shift)

    def vertices(self) -> np.ndarray:
        return polytope_vertices(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polytope):
            return NotImplemented
        return (self.empty == other.empty
                and self.normals.shape == other.normals.shape
                and np.array_equal(self.normals, other.normals)
                and np.array_equal(self.offsets, other.offsets))

    def __hash__(self):
        return hash((self.normals.tobytes(), self.offsets.tobytes(), self.empty))

    def __repr__(self) -> str:
        flag = ", empty" if self.empty else ""
        return f"Polytope({self.n_planes} planes{flag})"


@dataclass(frozen=True)
class AxisBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _readonly(self.lower)
        hi = _readonly(self.upper)
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have the same shape")
        if np.any(lo > hi):
            raise ValueError(f"box lower {lo} exceeds upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def to_polytope(self) -> Polytope:
        return Polytope.from_box(self.lower, self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def __eq__(self, other):
        if not isinstance(other, AxisBox):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """``{C u + center : ||u|| <= 1}``."""

    center: np.ndarray
    shape: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "center", _readonly(self.center))
        object.__setattr__(self, "shape", _readonly(self.shape))

    @classmethod
    def ball(cls, center, radius: float) -> "Ellipsoid":
        center = np.asarray(center, dtype=float)
        return cls(center, radius * np.eye(center.shape[0]))

    def volume(self) -> float:
        d = self.center.shape[0]
        unit = {1: 2.0, 2: np.pi, 3: 4.0 / 3.0 * np.pi}.get(d)
        if unit is None:
            from scipy.special import gamma
            unit = np.pi ** (d / 2) / gamma(d / 2 + 1)
        return unit * abs(np.linalg.det(self.shape))

    def contains(self, x, tol: float = 0.0) -> bool:
        u = np.linalg.lstsq(self.shape, np.asarray(x, dtype=float) - self.center, rcond=None)[0]
        return bool(np.linalg.norm(u) <= 1.0 + tol)


def contains(P: Polytope, x, tol: float = 0.0):
    """Membership test; ``x`` may be a single point or an ``(n, d)`` array."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x = np.asarray(x, dtype=float)
    if P.n_planes == 0:
        return True if x.ndim == 1 else np.ones(x.shape[0], dtype=bool)
    if x.ndim == 1:
        return bool(np.all(P.normals @ x <= P.offsets + tol))
    return np.all(x @ P.normals.T <= P.offsets + tol, axis=1)


def chebyshev_center(P: Polytope) -> tuple[np.ndarray, float]:
    """Center and radius of the largest inscribed ball; radius < 0 means empty."""
    if P.n_planes == 0:
        raise ValueError("polytope has no planes")
    A, b = P.normals, P.offsets
    d = P.dim
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, np.ones((A.shape[0], 1))])
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * (d + 1), method="highs")
    if res.status == 3:
        raise UnboundedRegion("Chebyshev LP is unbounded; polytope contains arbitrarily large balls")
    if res.status != 0:
        raise GeometryError(f"Chebyshev LP failed: {res.message}")
    return res.x[:d], float(res.x[d])


def is_empty(P: Polytope) -> bool:
    if P.empty:
        return True
    try:
        return chebyshev_center(P)[1] < -EMPTY_TOL
    except UnboundedRegion:
        return False


def is_bounded(P: Polytope) -> bool:
    if P.n_planes == 0:
        return False
    for i in range(P.dim):
        for s in (1.0, -1.0):
            c = np.zeros(P.dim)
            c[i] = -s
            res = linprog(c, A_ub=P.normals, b_ub=P.offsets,
                          bounds=[(None, None)] * P.dim, method="highs")
            if res.status == 3:
                return False
    return True


def remove_redundant(P: Polytope, tol: float = REDUNDANCY_TOL) -> Polytope:
    """Drop planes whose removal leaves the set unchanged (one LP per plane)."""
    if P.empty or P.n_planes <= 1:
        return P
    A, b = P.normals, P.offsets
    # duplicates first, keeping the tightest of each group
    tightest: dict[tuple, int] = {}
    for i in range(P.n_planes):
        key = tuple(np.round(A[i], 12))
        j = tightest.get(key)
        if j is None or b[i] < b[j]:
            tightest[key] = i
    keep = sorted(tightest.values())
    active = list(keep)
    for i in keep:
        others = [j for j in active if j != i]
        if not others:
            continue
        A_ub = np.vstack([A[others], A[i]])
        b_ub = np.concatenate([b[others], [b[i] + 1.0]])
        res = linprog(-A[i], A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * P.dim, method="highs")
        if res.status == 0 and -res.fun <= b[i] + tol:
            active.remove(i)
    return Polytope(A[active], b[active])


def intersect(P: Polytope, Q: Polytope) -> Polytope:
    A = np.vstack([P.normals, Q.normals])
    b = np.concatenate([P.offsets, Q.offsets])
    R = Polytope(A, b)
    if P.empty or Q.empty or is_empty(R):
        return Polytope(A, b, empty=True)
    return remove_redundant(R)


def shift_reachable(P: Polytope, x_T) -> Polytope:
    """Translate a torso-relative region to the torso position ``x_T``."""
    x_T = np.asarray(x_T, dtype=float)
    return Polytope(P.normals, P.offsets + P.normals @ x_T, empty=P.empty)


def clip(P: Polytope, box: AxisBox) -> Polytope:
    return intersect(P, box.to_polytope())


def polytope_vertices(P: Polytope, tol: float = 1e-9) -> np.ndarray:
    """Vertices of a bounded 3-D polytope by enumerating plane triples."""
    A, b = P.normals, P.offsets
    d = P.dim
    pts = []
    for idx in itertools.combinations(range(P.n_planes), d):
        Ai = A[list(idx)]
        if abs(np.linalg.det(Ai)) < 1e-12:
            continue
        x = np.linalg.solve(Ai, b[list(idx)])
        if np.all(A @ x <= b + tol):
            pts.append(x)
    if not pts:
        return np.zeros((0, d))
    pts = np.array(pts)
    # dedupe
    out = []
    for p in pts:
        if not any(np.linalg.norm(p - q) < 1e-9 for q in out):
            out.append(p)
    return np.array(out)


def sample_points(P: Polytope, n: int, rng=None, max_batches: int = 1000) -> np.ndarray:
    """Uniform samples by rejection from the vertex bounding box."""
    rng = np.random.default_rng(rng)
    V = polytope_vertices(P)
    if V.shape[0] == 0:
        raise GeometryError("cannot sample from an empty or unbounded polytope")
    lo, hi = V.min(axis=0), V.max(axis=0)
    out = []
    count = 0
    for _ in range(max_batches):
        X = rng.uniform(lo, hi, size=(max(4 * n, 64), P.dim))
        X = X[contains(P, X)]
        out.append(X)
        count += X.shape[0]
        if count >= n:
            break
    X = np.vstack(out)
    if X.shape[0] < n:
        raise GeometryError("rejection sampling failed; polytope may be lower dimensional")
    return X[:n]


def fit_reachable_polytope(points, p: int) -> Polytope:
    """Bounded polytope with at most ``p`` planes containing every point.

    Hull facet normals are thinned by greedy farthest-point selection; each
    kept normal is pushed out to the maximum projection of the cloud, so
    containment holds by construction.
    """
    if p < 4:
        raise ValueError("need at least 4 planes for a bounded 3-D polytope")
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] < 4:
        raise DegenerateCloud("need at least 4 points")
    centered = X - X.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateCloud("points are coplanar (or collinear)")
    try:
        hull = ConvexHull(X)
    except QhullError as exc:
        raise DegenerateCloud(str(exc)) from exc

    V = X[hull.vertices]
    normals, areas = _unique_facets(hull)
    if normals.shape[0] <= p:
        chosen = list(range(normals.shape[0]))
    else:
        chosen = _farthest_normals(normals, areas, p)
        for _ in range(p):
            trial = Polytope(normals[chosen], (V @ normals[chosen].T).max(axis=0))
            d = _recession_direction(trial)
            if d is None:
                break
            # swap the most crowded representative for the facet facing the leak
            cand = int(np.argmax(normals @ d))
            if cand in chosen:
                break
            G = normals[chosen] @ normals[chosen].T
            np.fill_diagonal(G, -np.inf)
            chosen[int(np.argmax(G.max(axis=1)))] = cand
    H = normals[chosen]
    return Polytope(H, (V @ H.T).max(axis=0))


def _unique_facets(hull: ConvexHull):
    eq = hull.equations
    normals = eq[:, :-1] / np.linalg.norm(eq[:, :-1], axis=1)[:, None]
    pts = hull.points
    areas = np.array([
        0.5 * np.linalg.norm(np.cross(pts[s[1]] - pts[s[0]], pts[s[2]] - pts[s[0]]))
        for s in hull.simplices
    ])
    uniq, tot = [], []
    for n, a in zip(normals, areas):
        for k, u in enumerate(uniq):
            if n @ u > 1.0 - 1e-9:
                tot[k] += a
                break
        else:
            uniq.append(n)
            tot.append(a)
    return np.array(uniq), np.array(tot)


def _farthest_normals(normals: np.ndarray, areas: np.ndarray, p: int) -> list[int]:
    first = int(np.argmax(areas))
    chosen = [first]
    min_dist = 1.0 - normals @ normals[first]
    min_dist[first] = -np.inf
    while len(chosen) < p:
        # ties go to the larger facet
        score = np.round(min_dist, 12)
        best = np.flatnonzero(score == score.max())
        k = int(best[np.argmax(areas[best])])
        chosen.append(k)
        min_dist = np.minimum(min_dist, 1.0 - normals @ normals[k])
        min_dist[chosen] = -np.inf
    return chosen


def _recession_direction(P: Polytope):
    """A direction along which ``P`` is unbounded, or None."""
    for i in range(P.dim):
        for s in (1.0, -1.0):
            c = np.zeros(P.dim)
            c[i] = -s
            res = linprog(c, A_ub=P.normals, b_ub=P.offsets,
                          bounds=[(None, None)] * P.dim, method="highs")
            if res.status == 3:
                # unbounded ray: maximize along axis within the recession cone
                cone = linprog(c, A_ub=P.normals, b_ub=np.zeros(P.n_planes),
                               bounds=[(-1, 1)] * P.dim, method="highs")
                d = cone.x if cone.status == 0 else -c
                return d / np.linalg.norm(d)
    return None
