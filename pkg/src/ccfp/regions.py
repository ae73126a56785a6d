"""Collision-free convex regions grown from seeds, and the region graph.

Regions are grown with an IRIS-style alternation: separating hyperplanes
tangent to the current inscribed ellipsoid, then a maximum-volume inscribed
ellipsoid for the resulting polytope.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .geom import (AxisBox, Ellipsoid, GeometryError, Polytope, chebyshev_center,
                   contains, polytope_vertices)

log = logging.getLogger(__name__)


class RegionError(Exception):
    pass


class SeedInObstacle(RegionError):
    pass


class SeedOutsideWorld(RegionError):
    pass


class NoFreeMidpoint(RegionError):
    pass


class Disconnected(RegionError):
    pass


@dataclass(frozen=True)
class Surface:
    patch: Polytope
    normal: np.ndarray

    def __post_init__(self):
        n = np.array(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("surface normal must have unit norm")
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True, eq=False)
class Scene:
    world_box: AxisBox
    obstacles: tuple[Polytope, ...] = ()
    surfaces: tuple[Surface, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "_vertices", None)

    def obstacle_vertices(self) -> list[np.ndarray]:
        if self._vertices is None:
            object.__setattr__(self, "_vertices", [polytope_vertices(o) for o in self.obstacles])
        return self._vertices

    def in_obstacle(self, x, tol: float = 1e-9) -> int | None:
        for k, obs in enumerate(self.obstacles):
            if contains(obs, x, tol):
                return k
        return None

    def clearance(self, x) -> float:
        """Lower bound on the distance from ``x`` to every obstacle and the world boundary."""
        x = np.asarray(x, dtype=float)
        c = float(np.min(np.concatenate([x - self.world_box.lower, self.world_box.upper - x])))
        for obs in self.obstacles:
            c = min(c, float(np.max(obs.normals @ x - obs.offsets)))
        return c

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.world_box == other.world_box
                and list(self.obstacles) == list(other.obstacles)
                and len(self.surfaces) == len(other.surfaces)
                and all(a.patch == b.patch and np.array_equal(a.normal, b.normal)
                        for a, b in zip(self.surfaces, other.surfaces)))


@dataclass
class IrisOptions:
    growth_tol: float = 0.02
    max_iterations: int = 10
    initial_radius: float = 1e-3
    # final planes are pulled back by this much so regions keep strict clearance
    clearance: float = 1e-5
    min_overlap: float = 0.01
    max_tries: int = 4000
    seed_step: float = 0.02
    seed_clearance: float = 0.01
    max_seed_rounds: int = 2


@dataclass
class IrisResult:
    region: Polytope
    ellipsoid: Ellipsoid
    volumes: list[float]
    iterations: int


class _ClosestPoint:
    """Closest obstacle point to an ellipsoid center in the ellipsoid metric.

    Solved in the unit-ball coordinates ``x = C y + d``; one parametrized
    problem per obstacle so repeated solves skip canonicalization.
    """

    def __init__(self, obstacle: Polytope):
        p = obstacle.n_planes
        self.A = obstacle.normals
        self.b = obstacle.offsets
        self.G = cp.Parameter((p, 3))
        self.h = cp.Parameter(p)
        self.y = cp.Variable(3)
        self.prob = cp.Problem(cp.Minimize(cp.sum_squares(self.y)), [self.G @ self.y <= self.h])

    def __call__(self, C: np.ndarray, d: np.ndarray) -> np.ndarray:
        self.G.value = self.A @ C
        self.h.value = self.b - self.A @ d
        self.prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
        if self.y.value is None:
            raise GeometryError(f"closest-point QP failed: {self.prob.status}")
        return C @ self.y.value + d


def _separating_planes(scene: Scene, solvers, E: Ellipsoid):
    C, d = E.shape, E.center
    Cinv = np.linalg.inv(C)
    verts = scene.obstacle_vertices()
    near = []
    for k, solve in enumerate(solvers):
        x = solve(C, d)
        near.append((float(np.linalg.norm(Cinv @ (x - d))), k, x))
    near.sort(key=lambda t: (t[0], t[1]))
    remaining = {k for _, k, _ in near}
    A, b = [], []
    for dist, k, x in near:
        if k not in remaining:
            continue
        if dist < 1.0 - 1e-6:
            raise GeometryError("obstacle intersects the inscribed ellipsoid")
        a = Cinv.T @ (Cinv @ (x - d))
        a /= np.linalg.norm(a)
        off = float(a @ x)
        A.append(a)
        b.append(off)
        remaining.discard(k)
        for j in list(remaining):
            V = verts[j]
            if V.shape[0] and np.all(V @ a >= off - 1e-12):
                remaining.discard(j)
    return np.array(A).reshape(-1, 3), np.array(b)


def _mvie(P: Polytope) -> Ellipsoid:
    B = cp.Variable((3, 3), PSD=True)
    d = cp.Variable(3)
    A = P.normals
    cons = [cp.norm(A @ B, 2, axis=1) + A @ d <= P.offsets]
    prob = cp.Problem(cp.Maximize(cp.log_det(B)), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        prob.solve(solver=cp.SCS, eps_abs=1e-7, eps_rel=1e-7)
    if B.value is None:
        raise GeometryError(f"inscribed-ellipsoid solve failed: {prob.status}")
    Bv = 0.5 * (B.value + B.value.T)
    return Ellipsoid(d.value, Bv)


def iris(scene: Scene, seed, opts: IrisOptions | None = None) -> IrisResult:
    opts = opts or IrisOptions()
    seed = np.asarray(seed, dtype=float)
    wb = scene.world_box
    if not (np.all(seed > wb.lower) and np.all(seed < wb.upper)):
        raise SeedOutsideWorld(f"seed {seed.tolist()} is not strictly inside the world box")
    k = scene.in_obstacle(seed)
    if k is not None:
        raise SeedInObstacle(f"seed {seed.tolist()} lies inside obstacle {k}")

    world = wb.to_polytope()
    solvers = [_ClosestPoint(o) for o in scene.obstacles]
    r0 = min(opts.initial_radius, 0.5 * max(scene.clearance(seed), 1e-9))
    E = Ellipsoid.ball(seed, r0)
    volumes = [E.volume()]
    region = None
    it = 0
    for it in range(1, opts.max_iterations + 1):
        A, b = _separating_planes(scene, solvers, E)
        P = Polytope(np.vstack([world.normals, A]), np.concatenate([world.offsets, b]))
        shrunk = _pull_back(P, world.n_planes, opts.clearance)
        if not contains(shrunk, seed, 1e-12):
            if region is None:
                raise SeedInObstacle(f"seed {seed.tolist()} is within clearance of an obstacle")
            log.debug("iris: seed would leave the region at iteration %d; stopping", it)
            break
        region = shrunk
        E_new = _mvie(P)
        v_new = E_new.volume()
        # the previous ellipsoid is feasible for P, so a smaller result is solver noise
        if v_new < volumes[-1]:
            E_new, v_new = E, volumes[-1]
        growth = (v_new - volumes[-1]) / volumes[-1]
        E = E_new
        volumes.append(v_new)
        if growth < opts.growth_tol:
            break
    return IrisResult(region, E, volumes, it)


def _pull_back(P: Polytope, n_fixed: int, margin: float) -> Polytope:
    b = np.array(P.offsets)
    b[n_fixed:] -= margin
    return Polytope(P.normals, b)


def grow_region(scene: Scene, seed, opts: IrisOptions | None = None) -> Polytope:
    return iris(scene, seed, opts).region


def _bisector_candidates(start, goal, step: float, count: int):
    mid = 0.5 * (start + goal)
    axis = goal - start
    axis /= np.linalg.norm(axis)
    helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    # concentric square rings on a fixed grid, sorted by distance then angle
    rings = int(np.ceil(np.sqrt(count))) + 1
    pts = []
    for i in range(-rings, rings + 1):
        for j in range(-rings, rings + 1):
            pts.append((i * i + j * j, np.arctan2(j, i) % (2 * np.pi), i, j))
    pts.sort()
    for _, _, i, j in pts[:count]:
        yield mid + step * (i * u + j * v)


def _overlap_radius(P: Polytope, Q: Polytope) -> float:
    R = Polytope(np.vstack([P.normals, Q.normals]), np.concatenate([P.offsets, Q.offsets]))
    return chebyshev_center(R)[1]


def free_midpoint(start, goal, scene: Scene, opts: IrisOptions) -> np.ndarray:
    for x in _bisector_candidates(start, goal, opts.seed_step, opts.max_tries):
        if scene.clearance(x) >= opts.seed_clearance:
            return x
    raise NoFreeMidpoint(f"no free point between {start.tolist()} and {goal.tolist()} "
                         f"after {opts.max_tries} samples")


def default_seeds(start, goal, scene: Scene, opts: IrisOptions | None = None,
                  cache: dict | None = None) -> list[np.ndarray]:
    """Seeds at ``start`` and ``goal`` plus in-between seeds when their regions barely overlap.

    ``cache`` maps seed tuples to grown regions and is filled as a side effect.
    """
    opts = opts or IrisOptions()
    cache = {} if cache is None else cache
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)

    def region(x):
        key = tuple(np.round(x, 12))
        if key not in cache:
            cache[key] = grow_region(scene, x, opts)
        return cache[key]

    if np.allclose(start, goal, atol=1e-12):
        region(start)
        return [start]
    seeds = [start, goal]
    for _ in range(opts.max_seed_rounds):
        gaps = [(i, a, b) for i, (a, b) in enumerate(zip(seeds[:-1], seeds[1:]))
                if _overlap_radius(region(a), region(b)) < opts.min_overlap]
        if not gaps:
            break
        if _connected([region(s) for s in seeds], seeds[0], seeds[-1]) and len(seeds) > 2:
            break
        for i, a, b in reversed(gaps):
            m = free_midpoint(a, b, scene, opts)
            region(m)
            seeds.insert(i + 1, m)
    return seeds


def _connected(regions, start, goal) -> bool:
    try:
        shortest_region_sequence(build_region_graph(regions), start, goal)
        return True
    except Disconnected:
        return False


@dataclass(frozen=True, eq=False)
class RegionSet:
    regions: tuple[Polytope, ...]
    centers: np.ndarray
    radii: np.ndarray
    edges: dict = field(default_factory=dict)

    def neighbors(self, i: int):
        for (a, b), w in self.edges.items():
            if a == i:
                yield b, w
            elif b == i:
                yield a, w

    def containing(self, x, tol: float = 1e-9) -> list[int]:
        return [i for i, R in enumerate(self.regions) if contains(R, x, tol)]

    def best_containing(self, x, tol: float = 1e-9) -> int | None:
        idx = self.containing(x, tol)
        if not idx:
            return None
        return max(idx, key=lambda i: (self.radii[i], -i))

    def __len__(self):
        return len(self.regions)

    def __eq__(self, other):
        if not isinstance(other, RegionSet):
            return NotImplemented
        return (list(self.regions) == list(other.regions)
                and np.array_equal(self.centers, other.centers)
                and np.array_equal(self.radii, other.radii)
                and self.edges == other.edges)


def build_region_graph(regions) -> RegionSet:
    regions = tuple(regions)
    centers, radii = [], []
    for R in regions:
        c, r = chebyshev_center(R)
        centers.append(c)
        radii.append(r)
    centers = np.array(centers).reshape(-1, 3)
    edges = {}
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            if _overlap_radius(regions[i], regions[j]) >= 1e-9:
                edges[(i, j)] = float(np.linalg.norm(centers[i] - centers[j]))
    return RegionSet(regions, centers, np.array(radii), edges)


def shortest_region_sequence(rs: RegionSet, start, goal) -> list[int]:
    """Minimum-weight region path from a region holding ``start`` to one holding ``goal``.

    Ties resolve to the lexicographically smallest index sequence.
    """
    sources = rs.containing(start)
    targets = set(rs.containing(goal))
    if not sources:
        raise Disconnected(f"start {np.asarray(start).tolist()} is not inside any region")
    if not targets:
        raise Disconnected(f"goal {np.asarray(goal).tolist()} is not inside any region")
    adj = {i: [] for i in range(len(rs))}
    for (a, b), w in rs.edges.items():
        adj[a].append((b, w))
        adj[b].append((a, w))
    heap = [(0.0, (s,)) for s in sources]
    heapq.heapify(heap)
    done = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node in targets:
            return list(path)
        for nxt, w in adj[node]:
            if nxt not in done:
                heapq.heappush(heap, (cost + w, path + (nxt,)))
    raise Disconnected("no region sequence connects start and goal")
