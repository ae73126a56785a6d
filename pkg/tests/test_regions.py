import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccfp.geom import AxisBox, chebyshev_center, contains, intersect, sample_points
from ccfp.regions import (Disconnected, IrisOptions, Scene, SeedInObstacle, SeedOutsideWorld,
                          build_region_graph, default_seeds, grow_region, iris,
                          shortest_region_sequence)

from conftest import box

WORLD = AxisBox(np.zeros(3), np.array([4.0, 1.0, 1.0]))
OBST = box([2, 0, 0], [3, 1, 1])


def test_empty_scene_gives_world_box(empty_scene):
    R = grow_region(empty_scene, [1, 0.5, 0.5])
    V = R.vertices()
    assert np.allclose(V.min(axis=0), 0) and np.allclose(V.max(axis=0), [4, 1, 1])


def test_region_excludes_obstacle(rng):
    scene = Scene(WORLD, [OBST], [])
    seed = np.array([1, 0.5, 0.5])
    R = grow_region(scene, seed)
    assert contains(R, seed, 1e-9)
    X = rng.uniform([2, 0, 0], [3, 1, 1], (1000, 3))
    assert not contains(R, X, 0.0).any()


def test_seed_errors():
    scene = Scene(WORLD, [OBST], [])
    with pytest.raises(SeedInObstacle):
        grow_region(scene, [2.5, 0.5, 0.5])
    with pytest.raises(SeedOutsideWorld):
        grow_region(scene, [5, 0.5, 0.5])


def test_ellipsoid_volume_monotone():
    scene = Scene(AxisBox(np.zeros(3), np.array([4.0, 2.0, 2.0])),
                  [box([1.5, 0.8, 0.0], [2.0, 1.2, 1.5]), box([3.0, 0.0, 0.2], [3.5, 0.5, 0.6])], [])
    res = iris(scene, [0.5, 1.0, 1.0], IrisOptions(growth_tol=1e-4, max_iterations=10))
    assert all(b >= a for a, b in zip(res.volumes[:-1], res.volumes[1:]))


def test_default_seeds_free_line(empty_scene):
    seeds = default_seeds([0.5, 0.5, 0.5], [3.5, 0.5, 0.5], empty_scene)
    assert len(seeds) == 2


def test_default_seeds_same_point(empty_scene):
    assert len(default_seeds([1, 0.5, 0.5], [1, 0.5, 0.5], empty_scene)) == 1


def test_default_seeds_wall_with_gap():
    wall = box([1.9, 0, 0], [2.1, 1, 1.0])
    scene = Scene(AxisBox(np.zeros(3), np.array([4.0, 1.0, 1.6])), [wall], [])
    start, goal = np.array([1.0, 0.5, 0.5]), np.array([3.0, 0.5, 0.5])
    seeds = default_seeds(start, goal, scene)
    assert len(seeds) == 3
    gap = seeds[1]
    assert 1.9 <= gap[0] <= 2.1 and gap[2] > 1.0
    rs = build_region_graph([grow_region(scene, s) for s in seeds])
    assert shortest_region_sequence(rs, start, goal) == [0, 1, 2]


def test_graph_chain_and_disjoint():
    chain = [box([0, 0, 0], [1.2, 1, 1]), box([1, 0, 0], [2.2, 1, 1]), box([2, 0, 0], [3, 1, 1])]
    rs = build_region_graph(chain)
    assert set(rs.edges) == {(0, 1), (1, 2)}
    assert shortest_region_sequence(rs, [0.5, 0.5, 0.5], [2.5, 0.5, 0.5]) == [0, 1, 2]
    assert shortest_region_sequence(rs, [0.5, 0.5, 0.5], [0.6, 0.5, 0.5]) == [0]
    rs2 = build_region_graph([box([0] * 3, [1] * 3), box([2] * 3, [3] * 3)])
    assert rs2.edges == {}
    with pytest.raises(Disconnected):
        shortest_region_sequence(rs2, [0.5] * 3, [2.5] * 3)


def random_boxes(rng, n):
    lo = rng.uniform(0, 3, (n, 3))
    return lo, lo + rng.uniform(0.5, 1.5, (n, 3))


def test_graph_edges_match_interval_overlap(rng):
    for _ in range(5):
        lo, hi = random_boxes(rng, 4)
        rs = build_region_graph([box(a, b) for a, b in zip(lo, hi)])
        want = {(i, j) for i, j in itertools.combinations(range(4), 2)
                if np.all(np.minimum(hi[i], hi[j]) - np.maximum(lo[i], lo[j]) > 1e-6)}
        assert set(rs.edges) == want


def brute_force_sequence(rs, start, goal):
    """Enumerate every simple path; cheapest wins, ties go to the smaller index tuple."""
    n = len(rs)
    w = {}
    for (a, b), c in rs.edges.items():
        w[a, b] = w[b, a] = c
    sources = [i for i in range(n) if contains(rs.regions[i], start, 1e-9)]
    targets = {i for i in range(n) if contains(rs.regions[i], goal, 1e-9)}
    best = None

    def dfs(path, cost):
        nonlocal best
        if path[-1] in targets:
            key = (cost, tuple(path))
            if best is None or cost < best[0] - 1e-12 or (abs(cost - best[0]) <= 1e-12 and tuple(path) < best[1]):
                best = key
        for j in range(n):
            if j not in path and (path[-1], j) in w:
                dfs(path + [j], cost + w[path[-1], j])

    for s in sources:
        dfs([s], 0.0)
    return None if best is None else list(best[1])


@given(st.integers(0, 100_000), st.integers(2, 8))
def test_shortest_sequence_matches_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    lo, hi = random_boxes(rng, n)
    rs = build_region_graph([box(a, b) for a, b in zip(lo, hi)])
    start = 0.5 * (lo[0] + hi[0])
    goal = 0.5 * (lo[-1] + hi[-1])
    want = brute_force_sequence(rs, start, goal)
    if want is None:
        with pytest.raises(Disconnected):
            shortest_region_sequence(rs, start, goal)
        return
    got = shortest_region_sequence(rs, start, goal)
    assert got == want
    for a, b in zip(got[:-1], got[1:]):
        assert chebyshev_center(intersect(rs.regions[a], rs.regions[b]))[1] >= 1e-9


seed_pt = st.tuples(st.floats(0.05, 3.95), st.floats(0.05, 1.95), st.floats(0.05, 1.95)).map(np.array)
SCENE2 = Scene(AxisBox(np.zeros(3), np.array([4.0, 2.0, 2.0])),
               [box([1.0, 0.5, 0.0], [1.5, 1.5, 1.2]), box([2.5, 0.0, 0.8], [3.0, 1.0, 2.0])], [])


@given(seed_pt)
def test_grown_region_properties(seed):
    if SCENE2.in_obstacle(seed, tol=1e-3) is not None:
        return
    R = grow_region(SCENE2, seed)
    assert contains(R, seed, 1e-9)
    for O in SCENE2.obstacles:
        X = intersect(R, O)
        assert X.empty or chebyshev_center(X)[1] < 1e-6


def test_regions_exclude_sampled_obstacle_points():
    rng = np.random.default_rng(7)
    for seed in ([0.5, 1.0, 1.0], [2.0, 1.0, 0.5], [3.5, 1.5, 1.5]):
        R = grow_region(SCENE2, seed)
        for O in SCENE2.obstacles:
            X = sample_points(O, 10_000, rng)
            assert not contains(R, X, 1e-6).any()
