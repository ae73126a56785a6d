"""User motion sequences and their expansion into a shared waypoint grid.

Each segment assigns every frame a role. Expansion walks the segments in
order, routes every moving frame through the region graph, and lays all
frames on one index grid: index 0 holds the initial pose and a segment whose
longest route crosses ``n`` regions contributes ``n`` new indices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geom import Polytope, chebyshev_center, contains, shift_reachable
from .regions import Disconnected, RegionSet, Scene, shortest_region_sequence


class FrameId(str, Enum):
    T = "T"
    LF = "LF"
    RF = "RF"
    LK = "LK"
    RK = "RK"
    LH = "LH"
    RH = "RH"

    def __str__(self):
        return self.value


FRAMES = tuple(FrameId)
FEET = (FrameId.LF, FrameId.RF)


@dataclass(frozen=True)
class Fixed:
    pass


@dataclass(frozen=True)
class Free:
    pass


@dataclass(frozen=True, eq=False)
class Motion:
    target: np.ndarray
    normal: np.ndarray | None = None

    def __post_init__(self):
        t = np.array(self.target, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "target", t)
        if self.normal is not None:
            n = np.array(self.normal, dtype=float)
            n.setflags(write=False)
            object.__setattr__(self, "normal", n)

    def __eq__(self, other):
        if not isinstance(other, Motion):
            return NotImplemented
        if (self.normal is None) != (other.normal is None):
            return False
        return (np.array_equal(self.target, other.target)
                and (self.normal is None or np.array_equal(self.normal, other.normal)))


Role = Fixed | Free | Motion


@dataclass(frozen=True)
class MotionSegment:
    duration: float
    roles: dict

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")
        roles = {FrameId(k): v for k, v in self.roles.items()}
        missing = [f.value for f in FRAMES if f not in roles]
        if missing:
            raise ValueError(f"segment has no role for frames {missing}")
        object.__setattr__(self, "roles", roles)

    def motion_frames(self) -> list[FrameId]:
        return [f for f in FRAMES if isinstance(self.roles[f], Motion)]


@dataclass(frozen=True)
class MotionSequence:
    segments: tuple
    initial_positions: dict

    def __post_init__(self):
        if not self.segments:
            raise ValueError("motion sequence needs at least one segment")
        object.__setattr__(self, "segments", tuple(self.segments))
        init = {}
        for k, v in self.initial_positions.items():
            a = np.array(v, dtype=float)
            a.setflags(write=False)
            init[FrameId(k)] = a
        missing = [f.value for f in FRAMES if f not in init]
        if missing:
            raise ValueError(f"missing initial positions for {missing}")
        object.__setattr__(self, "initial_positions", init)

    @property
    def durations(self) -> list[float]:
        return [s.duration for s in self.segments]

    def with_foot_offset(self, offset: float) -> "MotionSequence":
        """Raise foot Motion targets from ground contact points to ankle height."""
        if offset == 0:
            return self
        up = np.array([0.0, 0.0, offset])
        segs = []
        for seg in self.segments:
            roles = dict(seg.roles)
            for f in FEET:
                r = roles[f]
                if isinstance(r, Motion):
                    roles[f] = Motion(r.target + up, r.normal)
            segs.append(MotionSegment(seg.duration, roles))
        return MotionSequence(tuple(segs), self.initial_positions)

    def __eq__(self, other):
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (self.segments == other.segments
                and all(np.array_equal(self.initial_positions[f], other.initial_positions[f])
                        for f in FRAMES))


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    message: str
    frame: str | None = None
    segment: int | None = None

    def __str__(self):
        where = []
        if self.frame is not None:
            where.append(f"frame {self.frame}")
        if self.segment is not None:
            where.append(f"segment {self.segment}")
        loc = f" ({', '.join(where)})" if where else ""
        return f"{self.severity}{loc}: {self.message}"


def validate(seq: MotionSequence, scene: Scene, reach: dict | None = None,
             links=(), tol: float = 1e-6) -> list[Diagnostic]:
    """Static checks on a sequence; an empty list means it is usable."""
    reach = reach or {}
    out: list[Diagnostic] = []
    wb = scene.world_box

    def check_point(x, frame, seg, what):
        if not wb.contains(x):
            out.append(Diagnostic("error", f"{what} {np.round(x, 4).tolist()} is outside the world box",
                                  frame.value, seg))
            return
        k = scene.in_obstacle(x)
        if k is not None:
            out.append(Diagnostic("error", f"{what} {np.round(x, 4).tolist()} lies inside obstacle {k}",
                                  frame.value, seg))

    for f in FRAMES:
        check_point(seq.initial_positions[f], f, None, "initial position")

    for link in links:
        d = np.linalg.norm(seq.initial_positions[link.foot] - seq.initial_positions[link.knee])
        if abs(d - link.length) > tol:
            out.append(Diagnostic(
                "error", f"initial {link.foot}-{link.knee} distance {d:.6f} differs from link length "
                f"{link.length:.6f}", link.knee.value, None))

    last = dict(seq.initial_positions)
    for j, seg in enumerate(seq.segments):
        for f in seg.motion_frames():
            m = seg.roles[f]
            check_point(m.target, f, j, "motion target")
            if m.normal is not None and abs(np.linalg.norm(m.normal) - 1.0) > 1e-9:
                out.append(Diagnostic("error", "contact normal must have unit norm", f.value, j))
        torso_role = seg.roles[FrameId.T]
        if isinstance(torso_role, Motion):
            torso = torso_role.target
        elif isinstance(torso_role, Fixed):
            torso = last[FrameId.T]
        else:
            torso = None
        for f in FRAMES:
            role = seg.roles[f]
            if f is FrameId.T or f not in reach or isinstance(role, Free):
                continue
            x = role.target if isinstance(role, Motion) else last[f]
            if not _reachable(reach[f], x, torso, scene, tol):
                what = "motion target" if isinstance(role, Motion) else "fixed position"
                out.append(Diagnostic("error", f"{what} {np.round(x, 4).tolist()} is not reachable "
                                      "from any plausible torso position", f.value, j))
        for f in seg.motion_frames():
            last[f] = seg.roles[f].target
    return out


def _reachable(R: Polytope, x, torso, scene: Scene, tol: float) -> bool:
    x = np.asarray(x, dtype=float)
    if torso is not None:
        return contains(shift_reachable(R, torso), x, tol)
    # some torso inside the world box with x - torso in R
    box = scene.world_box.to_polytope()
    Q = Polytope(np.vstack([-R.normals, box.normals]),
                 np.concatenate([R.offsets - R.normals @ x, box.offsets]))
    return chebyshev_center(Q)[1] >= -tol


@dataclass(frozen=True, eq=False)
class ExpandedPlanLayout:
    """Shared waypoint grid produced by :func:`expand`.

    ``safe[f][i]`` is the pinned position of frame ``f`` at index ``i`` or
    ``None`` when it is a decision variable. ``region_seq[f][k]`` is the
    region holding the transition from index ``k`` to ``k + 1``.
    """

    n_points: int
    safe: dict
    region_seq: dict
    spans: tuple
    durations: tuple
    roles: tuple
    normals: dict = field(default_factory=dict)
    notes: tuple = ()

    @property
    def frames(self):
        return tuple(self.safe)

    @property
    def free_mask(self) -> dict:
        return {f: [x is None for x in self.safe[f]] for f in self.frames}

    def segment_of_index(self, i: int) -> int:
        """Segment owning waypoint index ``i`` (index 0 opens the first segment)."""
        if i == 0:
            return 0
        for j, (a, b) in enumerate(self.spans):
            if a < i <= b:
                return j
        raise IndexError(i)

    def segment_of_transition(self, k: int) -> int:
        return self.segment_of_index(k + 1)

    def transitions(self, j: int) -> range:
        a, b = self.spans[j]
        return range(a, b)

    def __eq__(self, other):
        if not isinstance(other, ExpandedPlanLayout):
            return NotImplemented

        def same_pts(u, v):
            return all((a is None and b is None) or (a is not None and b is not None
                                                     and np.array_equal(a, b)) for a, b in zip(u, v))
        return (self.n_points == other.n_points
                and self.frames == other.frames
                and all(same_pts(self.safe[f], other.safe[f]) for f in self.frames)
                and all(list(self.region_seq[f]) == list(other.region_seq[f]) for f in self.frames)
                and tuple(map(tuple, self.spans)) == tuple(map(tuple, other.spans))
                and tuple(self.durations) == tuple(other.durations)
                and tuple(self.roles) == tuple(other.roles)
                and self.normals.keys() == other.normals.keys()
                and all(np.array_equal(self.normals[k], other.normals[k]) for k in self.normals))


def expand(seq: MotionSequence, rs: RegionSet) -> ExpandedPlanLayout:
    last = {f: np.array(seq.initial_positions[f]) for f in FRAMES}
    safe = {f: [last[f].copy()] for f in FRAMES}
    region_seq = {f: [] for f in FRAMES}
    spans, roles, notes = [], [], []
    normals = {}
    index = 0

    def home(f, j):
        r = rs.best_containing(last[f])
        if r is None:
            raise Disconnected(f"frame {f} segment {j}: position {last[f].round(4).tolist()} "
                               "is not inside any region")
        return r

    for j, seg in enumerate(seq.segments):
        paths = {}
        for f in seg.motion_frames():
            try:
                paths[f] = shortest_region_sequence(rs, last[f], seg.roles[f].target)
            except Disconnected as exc:
                raise Disconnected(f"frame {f} segment {j}: {exc}") from exc
        n = max((len(p) for p in paths.values()), default=1)
        kinds = {}
        for f in FRAMES:
            role = seg.roles[f]
            if isinstance(role, Motion):
                p = paths[f]
                if len(p) < n:
                    notes.append(Diagnostic("warning", f"route padded from {len(p)} to {n} regions",
                                            f.value, j))
                    p = p + [p[-1]] * (n - len(p))
                region_seq[f].extend(p)
                safe[f].extend([None] * (n - 1) + [np.array(role.target)])
                last[f] = np.array(role.target)
                if role.normal is not None:
                    normals[(f, j)] = np.array(role.normal)
                kinds[f] = "motion"
            elif isinstance(role, Fixed):
                region_seq[f].extend([home(f, j)] * n)
                safe[f].extend([last[f].copy() for _ in range(n)])
                kinds[f] = "fixed"
            else:
                region_seq[f].extend([home(f, j)] * n)
                safe[f].extend([None] * n)
                kinds[f] = "free"
        spans.append((index, index + n))
        roles.append(kinds)
        index += n

    return ExpandedPlanLayout(
        n_points=index + 1,
        safe=safe,
        region_seq={f: tuple(v) for f, v in region_seq.items()},
        spans=tuple(spans),
        durations=tuple(seq.durations),
        roles=tuple(roles),
        normals=normals,
        notes=tuple(notes),
    )
