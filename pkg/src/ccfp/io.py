"""JSON/CSV readers and writers. Every JSON document carries ``"version": 1``."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .bezier import BezierSegment, BezierSpline
from .geom import AxisBox, Polytope
from .kinpath import PolygonalPlan
from .motionseq import (ExpandedPlanLayout, Fixed, FrameId, Free, Motion, MotionSegment,
                        MotionSequence)
from .regions import RegionSet, Scene, Surface

VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if isinstance(doc, dict) and doc.get("version", VERSION) != VERSION:
        raise InputError(f"{path}: unsupported version {doc.get('version')!r}")
    return doc


def write_json(path, doc) -> None:
    doc = {"version": VERSION, **doc}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")


def _vec(x, n=3, what="point"):
    a = np.asarray(x, dtype=float)
    if a.shape != (n,):
        raise InputError(f"{what} must have {n} entries, got {x!r}")
    return a


# polytopes and boxes

def polytope_to_doc(P: Polytope) -> dict:
    d = {"normals": P.normals.tolist(), "offsets": P.offsets.tolist()}
    if P.empty:
        d["empty"] = True
    return d


def box_from_doc(doc) -> AxisBox:
    try:
        return AxisBox(_vec(doc["lower"], what="box lower"), _vec(doc["upper"], what="box upper"))
    except (KeyError, TypeError) as exc:
        raise InputError(f"box needs 'lower' and 'upper': {doc!r}") from exc


def polytope_from_doc(doc) -> Polytope:
    if "box" in doc:
        return box_from_doc(doc["box"]).to_polytope()
    try:
        return Polytope(np.asarray(doc["normals"], dtype=float), np.asarray(doc["offsets"], dtype=float),
                        bool(doc.get("empty", False)))
    except KeyError as exc:
        raise InputError(f"polytope needs 'normals' and 'offsets' or 'box': missing {exc}") from exc
    except ValueError as exc:
        raise InputError(f"bad polytope: {exc}") from exc


# scene

def scene_from_doc(doc) -> Scene:
    try:
        world = box_from_doc(doc["world_box"])
    except KeyError as exc:
        raise InputError("scene needs a 'world_box'") from exc
    obstacles = [polytope_from_doc(o) for o in doc.get("obstacles", [])]
    surfaces = []
    for s in doc.get("surfaces", []):
        try:
            surfaces.append(Surface(polytope_from_doc(s["patch"]), _vec(s["normal"], what="normal")))
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad surface entry: {exc}") from exc
    try:
        return Scene(world, tuple(obstacles), tuple(surfaces))
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def scene_to_doc(scene: Scene) -> dict:
    return {
        "world_box": {"lower": scene.world_box.lower.tolist(), "upper": scene.world_box.upper.tolist()},
        "obstacles": [polytope_to_doc(o) for o in scene.obstacles],
        "surfaces": [{"normal": s.normal.tolist(), "patch": polytope_to_doc(s.patch)}
                     for s in scene.surfaces],
    }


def load_scene(path) -> Scene:
    return scene_from_doc(read_json(path))


# motion sequence

def _role_from_doc(r, where):
    if r == "fixed":
        return Fixed()
    if r == "free":
        return Free()
    if isinstance(r, dict) and "motion" in r:
        m = r["motion"]
        try:
            target = _vec(m["target"], what=f"{where} target")
        except KeyError as exc:
            raise InputError(f"{where}: motion role needs a 'target'") from exc
        n = m.get("normal")
        return Motion(target, None if n is None else _vec(n, what=f"{where} normal"))
    raise InputError(f"{where}: role must be 'fixed', 'free' or {{'motion': ...}}, got {r!r}")


def _role_to_doc(r):
    if isinstance(r, Fixed):
        return "fixed"
    if isinstance(r, Free):
        return "free"
    m = {"target": r.target.tolist()}
    if r.normal is not None:
        m["normal"] = r.normal.tolist()
    return {"motion": m}


def sequence_from_doc(doc) -> MotionSequence:
    try:
        init = {FrameId(k): _vec(v, what=f"initial {k}") for k, v in doc["initial_positions"].items()}
        segs = []
        for j, s in enumerate(doc["segments"]):
            roles = {}
            for k, r in s["roles"].items():
                roles[FrameId(k)] = _role_from_doc(r, f"segment {j} frame {k}")
            # frames not mentioned stay where they are
            for f in FrameId:
                roles.setdefault(f, Fixed())
            segs.append(MotionSegment(float(s["duration"]), roles))
        return MotionSequence(tuple(segs), init)
    except KeyError as exc:
        raise InputError(f"sequence is missing field {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"bad sequence: {exc}") from exc


def sequence_to_doc(seq: MotionSequence) -> dict:
    return {
        "initial_positions": {f.value: x.tolist() for f, x in seq.initial_positions.items()},
        "segments": [{"duration": s.duration,
                      "roles": {f.value: _role_to_doc(r) for f, r in s.roles.items()}}
                     for s in seq.segments],
    }


def load_sequence(path) -> MotionSequence:
    return sequence_from_doc(read_json(path))


# reachable sets

def load_reach(path) -> tuple[FrameId | None, Polytope]:
    doc = read_json(path)
    frame = doc.get("frame")
    return (FrameId(frame) if frame else None), polytope_from_doc(doc)


def reach_to_doc(P: Polytope, frame=None) -> dict:
    d = {"frame": None if frame is None else FrameId(frame).value}
    d.update(polytope_to_doc(P))
    return d


# regions

def regions_to_doc(rs: RegionSet, seeds=None) -> dict:
    d = {"regions": [polytope_to_doc(P) for P in rs.regions],
         "centers": [c.tolist() for c in rs.centers],
         "radii": [float(r) for r in rs.radii],
         "edges": [[int(i), int(j), float(w)] for (i, j), w in sorted(rs.edges.items())]}
    if seeds is not None:
        d["seeds"] = [np.asarray(s).tolist() for s in seeds]
    return d


def regions_from_doc(doc) -> RegionSet:
    try:
        regions = tuple(polytope_from_doc(r) for r in doc["regions"])
        centers = tuple(np.asarray(c, dtype=float) for c in doc["centers"])
        radii = tuple(float(r) for r in doc["radii"])
        edges = {(int(i), int(j)): float(w) for i, j, w in doc["edges"]}
    except KeyError as exc:
        raise InputError(f"region file is missing field {exc}") from exc
    return RegionSet(regions, centers, radii, edges)


# layout, plan, splines

def layout_to_doc(lay: ExpandedPlanLayout) -> dict:
    return {
        "n_points": lay.n_points,
        "frames": [f.value for f in lay.frames],
        "safe": {f.value: [None if x is None else np.asarray(x).tolist() for x in lay.safe[f]]
                 for f in lay.frames},
        "region_seq": {f.value: list(map(int, lay.region_seq[f])) for f in lay.frames},
        "spans": [list(s) for s in lay.spans],
        "durations": list(lay.durations),
        "roles": [{f.value: kind for f, kind in r.items()} for r in lay.roles],
        "normals": [{"frame": f.value, "segment": j, "normal": n.tolist()}
                    for (f, j), n in sorted(lay.normals.items(), key=lambda kv: (kv[0][1], kv[0][0].value))],
        "notes": [{"severity": n.severity, "message": n.message, "frame": n.frame, "segment": n.segment}
                  for n in lay.notes],
    }


def layout_from_doc(doc) -> ExpandedPlanLayout:
    from .motionseq import Diagnostic
    frames = [FrameId(f) for f in doc["frames"]]
    return ExpandedPlanLayout(
        n_points=int(doc["n_points"]),
        safe={f: [None if x is None else np.asarray(x, dtype=float) for x in doc["safe"][f.value]]
              for f in frames},
        region_seq={f: tuple(doc["region_seq"][f.value]) for f in frames},
        spans=tuple(tuple(s) for s in doc["spans"]),
        durations=tuple(doc["durations"]),
        roles=tuple({FrameId(k): v for k, v in r.items()} for r in doc["roles"]),
        normals={(FrameId(n["frame"]), int(n["segment"])): np.asarray(n["normal"], dtype=float)
                 for n in doc["normals"]},
        notes=tuple(Diagnostic(n["severity"], n["message"], n.get("frame"), n.get("segment"))
                    for n in doc.get("notes", [])),
    )


def plan_to_doc(plan: PolygonalPlan) -> dict:
    return {
        "objective": plan.objective,
        "status": plan.status,
        "frames": {f.value: {"waypoints": plan.waypoints[f].tolist(),
                             "lengths": plan.lengths[f].tolist(),
                             "transition_times": plan.transition_times[f].tolist()}
                   for f in plan.waypoints},
    }


def plan_from_doc(doc) -> PolygonalPlan:
    fr = doc["frames"]
    return PolygonalPlan(
        waypoints={FrameId(f): np.asarray(v["waypoints"], dtype=float) for f, v in fr.items()},
        lengths={FrameId(f): np.asarray(v["lengths"], dtype=float) for f, v in fr.items()},
        transition_times={FrameId(f): np.asarray(v["transition_times"], dtype=float)
                          for f, v in fr.items()},
        objective=float(doc["objective"]),
        status=doc["status"],
    )


def splines_to_doc(splines: dict) -> dict:
    return {"splines": {f.value: {"knot_times": s.knot_times.tolist(),
                                  "segments": [{"duration": seg.duration,
                                                "control_points": seg.control_points.tolist()}
                                               for seg in s.segments]}
                        for f, s in splines.items()}}


def splines_from_doc(doc) -> dict:
    out = {}
    for f, s in doc["splines"].items():
        segs = [BezierSegment(np.asarray(g["control_points"], dtype=float), float(g["duration"]))
                for g in s["segments"]]
        out[FrameId(f)] = BezierSpline(FrameId(f), segs, np.asarray(s["knot_times"], dtype=float))
    return out


def write_reference_csv(path, ref) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "frame", "x", "y", "z", "vx", "vy", "vz"])
        for f in ref.positions:
            P, V = ref.positions[f], ref.velocities[f]
            for t, p, v in zip(ref.times, P, V):
                w.writerow([repr(float(t)), f.value, *map(repr, map(float, p)), *map(repr, map(float, v))])


def write_trajectory(path_json, path_csv, problem, traj, residuals: dict) -> None:
    times = problem.times()
    write_json(path_json, {
        "times": times.tolist(),
        "states": traj.xs.tolist(),
        "controls": traj.us.tolist(),
        "costs": [float(c) for c in traj.costs],
        "converged": bool(traj.converged),
        "diverged": bool(traj.diverged),
        "iterations": int(traj.iterations),
        "residuals": residuals,
    })
    nx, nu = traj.xs.shape[1], traj.us.shape[1]
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)])
        for k, t in enumerate(times):
            u = traj.us[k] if k < len(traj.us) else np.full(nu, np.nan)
            w.writerow([repr(float(t))] + [repr(float(v)) for v in traj.xs[k]] + [repr(float(v)) for v in u])


def read_points_csv(path) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    except ValueError:
        data = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1)
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if data.shape[1] != 3:
        raise InputError(f"{path}: expected 3 columns, found {data.shape[1]}")
    return data
