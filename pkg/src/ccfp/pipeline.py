"""Stage-by-stage planning pipeline used by the command-line tool."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bezier import SmoothingSpec, reconstruct_reference, solve_smoothing
from .io import InputError, load_reach, load_scene, load_sequence, polytope_from_doc, read_json
from .kinpath import PolygonalPlan, default_links, solve_polygonal
from .motionseq import FRAMES, ExpandedPlanLayout, FrameId, MotionSequence, expand, validate
from .regions import (Disconnected, IrisOptions, RegionError, RegionSet, Scene, SeedInObstacle,
                      SeedOutsideWorld, build_region_graph, default_seeds, grow_region)
from .solver import SolveError, SolverOptions
from .trajopt import (DDPOptions, FrictionCone, InactiveContact, PointMass, Quadratic, TrajOptProblem,
                      Trajectory, build_tracking_costs, solve_ddp, static_initial_guess)

log = logging.getLogger(__name__)

CONTACT_FRAMES = (FrameId.LF, FrameId.RF, FrameId.LH, FrameId.RH)
UP = np.array([0.0, 0.0, 1.0])


class StageError(RuntimeError):
    """A stage could not produce a result; ``stage`` names it."""

    def __init__(self, stage, message, report=None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.report = report or {}


@dataclass
class TrajoptConfig:
    model: str = "point_mass"
    mass: float = 30.0
    steps: list | None = None
    mu: float = 0.7
    track_weight: float = 1e3
    vel_weight: float = 10.0
    terminal_weight: float = 1e4
    force_weight: float = 1e-5
    friction_weight: float = 1e-2
    inactive_weight: float = 1.0
    max_iter: int = 100
    tol: float = 1e-9


@dataclass
class PlanConfig:
    base: Path
    scene: Scene
    sequence: MotionSequence
    reach: dict
    links: list
    foot_ground_offset: float = 0.0
    iris: IrisOptions = field(default_factory=IrisOptions)
    solver: SolverOptions = field(default_factory=SolverOptions)
    barrier_weights: tuple = (0.0, 0.0, 0.1)
    smoothing: SmoothingSpec = field(default_factory=SmoothingSpec)
    trajopt: TrajoptConfig = field(default_factory=TrajoptConfig)
    extra_seeds: list = field(default_factory=list)


def _fields(cls, doc, where):
    known = set(cls.__dataclass_fields__)
    bad = set(doc) - known
    if bad:
        raise InputError(f"{where}: unknown keys {sorted(bad)}")
    return doc


def load_config(path, seed_overrides=None) -> PlanConfig:
    path = Path(path)
    doc = read_json(path)
    base = path.parent

    def rel(p):
        return base / p

    try:
        scene = load_scene(rel(doc["scene"]))
        seq = load_sequence(rel(doc["sequence"]))
    except KeyError as exc:
        raise InputError(f"{path}: config needs {exc}") from exc
    reach = {}
    for k, v in doc.get("reach", {}).items():
        try:
            frame = FrameId(k)
        except ValueError as exc:
            raise InputError(f"{path}: unknown frame {k!r} in reach") from exc
        if isinstance(v, str):
            _, P = load_reach(rel(v))
        else:
            P = polytope_from_doc(v)
        reach[frame] = P
    links_doc = doc.get("links", {})
    try:
        left = float(links_doc["L"])
        right = float(links_doc.get("R", left))
        links = default_links(left, right)
    except KeyError as exc:
        raise InputError(f"{path}: 'links' needs the left length 'L'") from exc
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    offset = float(doc.get("foot_ground_offset", 0.0))
    seq = seq.with_foot_offset(offset)
    iris = IrisOptions(**_fields(IrisOptions, doc.get("iris", {}), "iris"))
    solver = SolverOptions(**_fields(SolverOptions, doc.get("solver", {}), "solver"))
    sm = doc.get("smoothing", {})
    smoothing = SmoothingSpec(**{k: tuple(v) if k == "alpha" else v
                                 for k, v in _fields(SmoothingSpec, sm, "smoothing").items()})
    to = TrajoptConfig(**_fields(TrajoptConfig, doc.get("trajopt", {}), "trajopt"))
    bw = tuple(float(w) for w in doc.get("barrier_weights", (0.0, 0.0, 0.1)))
    if len(bw) != 3 or min(bw) < 0:
        raise InputError(f"{path}: barrier_weights needs three nonnegative numbers")
    extra = [np.asarray(s, dtype=float) for s in doc.get("seeds", [])]
    if seed_overrides:
        so = read_json(seed_overrides)
        pts = so.get("seeds", []) if isinstance(so, dict) else so
        if isinstance(so, dict) and so.get("replace"):
            extra = []
        extra += [np.asarray(s, dtype=float) for s in pts]
    return PlanConfig(base, scene, seq, reach, links, offset, iris, solver, bw, smoothing, to, extra)


def grow_regions(cfg: PlanConfig):
    """Seeds for every frame path and the regions grown from them.

    Returns ``(RegionSet, seeds)``. Errors name the frame and segment; seeds
    that regrow an already known region are dropped.
    """
    seq = cfg.sequence
    cache = {}
    order = []

    def key(x):
        return tuple(np.round(np.asarray(x, dtype=float), 12))

    def add(x, frame, where):
        k = key(x)
        if k not in cache:
            try:
                cache[k] = grow_region(cfg.scene, x, cfg.iris)
            except (SeedInObstacle, SeedOutsideWorld) as exc:
                raise type(exc)(f"frame {frame} {where}: {exc}") from exc
        if k not in order and all(cache[k] != cache[o] for o in order):
            order.append(k)

    for f in FRAMES:
        add(seq.initial_positions[f], f, "initial pose")
    last = dict(seq.initial_positions)
    for j, seg in enumerate(seq.segments):
        for f in seg.motion_frames():
            target = seg.roles[f].target
            add(target, f, f"segment {j}")
            try:
                pts = default_seeds(last[f], target, cfg.scene, cfg.iris, cache)
            except RegionError as exc:
                raise type(exc)(f"frame {f} segment {j}: {exc}") from exc
            for p in pts:
                add(p, f, f"segment {j}")
            last[f] = target
    for s in cfg.extra_seeds:
        add(s, "override", "seed list")
    seeds = [np.array(k) for k in order]
    return build_region_graph([cache[k] for k in order]), seeds


def contact_schedule(layout: ExpandedPlanLayout, steps):
    """Active contact candidates and their normals at every dynamic knot."""
    normals = {f: UP.copy() for f in CONTACT_FRAMES}
    sched, nrm = [], []
    for j, n in enumerate(steps):
        for f in CONTACT_FRAMES:
            if (f, j - 1) in layout.normals and j > 0:
                normals[f] = layout.normals[(f, j - 1)]
        act = [c for c, f in enumerate(CONTACT_FRAMES) if layout.roles[j].get(f) == "fixed"]
        row = [normals[f].copy() for f in CONTACT_FRAMES]
        sched += [act] * n
        nrm += [row] * n
    sched.append(sched[-1])
    nrm.append(nrm[-1])
    return sched, nrm


def default_steps(durations, per_second: int = 40):
    return [max(2, int(round(per_second * T))) for T in durations]


def build_point_mass_problem(cfg: PlanConfig, layout, splines):
    to = cfg.trajopt
    durations = list(layout.durations)
    steps = list(to.steps) if to.steps else default_steps(durations)
    if len(steps) != len(durations):
        raise InputError(f"trajopt.steps has {len(steps)} entries for {len(durations)} segments")
    sched, nrm = contact_schedule(layout, steps)
    model = PointMass(to.mass, CONTACT_FRAMES, sched, nrm)
    x0 = np.concatenate([splines[FrameId.T].evaluate(0.0), np.zeros(3)])
    problem = TrajOptProblem(model, x0, steps, durations)
    track, ref = build_tracking_costs(splines, problem, FrameId.T, to.track_weight,
                                      to.vel_weight, [3, 4, 5])
    term, _ = build_tracking_costs(splines, problem, FrameId.T, to.terminal_weight,
                                   to.terminal_weight * 0.1, [3, 4, 5])
    u_static = np.array([model.static_controls(x0, k) for k in range(problem.N)])
    problem.running = [track,
                       Quadratic(R=to.force_weight * np.eye(model.nu), u_ref=u_static),
                       FrictionCone(model, to.mu, to.friction_weight),
                       InactiveContact(model, to.inactive_weight)]
    problem.terminal = [term]
    return problem, ref


@dataclass
class PlanResult:
    regions: RegionSet | None = None
    seeds: list = field(default_factory=list)
    layout: ExpandedPlanLayout | None = None
    plan: PolygonalPlan | None = None
    splines: dict | None = None
    reference: object = None
    problem: TrajOptProblem | None = None
    trajectory: Trajectory | None = None
    timing: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    def tracking_rmse(self) -> float:
        ref = self.problem_reference
        err = self.trajectory.xs[:, :3] - ref
        return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))

    @property
    def problem_reference(self):
        return reconstruct_reference({FrameId.T: self.splines[FrameId.T]}, self.problem.steps,
                                     self.problem.durations).positions[FrameId.T]


def run(cfg: PlanConfig, regions: RegionSet | None = None, skip_dyn: bool = False,
        dump_dir: Path | None = None, on_stage=None) -> PlanResult:
    """Run all stages; ``on_stage(name, result)`` is called after each one."""
    res = PlanResult()
    notify = on_stage or (lambda name, r: None)

    diags = [d for d in validate(cfg.sequence, cfg.scene, cfg.reach, cfg.links) if d.severity == "error"]
    if diags:
        raise InputError("; ".join(map(str, diags)))

    t = time.perf_counter()
    if regions is None:
        try:
            regions, res.seeds = grow_regions(cfg)
        except (SeedInObstacle, SeedOutsideWorld) as exc:
            raise InputError(str(exc)) from exc
        except RegionError as exc:
            raise StageError("iris", str(exc)) from exc
    res.regions = regions
    res.timing["iris"] = time.perf_counter() - t
    notify("regions", res)

    try:
        res.layout = expand(cfg.sequence, regions)
    except Disconnected as exc:
        raise StageError("expand", str(exc)) from exc
    res.diagnostics = list(res.layout.notes)
    notify("layout", res)

    t = time.perf_counter()
    try:
        res.plan = solve_polygonal(res.layout, regions, cfg.reach, cfg.links, cfg.barrier_weights,
                                   cfg.solver, dump=dump_dir and dump_dir / "polygonal.cbf")
    except SolveError as exc:
        raise StageError("polygonal", str(exc), exc.report) from exc
    res.timing["polygonal"] = time.perf_counter() - t
    notify("plan", res)

    t = time.perf_counter()
    try:
        res.splines = solve_smoothing(res.plan, res.layout, regions, cfg.reach, cfg.links,
                                      cfg.smoothing, cfg.solver,
                                      dump=dump_dir and dump_dir / "bezier.cbf")
    except SolveError as exc:
        raise StageError("bezier", str(exc), exc.report) from exc
    res.timing["bezier"] = time.perf_counter() - t
    res.timing["duration"] = float(sum(cfg.sequence.durations))
    notify("splines", res)
    if skip_dyn:
        return res

    if cfg.trajopt.model != "point_mass":
        raise InputError(f"unknown trajopt model {cfg.trajopt.model!r}")
    t = time.perf_counter()
    res.problem, res.reference = build_point_mass_problem(cfg, res.layout, res.splines)
    init = static_initial_guess(res.problem)
    res.trajectory = solve_ddp(res.problem, init,
                               DDPOptions(max_iter=cfg.trajopt.max_iter, tol=cfg.trajopt.tol))
    res.timing["dynamic"] = time.perf_counter() - t
    notify("trajectory", res)
    if res.trajectory.diverged:
        raise StageError("dynamic", "regularization exceeded its cap")
    if not res.trajectory.converged:
        raise StageError("dynamic", f"no convergence within {cfg.trajopt.max_iter} iterations")
    return res
