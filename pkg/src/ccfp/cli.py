"""Command-line entry point: ``ccfp {regions,plan,fit-reachable,check}``.

Exit codes: 0 success, 1 a stage failed (artifacts written so far are
kept), 2 bad input.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import io
from .bezier import reconstruct_reference
from .geom import GeometryError, fit_reachable_polytope
from .motionseq import validate
from .pipeline import StageError, default_steps, grow_regions, load_config, run
from .regions import RegionError, SeedInObstacle, SeedOutsideWorld

EXIT_OK, EXIT_STAGE, EXIT_INPUT = 0, 1, 2


def _setup_logging():
    level = os.environ.get("CCFP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _config_args(p, out=True):
    p.add_argument("--config", type=Path, required=True, help="planner config JSON")
    p.add_argument("--seed-overrides", type=Path, help="JSON list of extra IRIS seeds")
    if out:
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="ccfp", description="Collision-free multi-frame planner.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("regions", help="grow convex free-space regions")
    _config_args(p)

    p = sub.add_parser("plan", help="run the full planning pipeline")
    _config_args(p)
    p.add_argument("--regions", type=Path, help="reuse a regions.json instead of growing")
    p.add_argument("--skip-dyn", action="store_true", help="stop after Bezier smoothing")
    p.add_argument("--dump-conic", action="store_true", help="write the conic programs as text")

    p = sub.add_parser("fit-reachable", help="fit a p-plane polytope to a point cloud")
    p.add_argument("points", type=Path, help="CSV with x,y,z columns")
    p.add_argument("-p", "--planes", type=int, default=30, help="plane count")
    p.add_argument("--frame", help="frame name stored in the output")
    p.add_argument("--out", type=Path, default=Path("reach.json"), help="output polytope file")

    p = sub.add_parser("check", help="validate config, scene and sequence")
    _config_args(p, out=False)
    return parser.parse_args(argv)


def _timing_doc(timing: dict) -> dict:
    kin = timing.get("polygonal", 0.0) + timing.get("bezier", 0.0)
    doc = {"iris": timing.get("iris"), "kinematic": kin if "polygonal" in timing else None,
           "dynamic": timing.get("dynamic"), "duration": timing.get("duration")}
    doc["stages"] = dict(timing)
    return doc


def cmd_regions(args) -> int:
    cfg = load_config(args.config, args.seed_overrides)
    args.out.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    try:
        rs, seeds = grow_regions(cfg)
    except (SeedInObstacle, SeedOutsideWorld) as exc:
        raise io.InputError(str(exc)) from exc
    dt = time.perf_counter() - t
    io.write_json(args.out / "regions.json", io.regions_to_doc(rs, seeds))
    io.write_json(args.out / "timing.json", _timing_doc({"iris": dt}))
    print(f"{len(rs)} regions written to {args.out / 'regions.json'}")
    return EXIT_OK


def _writer(cfg, out: Path):
    """Stage callback that writes each artifact as soon as it exists."""

    def write(stage, res):
        if stage == "regions":
            io.write_json(out / "regions.json", io.regions_to_doc(res.regions, res.seeds or None))
        elif stage == "layout":
            io.write_json(out / "layout.json", io.layout_to_doc(res.layout))
        elif stage == "plan":
            io.write_json(out / "plan.json", io.plan_to_doc(res.plan))
        elif stage == "splines":
            io.write_json(out / "splines.json", io.splines_to_doc(res.splines))
            durations = res.layout.durations
            steps = cfg.trajopt.steps or default_steps(durations)
            io.write_reference_csv(out / "reference.csv",
                                   reconstruct_reference(res.splines, steps, durations))
        elif stage == "trajectory":
            tr = res.trajectory
            io.write_trajectory(out / "trajectory.json", out / "trajectory.csv", res.problem, tr,
                                res.problem.term_values(tr.xs, tr.us))
        io.write_json(out / "timing.json", _timing_doc(res.timing))

    return write


def cmd_plan(args) -> int:
    cfg = load_config(args.config, args.seed_overrides)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    regions = io.regions_from_doc(io.read_json(args.regions)) if args.regions else None
    try:
        res = run(cfg, regions, skip_dyn=args.skip_dyn, dump_dir=out if args.dump_conic else None,
                  on_stage=_writer(cfg, out))
    except StageError as exc:
        io.write_json(out / "failure.json", {"stage": exc.stage, "message": str(exc),
                                             "report": {str(k): v for k, v in exc.report.items()}})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    t = res.timing
    line = f"iris {t['iris']:.3f} s, kinematic {t['polygonal'] + t['bezier']:.3f} s"
    if res.trajectory is not None:
        line += f", dynamic {t['dynamic']:.3f} s, tracking rmse {res.tracking_rmse():.4f} m"
    print(line)
    return EXIT_OK


def cmd_fit_reachable(args) -> int:
    pts = io.read_points_csv(args.points)
    try:
        P = fit_reachable_polytope(pts, args.planes)
    except GeometryError as exc:
        raise io.InputError(f"{args.points}: {type(exc).__name__}: {exc}") from exc
    io.write_json(args.out, io.reach_to_doc(P, args.frame))
    print(f"{P.n_planes} planes written to {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = load_config(args.config, args.seed_overrides)
    diags = validate(cfg.sequence, cfg.scene, cfg.reach, cfg.links)
    for d in diags:
        print(d)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        return EXIT_INPUT
    print("ok")
    return EXIT_OK


COMMANDS = {"regions": cmd_regions, "plan": cmd_plan, "fit-reachable": cmd_fit_reachable,
            "check": cmd_check}


def main(argv=None) -> int:
    _setup_logging()
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except io.InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RegionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
