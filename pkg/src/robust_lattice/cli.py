"""Command-line pipeline: tube -> primitives -> plan -> simulate, plus an end-to-end demo.

Exit codes:
    0  success
    1  unexpected internal error
    2  configuration error (gain condition, empty tightened set, bad arguments)
    3  malformed input file
    4  primitive library has an empty (heading, speed) class
    5  stale or corrupt library / tube file
    6  no path (or node-expansion budget exhausted)
    7  start or goal not on the lattice
    8  certification failure
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from .el_dynamics import ELModel, load_model
from .errors import (
    CertificationError,
    LibraryIncompleteError,
    ParseError,
    RobustLatticeError,
    StaleLibraryError,
)
from .planner import Plan, inflate_obstacles, load_plan, plan as run_planner, save_plan
from .primitives import build_library, constraint_fingerprint, load_library, save_library
from .scenario import Scenario, load_scenario
from .sim import (
    PROFILE_KINDS,
    DisturbanceProfile,
    aggregate_report,
    certify,
    make_disturbance_batch,
    run_batch,
    write_report,
)
from .svg import write_map
from .tube import Gains, TubeSpec

log = logging.getLogger("robust_lattice")


def _parse_seeds(text: str) -> list[int]:
    """'N' -> 0..N-1; 'a-b' -> a..b; 'a,b,c' -> that list."""
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        if "-" in text.strip("-"):
            a, b = text.split("-", 1)
            return list(range(int(a), int(b) + 1))
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed set {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("seed count must be >= 1")
    return list(range(n))


def _load_inputs(args) -> tuple[ELModel, Scenario]:
    model = load_model(args.model)
    scen = load_scenario(args.scenario)
    g = scen.gains
    if args.k1 is not None or args.k2 is not None or args.gamma is not None:
        gains = Gains(
            args.k1 if args.k1 is not None else g.k1,
            args.k2 if args.k2 is not None else g.k2,
            args.gamma if args.gamma is not None else g.Gamma,
        )
        scen.gains = gains
    return model, scen


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tube_record(model: ELModel, scen: Scenario, tube: TubeSpec, tightened) -> dict:
    return {
        "scenario": scen.name,
        "model_hash": model.hash(),
        "tube_hash": constraint_fingerprint(tube, tightened),
        "tube": tube.to_dict(),
        "bounds": {"C1D": tube.C1 * tube.D, "C3D": tube.C3 * tube.D},
        "tightened": {
            "pose": tightened.pose_w.to_dict(),
            "velocity": tightened.velocity_w.to_dict(),
            "torque": tightened.torque_w.to_dict(),
        },
    }


def cmd_tube(args) -> int:
    model, scen = _load_inputs(args)
    tube, tightened = scen.prepare(model)
    rec = _tube_record(model, scen, tube, tightened)
    path = _out_dir(args) / "tube.json"
    path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    print(f"C1={tube.C1:.9g} C2={tube.C2:.9g} C3={tube.C3:.9g} D={tube.D:.6g}")
    print(f"tube radius r_x={tube.r_x:.6g} m, velocity radius r_v={tube.r_v:.6g} m/s, "
          f"torque margin {tube.torque_margin:.6g}")
    print(f"wrote {path}")
    return 0


def _check_tube_file(path, model, tube, tightened) -> None:
    try:
        rec = json.loads(Path(path).read_text())
        recorded = rec["tube_hash"], rec["model_hash"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"cannot read tube file {path}: {exc}") from exc
    active = constraint_fingerprint(tube, tightened), model.hash()
    if recorded != active:
        raise StaleLibraryError(
            f"tube file {path} is stale: recorded (tube, model) hashes {recorded}, active {active}; "
            "re-run the tube command"
        )


def cmd_primitives(args) -> int:
    model, scen = _load_inputs(args)
    tube, tightened = scen.prepare(model)
    if args.tube:
        _check_tube_file(args.tube, model, tube, tightened)
    dt = args.dt if args.dt is not None else scen.dt
    lib = build_library(scen.lattice, model, tube, tightened, dt=dt)
    path = Path(args.library) if args.library else _out_dir(args) / "library.json.gz"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_library(lib, path)
    cov = lib.coverage()
    print(f"library: {lib.size} primitives in {len(cov)} classes, wrote {path}")
    print("coverage: " + " ".join(f"{k}:{v}" for k, v in cov.items()))
    if lib.missing_classes:
        raise LibraryIncompleteError(f"empty primitive classes (heading, speed): {lib.missing_classes}")
    return 0


def _library_for(args, model, scen, tube, tightened):
    if not args.library:
        raise ParseError("--library is required")
    return load_library(args.library, model, tube, tightened)


def _write_plan_outputs(p: Plan, scen: Scenario, tube: TubeSpec, out: Path) -> None:
    save_plan(p, out / "plan.json")
    p.trajectory.to_csv(out / "trajectory.csv")
    write_map(out / "plan.svg", workspace=scen.workspace, obstacles=scen.obstacles,
              inflated=inflate_obstacles(scen.obstacles, p.inflation_radius),
              nominal=p.trajectory.pose, tube_radius=tube.position_radius,
              start=scen.start.pose, goal=scen.goal.pose)


def cmd_plan(args) -> int:
    model, scen = _load_inputs(args)
    tube, tightened = scen.prepare(model)
    lib = _library_for(args, model, scen, tube, tightened)
    p = run_planner(scen, lib, tube, tightened, inflate=not args.no_inflation,
                    max_expansions=args.max_expansions)
    out = _out_dir(args)
    _write_plan_outputs(p, scen, tube, out)
    print(f"plan: M={p.M} primitives, cost {p.cost:.6g}, duration {p.trajectory.duration:.6g} s, "
          f"{p.expansions} expansions; wrote {out / 'plan.json'}")
    return 0


def _simulate(args, model, scen, tube, tightened, p: Plan, out: Path) -> int:
    seeds = args.seeds
    profile = DisturbanceProfile(args.profile, scale=args.d_scale)
    profiles = [profile.with_seed(s) for s in seeds]
    dist = make_disturbance_batch(profiles, scen.ellipsoid)
    dt = args.dt if args.dt is not None else p.trajectory.dt
    logs = run_batch(p.trajectory, model, scen.gains, tube, dist, dt=dt, ellipsoid=scen.ellipsoid, seeds=seeds)
    reports = [certify(lg, tube, scen.obstacles, scen.torque_limits, scen.footprint_radius, scen.workspace)
               for lg in logs]
    runs = out / "runs"
    runs.mkdir(exist_ok=True)
    for lg in logs:
        lg.to_csv(runs / f"seed_{lg.seed:04d}.csv")
    report = aggregate_report(reports, tube, profile)
    write_report(report, out / "report.json")
    write_map(out / "simulation.svg", workspace=scen.workspace, obstacles=scen.obstacles,
              inflated=inflate_obstacles(scen.obstacles, p.inflation_radius),
              nominal=p.trajectory.pose, tube_radius=tube.position_radius,
              actual=[lg.pose for lg in logs[:20]], start=scen.start.pose, goal=scen.goal.pose)
    print(f"simulated {len(logs)} run(s), profile {profile.kind} (scale {profile.scale:g}): "
          f"max |x~| {report['max_x_err']:.6g} m (bound {tube.C1 * tube.D:.6g}), "
          f"max |x~'| {report['max_v_err']:.6g} m/s (bound {tube.C3 * tube.D:.6g})")
    if report["n_failed"]:
        first = next(r for r in reports if not r.passed)
        raise CertificationError(
            f"{report['n_failed']} of {len(reports)} run(s) failed certification; seeds "
            f"{report['failed_seeds'][:10]}; seed {first.seed} failed {first.failures()}: {first.attribution}"
        )
    print(f"all runs certified; wrote {out / 'report.json'}")
    return 0


def cmd_simulate(args) -> int:
    model, scen = _load_inputs(args)
    tube, tightened = scen.prepare(model)
    lib = _library_for(args, model, scen, tube, tightened)
    if not args.plan:
        raise ParseError("--plan is required")
    p = load_plan(args.plan, lib)
    return _simulate(args, model, scen, tube, tightened, p, _out_dir(args))


def cmd_demo(args) -> int:
    model, scen = _load_inputs(args)
    out = _out_dir(args)
    tube, tightened = scen.prepare(model)
    (out / "tube.json").write_text(json.dumps(_tube_record(model, scen, tube, tightened), indent=2,
                                              sort_keys=True) + "\n")
    print(f"tube: C1={tube.C1:.6g} D={tube.D:.6g} r_x={tube.r_x:.6g} m")
    lib_path = Path(args.library) if args.library else out / "library.json.gz"
    if lib_path.exists():
        lib = load_library(lib_path, model, tube, tightened)
    else:
        lib = build_library(scen.lattice, model, tube, tightened, dt=scen.dt)
        save_library(lib, lib_path)
        if lib.missing_classes:
            raise LibraryIncompleteError(f"empty primitive classes: {lib.missing_classes}")
    print(f"library: {lib.size} primitives")
    p = run_planner(scen, lib, tube, tightened, inflate=not args.no_inflation,
                    max_expansions=args.max_expansions)
    _write_plan_outputs(p, scen, tube, out)
    print(f"plan: M={p.M}, cost {p.cost:.6g}, duration {p.trajectory.duration:.6g} s")
    return _simulate(args, model, scen, tube, tightened, p, out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-lattice",
        description="Tube-robust lattice planning and closed-loop certification for a surface vessel.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split("\n", 2)[2],
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, library=True):
        p.add_argument("--model", help="ship model JSON (default: packaged synthetic vessel)")
        p.add_argument("--scenario", default="demo",
                       help="scenario JSON path or packaged name: demo, corridor (default: demo)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--k1", type=float, help="override gain k1")
        p.add_argument("--k2", type=float, help="override gain k2")
        p.add_argument("--gamma", type=float, help="override Lyapunov weight Gamma")
        if library:
            p.add_argument("--library", help="primitive library file (.json or .json.gz)")

    def planning(p):
        p.add_argument("--no-inflation", action="store_true",
                       help="plan around obstacles dilated by the footprint only (unsafe baseline)")
        p.add_argument("--max-expansions", type=int, default=500_000, help="A* node-expansion budget")

    def simulation(p):
        p.add_argument("--seeds", type=_parse_seeds, default=list(range(10)),
                       help="seed count N, range a-b, or list a,b,c (default: 10)")
        p.add_argument("--profile", choices=PROFILE_KINDS, default="filtered-noise",
                       help="disturbance family (default: filtered-noise)")
        p.add_argument("--dt", type=float, help="integration step in s (default: plan dt)")
        p.add_argument("--d-scale", type=float, default=1.0,
                       help="scale the disturbance; values > 1 leave the admissible set")

    p = sub.add_parser("tube", help="compute tube radii and tightened constraints")
    common(p, library=False)
    p.set_defaults(func=cmd_tube)

    p = sub.add_parser("primitives", help="build and save the motion-primitive library")
    common(p)
    p.add_argument("--tube", help="tube.json from the tube command; rejected if stale")
    p.add_argument("--dt", type=float, help="primitive sample step in s (default: scenario dt)")
    p.set_defaults(func=cmd_primitives)

    p = sub.add_parser("plan", help="search the lattice and write plan, trajectory CSV and SVG")
    common(p)
    planning(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run seeded closed-loop simulations of a plan and certify them")
    common(p)
    p.add_argument("--plan", help="plan.json from the plan command")
    simulation(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("demo", help="tube, library, plan and simulation in one go")
    common(p)
    planning(p)
    simulation(p)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RobustLatticeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - report and map to the generic exit code
        log.debug("unexpected failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
