"""``cdmp`` command-line tool.

Subcommands: fit, rollout, optimize, check, compare, bench, plot.  Scene
and demo arguments accept ``lib:NAME`` for the shipped library.

Exit codes: 0 success, 1 bad input or failed precondition, 2 solver found
no feasible point, 3 the certificate check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io as cio
from .apf import ApfConfig, ApfError, rollout_with_apf
from .dmp import DivergenceError, DmpError, fit_lwr, reproduction_rmse, rollout
from .library import LibraryError, load_library_demo
from .plot import PlotError, write_svg
from .sdf import SceneError
from .transcription import (
    CERTIFIED, DEFAULT_GOAL_TOL, DEFAULT_ZBF_MARGIN, CdmpProblem, TranscriptionError,
    profile_to_csv, runtime_profile, solve_cdmp,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_UNCERTIFIED = 3

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("cdmp")


class UsageError(ValueError):
    pass


def _configure_logging():
    name = os.environ.get("CDMP_LOG", "error").strip().lower()
    level = LOG_LEVELS.get(name, logging.ERROR)
    root = logging.getLogger("cdmp")
    root.setLevel(level)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)
    if name not in LOG_LEVELS:
        root.error("CDMP_LOG=%r not understood, using 'error'", name)


def _vector_arg(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError("values must be finite")
    return np.array(vals)


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _load_demo(arg):
    if str(arg).startswith("lib:"):
        return load_library_demo(str(arg)[4:])
    return cio.read_demo(arg)


def _retarget(model, args):
    start = getattr(args, "start", None)
    goal = getattr(args, "goal", None)
    for name, vec in (("start", start), ("goal", goal)):
        if vec is not None and vec.size != model.dim:
            raise UsageError(f"--{name} has {vec.size} values, model is {model.dim}-D")
    if start is None and goal is None:
        return model
    return model.with_endpoints(y0=start, g=goal)


def _check_dims(model, scene):
    if model.dim != scene.dim:
        raise UsageError(f"model is {model.dim}-D but scene is {scene.dim}-D")


# -- subcommands --------------------------------------------------------------


def cmd_fit(args):
    demo = _load_demo(args.demo)
    kwargs = {"n_basis": args.n_basis, "alpha_s": args.alpha_s, "alpha_z": args.alpha_z}
    if args.beta_z is not None:
        kwargs["beta_z"] = args.beta_z
    model = fit_lwr(demo, **kwargs)
    cio.save_model(args.output, model)
    rmse = reproduction_rmse(model, demo)
    print(json.dumps({"model": str(args.output), "rmse": rmse}))
    return EXIT_OK


def cmd_rollout(args):
    model = _retarget(cio.load_model(args.model), args)
    duration = args.duration if args.duration is not None else 1.5 * model.tau
    traj = rollout(model, args.dt, duration)
    cio.write_trajectory(args.output, traj)
    print(json.dumps({"trajectory": str(args.output), "final_goal_distance":
                      float(np.linalg.norm(traj.y[-1] - model.g))}))
    return EXIT_OK


def cmd_optimize(args):
    model = _retarget(cio.load_model(args.model), args)
    scene = cio.load_scene(args.scene)
    _check_dims(model, scene)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = CdmpProblem(
        model, scene, n_colloc=args.n_colloc, horizon=args.horizon, epsilon=args.epsilon,
        zbf_margin=args.zbf_margin, goal_tol=None if args.goal_tol <= 0 else args.goal_tol,
    )
    started = time.perf_counter()
    sol = solve_cdmp(problem, max_iter=args.max_iter)
    report = sol.to_report()
    report["wall_time"] = time.perf_counter() - started
    report["n_colloc"] = args.n_colloc
    if args.epsilon is not None:
        report["epsilon"] = args.epsilon
        report["max_grid_deviation"] = float(
            np.max(np.linalg.norm(sol.grid_y - problem.reference.y, axis=1))
        )
    _write_json(out / "report.json", report)
    _write_json(out / "zeta.json", {"shape": list(sol.zeta.shape), "zeta": sol.zeta.tolist()})
    if sol.dense is not None:
        cio.write_trajectory(out / "trajectory.csv", sol.dense)
        cio.save_model(out / "model.json", sol.perturbed_model)
    summary = {k: report[k] for k in ("status", "certified", "dense_min_h", "dense_min_residual",
                                      "zeta_norm", "wall_time")}
    print(json.dumps(summary))
    if sol.status == CERTIFIED:
        return EXIT_OK
    if sol.dense is None:
        return EXIT_INFEASIBLE
    return EXIT_UNCERTIFIED


def _velocity(traj, tau):
    if tau is not None:
        return traj.z / tau
    if len(traj) < 2:
        return np.zeros_like(traj.y)
    return np.gradient(traj.y, traj.times, axis=0)


def cmd_check(args):
    traj = cio.read_trajectory(args.trajectory)
    scene = cio.load_scene(args.scene)
    if traj.dim != scene.dim:
        raise UsageError(f"trajectory is {traj.dim}-D but scene is {scene.dim}-D")
    tau = None
    if args.model is not None:
        tau = cio.load_model(args.model).tau
    elif args.tau is not None:
        tau = args.tau
    h, grad, _ = scene.evaluate(traj.y, order=1)
    resid = np.sum(grad * _velocity(traj, tau), axis=1) + scene.gamma * h
    bad = np.flatnonzero(h <= 0)
    report = {
        "samples": len(traj),
        "min_h": float(np.min(h)),
        "min_residual": float(np.min(resid)),
        "first_violation_time": float(traj.times[bad[0]]) if bad.size else None,
        "safe": bool(not bad.size),
    }
    if args.output:
        _write_json(args.output, report)
    print(json.dumps(report))
    return EXIT_OK if report["safe"] else EXIT_UNCERTIFIED


def cmd_compare(args):
    model = cio.load_model(args.model)
    scene = cio.load_scene(args.scene)
    _check_dims(model, scene)
    if scene.apf is None:
        log.info("scene has no 'apf' block; using default field parameters")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # the CDMP horizon; beyond it the unmodulated forcing term lets the
    # nominal endpoint drift
    duration = args.duration if args.duration is not None else 1.5 * model.tau
    start_goal = float(np.linalg.norm(model.g - model.y0))
    methods = {}
    paths = {}

    def record(name, traj):
        y = traj.y
        row = {"final_goal_distance": float(np.linalg.norm(y[-1] - model.g)),
               "min_h": float(np.min(scene.h(y))), "error": None}
        methods[name] = row
        paths[name] = y

    try:
        record("dmp", rollout(model, args.dt, duration))
    except (DivergenceError, DmpError) as exc:
        methods["dmp"] = {"error": str(exc)}
    try:
        record("apf", rollout_with_apf(model, ApfConfig.from_scene(scene), args.dt, duration))
    except (DivergenceError, DmpError, ApfError) as exc:
        methods["apf"] = {"error": str(exc)}
    try:
        goal_tol = None if args.goal_tol <= 0 else args.goal_tol
        sol = solve_cdmp(CdmpProblem(model, scene, n_colloc=args.n_colloc, horizon=duration,
                                     goal_tol=goal_tol))
        if sol.dense is None:
            methods["cdmp"] = {"error": f"solver status {sol.solve_report.status}",
                               "status": sol.status}
        else:
            traj = rollout(model, args.dt, duration, weights_override=model.weights - sol.zeta)
            record("cdmp", traj)
            methods["cdmp"]["status"] = sol.status
    except (TranscriptionError, DivergenceError, DmpError) as exc:
        methods["cdmp"] = {"error": str(exc)}
    report = {"start_goal_distance": start_goal, "duration": duration, "methods": methods}
    _write_json(out / "compare.json", report)
    if scene.dim >= 2 and paths:
        write_svg(out / "compare.svg", scene, paths, plane=args.plane)
    print(json.dumps(report))
    return EXIT_OK


def cmd_bench(args):
    model = cio.load_model(args.model)
    scene = cio.load_scene(args.scene)
    _check_dims(model, scene)
    n_list = sorted(args.n_list)
    rows = runtime_profile(scene, model, n_list)
    text = profile_to_csv(rows)
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_plot(args):
    scene = cio.load_scene(args.scene)
    paths = {}
    for p in args.trajectories:
        traj = cio.read_trajectory(p)
        if traj.dim != scene.dim:
            raise UsageError(f"{p} is {traj.dim}-D but scene is {scene.dim}-D")
        paths[Path(p).stem] = traj.y
    write_svg(args.output, scene, paths, plane=args.plane)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdmp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a DMP to a demonstration CSV")
    p.add_argument("demo", help="CSV with header t,y1[,y2,...] or lib:NAME")
    p.add_argument("-o", "--output", default="model.json")
    p.add_argument("--n-basis", type=int, default=20)
    p.add_argument("--alpha-s", type=float, default=4.0)
    p.add_argument("--alpha-z", type=float, default=25.0)
    p.add_argument("--beta-z", type=float, default=None, help="default alpha_z / 4")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rollout", help="integrate a model")
    p.add_argument("model")
    p.add_argument("-o", "--output", default="trajectory.csv")
    p.add_argument("--dt", type=float, default=0.002)
    p.add_argument("--duration", type=float, default=None, help="default 1.5 tau")
    p.add_argument("--start", type=_vector_arg)
    p.add_argument("--goal", type=_vector_arg)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("optimize", help="solve for a certified weight perturbation")
    p.add_argument("model")
    p.add_argument("scene", help="scene JSON or lib:NAME")
    p.add_argument("-d", "--out-dir", default=".")
    p.add_argument("--n-colloc", type=int, default=50)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--start", type=_vector_arg)
    p.add_argument("--goal", type=_vector_arg)
    p.add_argument("--horizon", type=float, default=None, help="default 1.5 tau")
    p.add_argument("--zbf-margin", type=float, default=DEFAULT_ZBF_MARGIN)
    p.add_argument("--goal-tol", type=float, default=DEFAULT_GOAL_TOL, help="0 disables")
    p.add_argument("--max-iter", type=int, default=40, help="outer solver iterations")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("check", help="evaluate the barrier along a trajectory")
    p.add_argument("trajectory")
    p.add_argument("scene")
    p.add_argument("-o", "--output", default=None)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--model", default=None, help="take tau from this model for velocities")
    group.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("compare", help="plain DMP vs potential field vs CDMP")
    p.add_argument("model")
    p.add_argument("scene")
    p.add_argument("-d", "--out-dir", default=".")
    p.add_argument("--dt", type=float, default=0.002)
    p.add_argument("--duration", type=float, default=None, help="default 1.5 tau")
    p.add_argument("--n-colloc", type=int, default=50)
    p.add_argument("--goal-tol", type=float, default=DEFAULT_GOAL_TOL, help="0 disables")
    p.add_argument("--plane", default="xy")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="runtime over collocation counts")
    p.add_argument("model")
    p.add_argument("scene")
    p.add_argument("--n-list", type=_int_list, default=[10, 20, 30, 40, 50])
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="SVG of trajectories over the scene")
    p.add_argument("scene")
    p.add_argument("trajectories", nargs="+")
    p.add_argument("-o", "--output", default="plot.svg")
    p.add_argument("--plane", default="xy")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (cio.FormatError, UsageError, DmpError, SceneError, TranscriptionError,
            LibraryError, PlotError, ApfError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, LibraryError) else str(exc)
        print(f"cdmp {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (DivergenceError, ArithmeticError) as exc:
        print(f"cdmp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE if args.command == "optimize" else EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
