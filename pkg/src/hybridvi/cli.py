"""Command line entry point: run, certify, validate, sweep, plotdata.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 certification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import simharness as sh
from .controller import ScenarioError
from .geom import Pose, rodrigues
from .manipulator import forward_kinematics, inverse_kinematics

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CERT = 0, 1, 2, 3

log = logging.getLogger("hybridvi")


def _random_rotation(rng, max_angle):
    ax = rng.normal(size=3)
    return rodrigues(rng.uniform(0.0, max_angle), ax / np.linalg.norm(ax))


def _ball(rng, radius):
    d = rng.normal(size=3)
    return d / np.linalg.norm(d) * radius * rng.uniform() ** (1 / 3)


def randomized(scn: sh.Scenario, rng, what: str = "both", pos_err: float = 0.5,
               att_err: float = np.pi / 2, obs_pos: float = 0.5,
               obs_att: float = np.pi) -> sh.Scenario:
    """Copy of ``scn`` with a perturbed arm configuration and/or observer
    initialisation."""
    kw = {}
    if what in ("controller", "both"):
        X0 = forward_kinematics(scn.model, scn.q0)
        target = Pose(X0.rot @ _random_rotation(rng, att_err), X0.pos + _ball(rng, pos_err))
        q = inverse_kinematics(scn.model, target, scn.q0, iters=500)
        kw["q0"] = q
        kw["qd0"] = np.zeros_like(q)
    if what in ("observer", "both"):
        X0 = forward_kinematics(scn.model, kw.get("q0", scn.q0))
        kw["obs_p0"] = X0.pos + _ball(rng, obs_pos)
        kw["obs_R0"] = _random_rotation(rng, obs_att) @ X0.rot
    return scn.with_(**kw)


def cmd_run(args) -> int:
    scn = sh.load_scenario(args.scenario)
    kw = {}
    if args.feedback:
        kw["feedback"] = args.feedback
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.duration is not None:
        kw["duration"] = args.duration
    scn = scn.with_(**kw) if kw else scn
    traj = sh.run(scn, progress=args.verbose)
    sh.export_csv(traj, args.out)
    print(f"wrote {len(traj)} rows ({traj.jumps.size} jumps) to {args.out}")
    return EXIT_OK


def cmd_certify(args) -> int:
    traj = sh.load_csv(args.log)
    rep = sh.certify(traj, args.delta_obs, args.delta_ctrl, rel_tol=args.rel_tol)
    print("\n".join(rep.lines()))
    return EXIT_OK if rep.passed else EXIT_CERT


def cmd_validate(args) -> int:
    scn = sh.load_scenario(args.scenario)
    sh.validate(scn)
    print(f"{args.scenario}: ok (dt={scn.dt}, duration={scn.duration}, "
          f"delta_obs={scn.obs_gains.delta:.6g}, delta_ctrl={scn.ctrl_gains.delta_c:.6g})")
    return EXIT_OK


def _sweep_one(scn, i, out_dir):
    traj = sh.run(scn)
    path = out_dir / f"run_{i:03d}.csv"
    sh.export_csv(traj, path)
    last = traj.data[-1]
    _, tr = sh.plot_data(traj, "trackerr")
    _, es = sh.plot_data(traj, "esterr")
    rep = sh.certify(traj, scn.obs_gains.delta, scn.ctrl_gains.delta_c)
    return [i, last[sh.COL["t"]], tr[-1, 2], tr[-1, 3], es[-1, 2], es[-1, 3],
            traj.jumps.size, float(rep.passed)]


def cmd_sweep(args) -> int:
    base = sh.load_scenario(args.scenario)
    if args.duration is not None:
        base = base.with_(duration=args.duration)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    scns = [randomized(base, rng, args.what) for _ in range(args.randomize_init)]
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        rows = list(pool.map(lambda a: _sweep_one(a[1], a[0], out_dir), enumerate(scns)))
    header = "run,t_end,pos_err,rot_err,est_pos_err,est_rot_err,jumps,certified"
    np.savetxt(out_dir / "summary.csv", np.array(rows).reshape(-1, 8), fmt="%.17g",
               delimiter=",", header=header, comments="")
    for r in rows:
        print(f"run {int(r[0]):3d}: pos_err {r[2]:.3e} rot_err {r[3]:.3e} "
              f"est_pos {r[4]:.3e} est_rot {r[5]:.3e} jumps {int(r[6])}")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    traj = sh.load_csv(args.log)
    names, data = sh.plot_data(traj, args.what)
    np.savetxt(args.out, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridvi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write the CSV log")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--feedback", choices=("estimate", "truth"))
    r.add_argument("--seed", type=int)
    r.add_argument("--duration", type=float)
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("certify", help="check Lyapunov decrease on a CSV log")
    c.add_argument("--log", required=True)
    c.add_argument("--delta-obs", type=float, required=True)
    c.add_argument("--delta-ctrl", type=float, required=True)
    c.add_argument("--rel-tol", type=float, default=1e-8)
    c.set_defaults(fn=cmd_certify)

    v = sub.add_parser("validate", help="validate a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(fn=cmd_validate)

    s = sub.add_parser("sweep", help="batch runs from randomized initial conditions")
    s.add_argument("--scenario", required=True)
    s.add_argument("--randomize-init", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--what", choices=("observer", "controller", "both"), default="both")
    s.add_argument("--duration", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_sweep)

    d = sub.add_parser("plotdata", help="emit a column subset for plotting")
    d.add_argument("--log", required=True)
    d.add_argument("--what", required=True, choices=tuple(sh.PLOT_COLUMNS))
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except (sh.ValidationError, ScenarioError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (sh.SimulationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
