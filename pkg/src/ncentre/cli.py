"""Command-line driver: configuration ingestion, run orchestration, exports.

Every subcommand prints a deterministic one-line summary and exits 0 on
success, 1 on domain errors and 2 on usage errors.  Numeric outputs are
written as delimited text with 17 significant digits, so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import flow, glue, inner, outer, potential as pot, symbolic
from .errors import NCentreError


def _add_common(p):
    p.add_argument("config", help="problem configuration file (TOML)")
    p.add_argument("--eps", type=float, default=None, help="scaling parameter of the shell problem")
    p.add_argument("--h", dest="energy_h", type=float, default=None, help="energy magnitude of the original problem")
    p.add_argument("--n-pts", type=int, default=256, help="inner-path sample count")
    p.add_argument("--tol", type=float, default=1e-10, help="integrator tolerance")
    p.add_argument("--out", default=None, help="output directory for exports")
    p.add_argument("--jobs", type=int, default=1, help="concurrent arc constructions")


def _resolve_eps(args, spec, file_h):
    """Exactly one of eps / h; the other follows from h = eps^alpha."""
    eps, h = args.eps, args.energy_h
    if eps is not None and h is not None:
        raise UsageError("pass exactly one of --eps and --h")
    if eps is None and h is None:
        if file_h is None:
            raise UsageError("no energy given: pass --eps or --h, or set energy_h in the file")
        h = file_h
    if eps is None:
        eps = h ** (1.0 / spec.alpha_min)
    else:
        h = eps ** spec.alpha_min
    return eps, h


class UsageError(Exception):
    pass


def _outdir(args):
    if args.out is None:
        return None
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _parse_word(text, alphabet):
    word = tuple(int(tok) for tok in text.replace(",", " ").split())
    return symbolic.SymbolSequence(word, alphabet)


def _fmt(x):
    return "%.10g" % x


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_validate_spec(args):
    spec, file_h = pot.load_problem(args.config)
    eps_max, r_work = pot.admissible_radii(spec)
    ccs = pot.central_configurations(spec)
    xi = [cc for cc in ccs if cc.kind == pot.MINIMAL_NONDEGENERATE]
    angles = ",".join(_fmt(cc.theta) for cc in xi)
    print(
        f"validate-spec: N={spec.n_centres} m={len(xi)} m_frak={_fmt(spec.m_frak)} "
        f"eps_tilde={_fmt(spec.eps_tilde)} R_work={_fmt(r_work)} eps_max={_fmt(eps_max)} "
        f"gamma={_fmt(spec.gamma)} Xi=[{angles}]"
    )
    return 0


def cmd_central_configs(args):
    spec, _ = pot.load_problem(args.config)
    ccs = pot.central_configurations(spec)
    out = _outdir(args)
    if out:
        with open(os.path.join(out, "central_configs.csv"), "w") as fh:
            fh.write("theta,u_value,u_second,kind\n")
            for cc in ccs:
                fh.write("%.17g,%.17g,%.17g,%s\n" % (cc.theta, cc.u_value, cc.u_second, cc.kind))
    minimal = sum(1 for c in ccs if c.kind == pot.MINIMAL_NONDEGENERATE)
    print(f"central-configs: found={len(ccs)} minimal_nondegenerate={minimal}")
    return 0


def cmd_homothetic(args):
    spec, file_h = pot.load_problem(args.config)
    ccs = pot.minimal_configurations(spec)
    cc = ccs[args.cc_index]
    opts = flow.IntegrateOpts(tol=args.tol)
    traj, t_xi = flow.homothetic_orbit(spec, cc, spec.R_work, opts)
    out = _outdir(args)
    if out:
        traj.write_csv(os.path.join(out, "homothetic.csv"))
    print(f"homothetic: theta={_fmt(cc.theta)} T_xi={_fmt(t_xi)} drift={_fmt(traj.max_energy_drift)}")
    return 0


def cmd_mcgehee_eq(args):
    spec, _ = pot.load_problem(args.config)
    cc = pot.minimal_configurations(spec)[args.cc_index]
    lam_r, lam_m, v_m = flow.mcgehee_equilibrium(spec, cc)
    print(
        f"mcgehee-eq: theta={_fmt(cc.theta)} lambda_r={_fmt(lam_r)} lambda_minus={_fmt(lam_m)} "
        f"v_minus=({_fmt(v_m[0])},{_fmt(v_m[1])},{_fmt(v_m[2])})"
    )
    return 0


def cmd_outer_arc(args):
    spec, file_h = pot.load_problem(args.config)
    eps, h = _resolve_eps(args, spec, file_h)
    cc = pot.minimal_configurations(spec)[args.cc_index]
    R = spec.R_work
    p0 = R * np.array([math.cos(cc.theta + args.phi0), math.sin(cc.theta + args.phi0)])
    p1 = R * np.array([math.cos(cc.theta + args.phi1), math.sin(cc.theta + args.phi1)])
    sopts = outer.ShootOpts(flow_opts=flow.IntegrateOpts(tol=args.tol))
    arc = outer.shoot_outer(spec, eps, p0, p1, cc, sopts)
    out = _outdir(args)
    if out:
        arc.arc.write_csv(os.path.join(out, "outer_arc.csv"))
    print(
        f"outer-arc: T_ext={_fmt(arc.T_ext)} length={_fmt(arc.length)} iters={arc.newton_iters} "
        f"residual={_fmt(arc.residual)} sigma={_fmt(arc.sigma)}"
    )
    return 0


def cmd_inner_arc(args):
    spec, file_h = pot.load_problem(args.config)
    eps, h = _resolve_eps(args, spec, file_h)
    ccs = pot.minimal_configurations(spec)
    R = spec.R_work
    cc1 = ccs[args.cc_index]
    cc2 = ccs[args.cc2_index if args.cc2_index is not None else args.cc_index]
    p1 = R * np.array([math.cos(cc1.theta + args.phi0), math.sin(cc1.theta + args.phi0)])
    p2 = R * np.array([math.cos(cc2.theta + args.phi1), math.sin(cc2.theta + args.phi1)])
    iopts = inner.InnerOpts(n_pts=args.n_pts)
    if args.constraint == "partition":
        constraint = inner.PartitionConstraint(inner.Partition.from_index(spec.n_centres, args.partition))
    elif args.constraint == "winding":
        l = inner.WindingVector(tuple(int(c) for c in args.winding.split(",")))
        constraint = inner.WindingConstraint(l)
    elif args.constraint == "free":
        constraint = inner.FreeConstraint()
    else:
        constraint = inner.TwoCentreConstraint(args.centre - 1)
    result = inner.minimize_inner(p1, p2, constraint, spec, eps, R, iopts)
    arcs = result if isinstance(result, tuple) else (result,)
    out = _outdir(args)
    for i, arc in enumerate(arcs):
        if out:
            arc.arc.write_csv(os.path.join(out, f"inner_arc_{i}.csv"))
            with open(os.path.join(out, f"inner_arc_{i}.txt"), "w") as fh:
                arc.write_summary(fh)
        print(
            f"inner-arc[{i}]: M={_fmt(arc.M_value)} L={_fmt(arc.L_value)} omega={_fmt(arc.omega)} "
            f"T_int={_fmt(arc.T_int)} winding={''.join(map(str, arc.winding.parities))} "
            f"min_dist={_fmt(arc.min_centre_dist)} collisions={len(arc.collisions)}"
        )
    return 0


def _alphabet(args, spec):
    return symbolic.Alphabet.for_spec(spec, args.alphabet)


def cmd_periodic(args):
    spec, file_h = pot.load_problem(args.config)
    eps, h = _resolve_eps(args, spec, file_h)
    seq = _parse_word(args.word, _alphabet(args, spec))
    gopts = glue.GlueOpts(jobs=args.jobs, inner_opts=inner.InnerOpts(n_pts=args.n_pts))
    orbit = glue.minimize_junctions(seq, spec, eps, spec.R_work, gopts)
    out = _outdir(args)
    if out:
        orbit.trajectory.write_csv(os.path.join(out, "periodic_orbit.csv"))
        with open(os.path.join(out, "periodic_orbit.txt"), "w") as fh:
            orbit.write_summary(fh)
        if args.rescale:
            rescaled = glue.rescale_orbit(orbit, spec, h)
            rescaled.trajectory.write_csv(os.path.join(out, "periodic_orbit_original.csv"))
    print(
        f"periodic: word={'-'.join(map(str, seq.word))} L={_fmt(orbit.L_total)} "
        f"T={_fmt(orbit.total_period)} mismatch={_fmt(orbit.junction_mismatch)} "
        f"accel_mismatch={_fmt(orbit.accel_mismatch)}"
    )
    return 0


def cmd_read_symbols(args):
    spec, file_h = pot.load_problem(args.config)
    eps, h = _resolve_eps(args, spec, file_h)
    data = np.genfromtxt(args.trajectory, delimiter=",", names=True)
    traj = flow.Trajectory(
        t=data["t"],
        x=np.column_stack([data["x"], data["y"]]),
        v=np.column_stack([data["vx"], data["vy"]]),
        energy_level=-1.0,
        residuals=data["energy_residual"],
        max_energy_drift=float(np.max(np.abs(data["energy_residual"]))),
    )
    seq = symbolic.read_symbols(traj, spec, eps, spec.R_work, _alphabet(args, spec))
    print(f"read-symbols: word={'-'.join(map(str, seq.word))}")
    return 0


def cmd_verify_word(args):
    spec, file_h = pot.load_problem(args.config)
    eps, h = _resolve_eps(args, spec, file_h)
    seq = _parse_word(args.word, _alphabet(args, spec))
    gopts = glue.GlueOpts(jobs=args.jobs, inner_opts=inner.InnerOpts(n_pts=args.n_pts))
    report = symbolic.verify_semiconjugacy(seq, spec, eps, spec.R_work, gopts)
    out = _outdir(args)
    if out:
        with open(os.path.join(out, "verify_word.txt"), "w") as fh:
            report.write_text(fh)
    status = "pass" if report.ok else "fail"
    print(f"verify-word: word={'-'.join(map(str, seq.word))} rotations={len(report.checks)} {status}")
    return 0 if report.ok else 1


def build_parser():
    ap = argparse.ArgumentParser(
        prog="ncentre",
        description="Fixed-energy trajectories and symbolic dynamics of the planar anisotropic N-centre problem",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-spec", help="parse a problem file and print its derived constants")
    _add_common(p)
    p.set_defaults(func=cmd_validate_spec)

    p = sub.add_parser("central-configs", help="critical angles of the leading angular profile")
    _add_common(p)
    p.set_defaults(func=cmd_central_configs)

    p = sub.add_parser("homothetic", help="homothetic orbit through a minimal configuration")
    _add_common(p)
    p.add_argument("--cc-index", type=int, default=0)
    p.set_defaults(func=cmd_homothetic)

    p = sub.add_parser("mcgehee-eq", help="collision-equilibrium eigen-data")
    _add_common(p)
    p.add_argument("--cc-index", type=int, default=0)
    p.set_defaults(func=cmd_mcgehee_eq)

    p = sub.add_parser("outer-arc", help="shoot an outer arc between two sphere points")
    _add_common(p)
    p.add_argument("--cc-index", type=int, default=0)
    p.add_argument("--phi0", type=float, default=0.0)
    p.add_argument("--phi1", type=float, default=0.0)
    p.set_defaults(func=cmd_outer_arc)

    p = sub.add_parser("inner-arc", help="minimize an inner arc in a topological class")
    _add_common(p)
    p.add_argument("--cc-index", type=int, default=0)
    p.add_argument("--cc2-index", type=int, default=None)
    p.add_argument("--phi0", type=float, default=0.0)
    p.add_argument("--phi1", type=float, default=0.0)
    p.add_argument("--constraint", choices=["partition", "winding", "free", "two-centre"], default="partition")
    p.add_argument("--partition", type=int, default=0)
    p.add_argument("--winding", default="1,0")
    p.add_argument("--centre", type=int, default=1)
    p.set_defaults(func=cmd_inner_arc)

    p = sub.add_parser("periodic", help="realize a finite word as a periodic orbit")
    _add_common(p)
    p.add_argument("--word", required=True)
    p.add_argument("--alphabet", choices=["Q", "S", "B"], default="Q")
    p.add_argument("--rescale", action="store_true", help="also export the original-problem orbit")
    p.set_defaults(func=cmd_periodic)

    p = sub.add_parser("read-symbols", help="read the word of an exported trajectory")
    _add_common(p)
    p.add_argument("--trajectory", required=True, help="trajectory CSV to read")
    p.add_argument("--alphabet", choices=["Q", "S", "B"], default="Q")
    p.set_defaults(func=cmd_read_symbols)

    p = sub.add_parser("verify-word", help="realize a word and verify the shift commutation")
    _add_common(p)
    p.add_argument("--word", required=True)
    p.add_argument("--alphabet", choices=["Q", "S", "B"], default="Q")
    p.set_defaults(func=cmd_verify_word)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (NCentreError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
