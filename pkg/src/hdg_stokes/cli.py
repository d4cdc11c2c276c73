"""Command line driver: solve, convergence, tau-sweep, check-identities."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis, export
from .analysis import DEFAULT_TAU
from .global_solver import solve_stokes
from .mesh import FAMILIES
from .postprocess import postprocess_all

SLOPE_MARGIN = {2: (0.9, 1.8), 3: (0.85, 1.7)}  # (fields, postprocessed)


def _parse_range(text):
    """'2', '1,2,3' or '1..3' to a list of ints."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t]


def _parse_floats(text):
    return [float(t) for t in text.split(",") if t]


def _outdir(args):
    path = Path(args.outdir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _set_threads(n):
    if n is None:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        print(f"note: threadpoolctl not installed, --threads {n} ignored")


def _positive_tau(values):
    for tau in values:
        if not tau > 0.0:
            print(f"error: stabilization tau must be positive, got {tau}",
                  file=sys.stderr)
            raise SystemExit(2)
    return values


def cmd_solve(args):
    k = args.k[0]
    tau = args.tau[0] if args.tau else DEFAULT_TAU[args.family]
    _positive_tau([tau])
    sol = analysis.resolve_problem(args.problem, degree=k, seed=args.seed)
    n = 2 ** args.level
    mesh = analysis.build_problem_mesh(sol, args.family, n)
    fields, stats = solve_stokes(mesh, k, tau, sol)
    post = postprocess_all(fields, dirichlet=sol.velocity)
    errs = analysis.compute_errors(fields, sol, post)
    out = _outdir(args)
    side = sol.domain[0][1] - sol.domain[0][0]
    summary = {
        "problem": sol.name,
        "family": args.family,
        "k": k,
        "level": args.level,
        "n": n,
        "h": side / n,
        "tau": tau,
        "dofs": stats["matrix_dim"],
        "errors": errs,
        "stats": stats,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    export.fields_to_json(fields, out / "fields.json", post=post)
    if args.vtk:
        export.fields_to_vtk(fields, out / "fields.vtk", post=post)
    if args.mesh:
        export.mesh_to_json(mesh, out / "mesh.json")
        export.mesh_to_vtk(mesh, out / "mesh.vtk")
    print(
        f"{sol.name} {args.family} k={k} n={n} tau={tau:g} "
        f"dofs={stats['matrix_dim']}"
    )
    for name in ("u", "p", "L", "ustar"):
        print(f"  err_{name} = {errs[name]:.6e}")
    return 0


def cmd_convergence(args):
    taus = args.tau or [DEFAULT_TAU[args.family]]
    _positive_tau(taus)
    tau = taus[0]
    sol = analysis.resolve_problem(args.problem, degree=args.k[0], seed=args.seed)

    def progress(row):
        print(
            f"{row.family} k={row.degree} n={row.n:4d} dofs={row.dofs:8d} "
            f"err_u={row.err_u:.4e} err_p={row.err_p:.4e} "
            f"err_L={row.err_L:.4e} err_ustar={row.err_ustar:.4e}"
        )

    report = analysis.convergence_study(
        args.problem, args.family, args.k, args.levels,
        tau=tau, seed=args.seed, progress=progress,
    )
    out = _outdir(args)
    stem = f"convergence_{report.problem}_{args.family}"
    report.to_csv(out / f"{stem}.csv")
    report.to_json(out / f"{stem}.json")
    failures = []
    for (family, degree), slopes in sorted(report.slopes().items()):
        print(
            f"slopes {family} k={degree}: u={slopes['u']:.2f} p={slopes['p']:.2f} "
            f"L={slopes['L']:.2f} ustar={slopes['ustar']:.2f}"
        )
        if args.check:
            base, star = SLOPE_MARGIN[sol.dim]
            for name in ("u", "p", "L"):
                if slopes[name] < degree + base:
                    failures.append(f"{family} k={degree} {name}: {slopes[name]:.2f}")
            if slopes["ustar"] < degree + star:
                failures.append(f"{family} k={degree} ustar: {slopes['ustar']:.2f}")
    if failures:
        print("slope check FAILED:")
        for f in failures:
            print(f"  {f}")
        return 1
    return 0


def cmd_tau_sweep(args):
    taus = _positive_tau(args.tau)
    rows = analysis.tau_sweep(
        args.problem, args.family, args.k[0], args.level, taus, seed=args.seed,
        progress=lambda r: print(
            f"tau={r['tau']:10g} " + (
                f"err_u={r['err_u']:.4e} err_L={r['err_L']:.4e}"
                if not r.get("failed") else f"FAILED ({r['failed']})"
            )
        ),
    )
    out = _outdir(args)
    export.sweep_to_csv(rows, out / f"tau_sweep_{args.family}_k{args.k[0]}_l{args.level}.csv")
    if args.check:
        good = [r for r in rows if not r.get("failed")]
        if len(good) < 3:
            print("tau check FAILED: not enough successful solves")
            return 1
        errs = [r["err_u"] for r in good]
        i_min = errs.index(min(errs))
        interior = 0 < i_min < len(good) - 1
        l_grows = good[-1]["err_L"] > min(r["err_L"] for r in good)
        if not (interior and l_grows):
            print(
                f"tau check FAILED: interior_min={interior} l_deteriorates={l_grows}"
            )
            return 1
        print("tau check passed: interior velocity minimum, strain degrades at large tau")
    return 0


def cmd_check_identities(args):
    result = analysis.identity_residual_sweep(max_degree=args.k[-1], seed=args.seed)
    for case in result["cases"]:
        print(
            f"{case['element']:4s} k={case['degree']} "
            f"gauss={case['gauss']:.3e} stokes={case['stokes']:.3e}"
        )
    print(f"max residual = {result['max_residual']:.3e}")
    if args.check and result["max_residual"] > 1e-11:
        print("identity check FAILED")
        return 1
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hdg-stokes",
        description="HDG Stokes solver with strongly enforced stress symmetry",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS thread pools (needs threadpoolctl)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, problem=True):
        if problem:
            p.add_argument("--problem", default="wang2d", choices=analysis.PROBLEM_NAMES)
            p.add_argument("--family", default="quad", choices=sorted(FAMILIES))
        p.add_argument("--k", type=_parse_range, default=[2],
                       help="degree or range, e.g. 2 or 1..3")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--outdir", default="out")
        p.add_argument("--assert", dest="check", action="store_true",
                       help="exit nonzero when the run misses its targets")

    p = sub.add_parser("solve", help="single solve with error summary")
    common(p)
    p.add_argument("--level", type=int, default=3, help="refinement level, n = 2**level")
    p.add_argument("--tau", type=_parse_floats, default=None)
    p.add_argument("--vtk", action="store_true", help="write fields.vtk")
    p.add_argument("--mesh", action="store_true", help="write mesh.json and mesh.vtk")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("convergence", help="refinement study with rate fits")
    common(p)
    p.add_argument("--levels", type=_parse_range, default=[1, 2, 3, 4])
    p.add_argument("--tau", type=_parse_floats, default=None)
    p.set_defaults(fn=cmd_convergence)

    p = sub.add_parser("tau-sweep", help="error versus stabilization on a fixed mesh")
    common(p)
    p.add_argument("--level", type=int, default=4)
    p.add_argument("--tau", type=_parse_floats,
                   default=[0.1, 1.0, 4.0, 10.0, 100.0, 1000.0, 10000.0])
    p.set_defaults(fn=cmd_tau_sweep)

    p = sub.add_parser("check-identities",
                       help="operator integration-by-parts residuals")
    common(p, problem=False)
    p.set_defaults(fn=cmd_check_identities)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_threads(args.threads)
    if args.k is not None and any(k < 1 for k in args.k):
        parser.error("degrees must be at least 1")
    try:
        return args.fn(args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
