"""Command line entry point: ``homowave <command> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .cell_problem import CellGrid, correctors_basis, default_cell_resolution
from .effective import build_effective_model, verify_structure
from .expr import parse_expression
from .harness import emit_report, macro_tensor, run_convergence_study, ucv_diagnostic, verify_apriori
from .problem import load_problem, validate_problem
from .rng import sample_path
from .wave_sim import Macro, Micro, SpatialGrid, dirichlet_laplacian, simulate


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _fmt(x) -> str:
    return repr(float(x))


def cmd_validate(args) -> int:
    pd = load_problem(args.problem)
    rep = validate_problem(pd, args.samples)
    for c in rep.checks:
        print(f"{c.name:12s} {'PASS' if c.passed else 'FAIL'}  observed={c.observed:.6g}  bound={c.bound:.6g}")
    return 0 if rep.passed else 1


def cmd_cell_solve(args) -> int:
    pd = load_problem(args.problem)
    d = pd.dimension
    x = _floats(args.x) if args.x else [0.5] * d
    grid = CellGrid(args.n or default_cell_resolution(d), d)
    cs = correctors_basis(pd, x, grid, args.tol, args.precondition, args.cell_period)
    print(f"x = {', '.join(f'{c:g}' for c in cs.x)}   n = {grid.n}   iterations = {cs.iterations}")
    if cs.approximate:
        print("note: quasi-periodic coefficient solved on a commensurate truncation (approximate)")
    print("effective tensor:")
    for row in cs.tensor:
        print("  " + "  ".join(f"{v: .12f}" for v in row))
    print(f"relative residual = {cs.residual:.3e}")
    for j in range(d):
        print(f"mean(chi_{j + 1}) = {float(np.mean(cs.chi[j])):.3e}")
    if args.dump_chi:
        ys = [c.ravel() for c in grid.nodes()]
        with open(args.dump_chi, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node"] + [f"y{k + 1}" for k in range(d)] + [f"chi{j + 1}" for j in range(d)])
            chi = cs.chi.reshape(d, -1)
            for i in range(chi.shape[1]):
                w.writerow([i] + [_fmt(y[i]) for y in ys] + [_fmt(chi[j, i]) for j in range(d)])
    return 0


def cmd_effective(args) -> int:
    pd = load_problem(args.problem)
    d = pd.dimension
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    tensor = macro_tensor(pd, SpatialGrid(d, args.nx) if pd.a_depends_on_x else None, args.n)
    eff = build_effective_model(pd, order=args.order)
    tensor_path = prefix.with_name(prefix.name + "_tensor.csv")
    with open(tensor_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if tensor.ndim == 2:
            for row in tensor:
                w.writerow([_fmt(v) for v in row])
        else:
            grid = SpatialGrid(d, args.nx)
            w.writerow([f"x{k + 1}" for k in range(d)] + [f"a{i + 1}{j + 1}" for i in range(d) for j in range(d)])
            for xc, t in zip(np.column_stack(grid.centers()), tensor):
                w.writerow([_fmt(c) for c in xc] + [_fmt(v) for v in t.ravel()])
    table_path = prefix.with_name(prefix.name + "_nonlinear.csv")
    with open(table_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["v", "f"] + [f"g{k + 1}" for k in range(pd.noise_dim)])
        for row in eff.table():
            w.writerow([_fmt(v) for v in row])
    rep = verify_structure(eff, pd.c1, pd.c2, pd.c3, pd.c4)
    for c in rep.checks:
        print(f"{c.name:16s} {'PASS' if c.passed else 'FAIL'}  observed={c.observed:.6g}  bound={c.bound:.6g}")
    print(f"wrote {tensor_path} and {table_path}")
    return 0 if rep.passed else 1


def cmd_simulate(args) -> int:
    pd = load_problem(args.problem)
    d = pd.dimension
    grid = SpatialGrid(d, args.nx)
    path = sample_path(pd.noise_dim, args.nt, pd.horizon, args.seed, args.path)
    if args.mode == "micro":
        if args.eps is None:
            raise SystemExit("--eps is required for micro runs")
        mode = Micro(args.eps)
    else:
        mode = Macro(macro_tensor(pd, grid, args.cell_n), build_effective_model(pd))
    traj = simulate(pd, mode, grid, path, args.nt, 1)
    L = dirichlet_laplacian(grid)
    w = grid.weight
    l2u = np.sqrt(np.sum(traj.u**2, axis=1) * w)
    h1u = np.sqrt(np.einsum("ij,ij->i", traj.u, (L @ traj.u.T).T) * w)
    l2v = np.sqrt(np.sum(traj.v**2, axis=1) * w)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "L2_u", "H1_u", "L2_v"])
        for row in zip(traj.times, l2u, h1u, l2v):
            wr.writerow([_fmt(v) for v in row])
    if args.dump_fields:
        xs = grid.nodes()
        fields = out.with_name(out.stem + "_fields.csv")
        with open(fields, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "node"] + [f"x{k + 1}" for k in range(d)] + ["u", "v"])
            for n in range(0, len(traj.times), args.dump_fields):
                for i in range(grid.size):
                    wr.writerow([_fmt(traj.times[n]), i] + [_fmt(x[i]) for x in xs] + [_fmt(traj.u[n, i]), _fmt(traj.v[n, i])])
    if not args.no_figures:
        from .plotting import trajectory_figure

        trajectory_figure(traj.times, {"L2 u": l2u, "H1 u": h1u, "L2 v": l2v}, out.with_suffix(".png"))
    print(f"sup ||u||_H1^2 = {traj.sup_H1_sq:.6g}  sup ||v||_L2^2 = {traj.sup_L2_sq:.6g}  int ||v||_H1^2 = {traj.int_H1_v:.6g}")
    return 0


def _print_verdicts(verdicts) -> bool:
    for k, v in verdicts.items():
        print(f"{k:28s} {'PASS' if v else 'FAIL'}")
    return all(verdicts.values())


def cmd_converge(args) -> int:
    pd = load_problem(args.problem)
    study = run_convergence_study(
        pd, _floats(args.eps), args.paths, args.delta, args.seed, args.workers, cell_n=args.cell_n
    )
    emit_report(study, args.out, figures=not args.no_figures)
    print(f"delta = {study.delta:.6g}")
    for e in study.eps:
        print(f"eps = {e:<10g} median D = {study.medians[e]:.6e}  exceedance = {study.exceedance[e]:.3f}")
    return 0 if _print_verdicts(study.verdicts) else 1


def cmd_verify(args) -> int:
    pd = load_problem(args.problem)
    rep = verify_apriori(pd, _floats(args.eps), args.paths, args.seed, args.workers)
    emit_report(rep, args.out, figures=not args.no_figures)
    for e, name, val in rep.rows():
        print(f"eps = {e:<10g} {name:24s} {val:.6e}")
    ok = _print_verdicts(rep.verdicts)
    eff = build_effective_model(pd)
    srep = verify_structure(eff, pd.c1, pd.c2, pd.c3, pd.c4)
    print(f"{'effective_structure':28s} {'PASS' if srep.passed else 'FAIL'}")
    return 0 if ok and srep.passed else 1


def cmd_ucv(args) -> int:
    chi = parse_expression(args.chi, {"t"})
    theta = parse_expression(args.theta, {"tau"})
    rows = ucv_diagnostic(chi, theta, _floats(args.eps), args.nt, args.seed)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eps", "qv", "bound", "integral", "passed"])
            for r in rows:
                w.writerow([_fmt(r.eps), _fmt(r.quadratic_variation), _fmt(r.bound), _fmt(r.integral), int(r.passed)])
    for r in rows:
        print(f"eps = {r.eps:<10g} QV(1) = {r.quadratic_variation:.8f}  bound = {r.bound:.8f}  "
              f"int = {r.integral: .6f}  {'PASS' if r.passed else 'FAIL'}")
    return 0 if all(r.passed for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="homowave", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="sampled check of the coefficient assumptions")
    p.add_argument("--problem", required=True)
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("cell-solve", help="correctors and effective tensor at one macro point")
    p.add_argument("--problem", required=True)
    p.add_argument("--x", default=None, help="macro point, comma separated")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--precondition", action="store_true")
    p.add_argument("--cell-period", type=float, default=1.0)
    p.add_argument("--dump-chi", default=None)
    p.set_defaults(func=cmd_cell_solve)

    p = sub.add_parser("effective", help="effective tensor and f~/g~ tables")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--n", type=int, default=None, help="cell resolution")
    p.add_argument("--nx", type=int, default=31, help="macro grid for x-dependent tensors")
    p.add_argument("--order", type=int, default=None, help="mean-value quadrature order")
    p.set_defaults(func=cmd_effective)

    p = sub.add_parser("simulate", help="one micro or macro trajectory")
    p.add_argument("--problem", required=True)
    p.add_argument("--mode", choices=("micro", "macro"), required=True)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--nx", type=int, default=255)
    p.add_argument("--nt", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--path", type=int, default=0)
    p.add_argument("--cell-n", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-fields", type=int, default=0, metavar="STRIDE")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("converge", help="Monte Carlo micro-vs-macro convergence study")
    p.add_argument("--problem", required=True)
    p.add_argument("--eps", default="0.125,0.0625,0.03125,0.015625")
    p.add_argument("--paths", type=int, default=16)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cell-n", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("verify", help="a-priori estimate proxies and effective structure")
    p.add_argument("--problem", required=True)
    p.add_argument("--eps", default="0.125,0.0625,0.03125,0.015625")
    p.add_argument("--paths", type=int, default=16)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ucv", help="quadratic-variation bound of oscillating integrands")
    p.add_argument("--chi", required=True, help="expression in t")
    p.add_argument("--theta", required=True, help="expression in tau")
    p.add_argument("--eps", default="0.125,0.0625,0.03125,0.015625")
    p.add_argument("--nt", type=int, default=4096)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ucv)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
