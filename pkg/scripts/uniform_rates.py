"""Error and estimator under uniform refinement of the sin*sin problem.

    python3 scripts/uniform_rates.py --kappa 1 --levels 4 8 16 32 64
"""
import argparse
from pathlib import Path

from eqflux import estimate, exact_error, get_problem, loglog_slope, project_data, solve
from eqflux.fem import dofmap
from eqflux.io import write_table_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="sinsin", choices=["sinsin", "layer"])
    ap.add_argument("--kappa", type=float, default=1.0)
    ap.add_argument("--levels", type=int, nargs="+", default=[4, 8, 16, 32, 64])
    ap.add_argument("--out", type=Path, default=Path("results/uniform.csv"))
    args = ap.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for n in args.levels:
        spec = get_problem(args.problem, kappa=args.kappa, n=n)
        mesh = spec.initial_mesh()
        u_h = solve(mesh, spec)
        rep = estimate(u_h, project_data(mesh, spec.f, spec.g_neumann))
        err = exact_error(u_h, spec)
        rows.append((n, dofmap(mesh).ndof, rep.total, err, rep.total / err))
        print(f"n={n:4d}  ndof={rows[-1][1]:7d}  eta={rep.total:.6e}  error={err:.6e}  ieff={rep.total / err:.4f}")
    write_table_csv(("n", "ndof", "eta", "error", "ieff"), rows, args.out)
    ndof = [r[1] for r in rows]
    print(f"slopes vs ndof: error {loglog_slope(ndof, [r[3] for r in rows]):.3f}, "
          f"eta {loglog_slope(ndof, [r[2] for r in rows]):.3f}")


if __name__ == "__main__":
    main()
