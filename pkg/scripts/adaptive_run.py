"""Adaptive loop on the sector (example1) or the disc-load square (example2).

    python3 scripts/adaptive_run.py example1 --kappa 100 --max-ndof 20000
    python3 scripts/adaptive_run.py example2 --outside 100   # kappa = 100 on the whole square

Writes history.csv and one VTK file per step to --out.
"""
import argparse
from pathlib import Path

from eqflux import adapt_solve, get_problem, loglog_slope
from eqflux.io import export_vtk, write_history_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("problem", choices=["example1", "example2"])
    ap.add_argument("--kappa", type=float, default=100.0)
    ap.add_argument("--outside", type=float, default=0.0,
                    help="example2 only: kappa outside the disc (0 keeps the reaction inside only)")
    ap.add_argument("--theta", type=float, default=0.5)
    ap.add_argument("--tol", type=float, default=1e-12)
    ap.add_argument("--max-steps", type=int, default=60)
    ap.add_argument("--max-ndof", type=int, default=20000)
    ap.add_argument("--vtk", action="store_true")
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    out = args.out or Path("results") / args.problem
    out.mkdir(parents=True, exist_ok=True)

    params = {"kappa": args.kappa}
    if args.problem == "example2":
        params["outside"] = args.outside
    spec = get_problem(args.problem, **params)
    error = "auto" if spec.exact is not None else "reference"

    def on_step(step, mesh, u_h, report):
        print(f"step {step:3d}  elements={mesh.n_elements:7d}  eta={report.total:.6e}")
        if args.vtk:
            export_vtk(mesh, out / f"mesh_step_{step}.vtk", {"u_h": u_h.values},
                       {"kappa": mesh.kappa, "eta": report.eta})

    result = adapt_solve(spec, args.tol, theta=args.theta, max_steps=args.max_steps, error=error,
                         max_ndof=args.max_ndof, on_step=on_step)
    write_history_csv(result.history, out / "history.csv")
    h = result.history
    tail = slice(-10, None)
    print(f"stopped: {result.stop_reason}")
    print(f"eta slope over last 10 steps: {loglog_slope(h.column('ndof')[tail], h.column('eta')[tail]):.3f}")
    if h.rows[-1].error is not None:
        print(f"error slope over last 10 steps: "
              f"{loglog_slope(h.column('ndof')[tail], h.column('error')[tail]):.3f}")
        print("effectivity per step: " + " ".join(f"{v:.3f}" for v in h.column("ieff")))


if __name__ == "__main__":
    main()
