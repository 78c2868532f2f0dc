"""Effectivity index against kappa on a fixed mesh, for the layer and sector problems.

    python3 scripts/kappa_sweep.py --out results/sweep
"""
import argparse
from pathlib import Path

import numpy as np

from eqflux import estimate, exact_error, get_problem, project_data, solve
from eqflux.io import SWEEP_COLUMNS, write_table_csv


def sweep(name, kappas, **params):
    rows = []
    for kappa in kappas:
        spec = get_problem(name, kappa=kappa, **params)
        mesh = spec.initial_mesh()
        u_h = solve(mesh, spec)
        rep = estimate(u_h, project_data(mesh, spec.f, spec.g_neumann), spec.mode, spec.constants())
        err = exact_error(u_h, spec)
        rows.append((kappa, rep.total, err, rep.total / err))
        print(f"{name:9s} kappa={kappa:9.2e}  eta={rep.total:.6e}  error={err:.6e}  ieff={rep.total / err:.4f}")
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/sweep"))
    ap.add_argument("--n", type=int, default=16, help="layer mesh subdivisions per side")
    ap.add_argument("--segments", type=int, default=64, help="arc segments of the sector mesh")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    kappas = np.logspace(-3, 6, 10)
    write_table_csv(SWEEP_COLUMNS, sweep("layer", kappas, n=args.n), args.out / "layer.csv")
    write_table_csv(SWEEP_COLUMNS, sweep("example1", kappas, boundary_segments=args.segments),
                    args.out / "example1.csv")


if __name__ == "__main__":
    main()
