"""Grid-refinement study of the explicit solver against the closed-form oracles.

PME(m=2) from Barenblatt data (elapsed 0.1 -> 1.1) and Burgers from a uniform
start (t = 0.5).  Prints L1 errors and the ratio between successive refinements.
"""

import argparse

from nlmarkov.coefficients import registry_lookup
from nlmarkov.initial import Dirac, Uniform
from nlmarkov.io import write_csv
from nlmarkov.oracles import barenblatt, cole_hopf_burgers
from nlmarkov.pde import auto_grid, solve_nlfpke


def pme_error(n: int) -> float:
    c = registry_lookup("pme", m=2)
    g = auto_grid(c, Dirac(0.0), -0.1, 1.0, n)
    u = solve_nlfpke(c, barenblatt(2, 1, -0.1, 0.0, 0.0, g), 0.0, [0.0, 1.0]).densities[-1]
    return u.l1(barenblatt(2, 1, -0.1, 0.0, 1.0, g))


def burgers_error(n: int) -> float:
    c = registry_lookup("burgers")
    datum = Uniform(-0.5, 0.5)
    g = auto_grid(c, datum, 0.0, 0.5, n)
    zeta = datum.to_density(g)
    u = solve_nlfpke(c, zeta, 0.0, [0.0, 0.5]).densities[-1]
    return u.l1(cole_hopf_burgers(zeta, 0.0, 0.5))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, nargs="+", default=[256, 512, 1024, 2048])
    ap.add_argument("--out", default="pde_convergence.csv")
    a = ap.parse_args()
    rows = []
    for name, fn in (("pme2", pme_error), ("burgers", burgers_error)):
        prev = None
        for n in a.cells:
            e = fn(n)
            ratio = e / prev if prev else float("nan")
            rows.append((name, n, e, ratio))
            print(f"{name:8s} n={n:5d} L1={e:.3e} ratio={ratio:.3f}", flush=True)
            prev = e
    write_csv(a.out, ["case", "n_cells", "l1", "ratio_to_coarser"], rows)


if __name__ == "__main__":
    main()
