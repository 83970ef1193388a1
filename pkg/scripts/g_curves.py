"""Exact pair-correlation curves for the test rules over a grid of mu.

Writes one CSV per rule with columns t, g(mu_1), g(mu_2), ... for plotting.
"""

import argparse
import csv
from pathlib import Path

from nbthin.analytic import Model, default_t_grid, g_exact
from nbthin.rules import ClusterFavouring, Geometric, Logistic, MaternI, Parity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/g_curves"))
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--mus", type=float, nargs="+", default=[0.1, 0.5, 1.0, 2.0])
    ap.add_argument("--n", type=int, default=221)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    rules = [MaternI(), Geometric(0.9, 0.5), ClusterFavouring(1.0), Logistic(0.5, 2), Parity()]
    grid = default_t_grid(args.n, 2.2)
    for rule in rules:
        models = [Model.from_mu(args.d, mu, rule) for mu in args.mus]
        path = args.out / f"{rule.kind}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *[f"mu={mu:g}" for mu in args.mus]])
            for t in grid:
                w.writerow([f"{t:.6g}", *[f"{g_exact(m, float(t)):.12g}" for m in models]])
        print(f"{rule.name}: {path}")


if __name__ == "__main__":
    main()
