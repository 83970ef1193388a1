"""Regime comparison: every bound route for the showcase rules across mu.

Prints a Markdown table per mu (rows are rules, columns are routes).
"""

import argparse

from nbthin.analytic import Model
from nbthin.bounds import Constants, compare_routes
from nbthin.geometry import Window
from nbthin.rules import Geometric


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lam", type=float, default=50.0)
    ap.add_argument("--mus", type=float, nargs="+", default=[0.05, 0.5, 2.0])
    ap.add_argument("--side", type=float, default=1.0)
    args = ap.parse_args()

    window = Window((0.0, 0.0), (args.side, args.side))
    for mu in args.mus:
        model = Model.from_mu(2, mu, Geometric(0.9, 0.5), lam=args.lam)
        print(f"\n### mu = {mu:g} (r = {model.r:.4g}, lambda = {args.lam:g})\n")
        print(compare_routes(model, window, constants=Constants()).to_markdown())


if __name__ == "__main__":
    main()
