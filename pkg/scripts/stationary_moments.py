#!/usr/bin/env python3
"""Stationary moments, Simpson index and ancestral type probability h(x).

For a grid of selection strengths and one fixed environment measure, solve
the two recursions and tabulate w_1, w_2, E[S] and h at a few frequencies.
"""

import argparse

import numpy as np

from wfenv.model import LevyMeasure, ModelParams
from wfenv.recursions import h_series, simpson_index, solve_fearnhead, solve_wn
from wfenv.records import csv_text, write_text


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--theta", type=float, default=1.0)
    ap.add_argument("--nu0", type=float, default=0.5)
    ap.add_argument("--atom", default="1.0:0.3", help="MASS:PEAK, empty for no environment")
    ap.add_argument("--sigmas", default="0,0.5,1,2,4")
    ap.add_argument("--K", type=int, default=64)
    ap.add_argument("--out", default="stationary.csv")
    args = ap.parse_args()

    mu = LevyMeasure(((float(args.atom.split(":")[0]), float(args.atom.split(":")[1])),)) if args.atom \
        else LevyMeasure()
    xs = (0.1, 0.25, 0.5, 0.75)
    rows = []
    for sigma in map(float, args.sigmas.split(",")):
        p = ModelParams(sigma, args.theta, args.nu0)
        w = solve_wn(p, mu, K=args.K)
        a = solve_fearnhead(p, mu, K=args.K)
        h = [h_series(a, x) for x in xs]
        rows.append((sigma, w[1], w[2], simpson_index(w), *h))
        print(f"sigma={sigma:<4} E[X]={1 - w[1]:.4f}  E[S]={simpson_index(w):.4f}  "
              f"h={np.round(h, 4).tolist()}")
    write_text(args.out, csv_text(["sigma", "w1", "w2", "simpson", *(f"h_{x}" for x in xs)], rows))


if __name__ == "__main__":
    main()
