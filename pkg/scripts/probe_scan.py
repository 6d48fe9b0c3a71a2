#!/usr/bin/env python3
"""Density estimates of the crack-discounted surface functional for the
three reference crack sequences, over n and window radius."""
import argparse
from pathlib import Path

from fracture_hom.csvio import write_csv
from fracture_hom.mincut import SequenceDescriptor, default_probe_grid, sigma_probe


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/probe")
    ap.add_argument("--count", type=int, default=513, help="grid nodes per side on [-1, 1]^2")
    ap.add_argument("--n", type=int, nargs="+", default=[16, 32, 64, 128])
    ap.add_argument("--radii", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    grid = default_probe_grid(args.count)
    rows = []
    for kind in ("teeth", "fraction", "fixed-line"):
        desc = SequenceDescriptor(kind, 0.5)
        for r in sigma_probe(grid, desc, [(0.0, 0.0)], args.radii, args.n, [0, 1], diagonal=False,
                             jobs=args.jobs):
            rows.append((kind, r.n, r.rho, "e1" if r.axis == 0 else "e2", r.density))
            print(f"{kind:10s} n={r.n:4d} rho={r.rho:<5g} nu={rows[-1][3]} density={r.density:.4f}")
    write_csv(Path(args.out) / "probe_scan.csv", ("generator", "n", "rho", "nu", "density"), rows)


if __name__ == "__main__":
    main()
