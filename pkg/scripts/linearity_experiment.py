#!/usr/bin/env python3
"""Sweep leave-one-out state distances across random instances and print
the fitted slopes, constant estimates, and closed-form residuals.

Example:
    python scripts/linearity_experiment.py --instances 20 --seed 7
"""

import argparse

from ressm.linearity import default_grid, run_verification


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--state-max", type=int, default=4)
    ap.add_argument("--len-max", type=int, default=32)
    args = ap.parse_args()

    reports = run_verification(args.instances, args.seed,
                               n_max=args.state_max, l_max=args.len_max)
    grid = default_grid()
    print(f"grid: {grid[0]:.0e} .. {grid[-1]:.0e} ({len(grid)} points), "
          f"slope fitted on the 4 smallest")
    print(f"{'#':>3} {'slope':>10} {'c_estimate':>12} {'residual':>10}  status")
    for i, r in enumerate(reports):
        status = "degenerate" if r.degenerate else ("ok" if r.passes() else "FAIL")
        slope = "-" if r.slope is None else f"{r.slope:.6f}"
        c = "-" if r.c_estimate is None else f"{r.c_estimate:.4e}"
        print(f"{i:>3} {slope:>10} {c:>12} {r.residual:>10.2e}  {status}")
    slopes = [r.slope for r in reports if r.slope is not None]
    print(f"\nslope range [{min(slopes):.6f}, {max(slopes):.6f}] over "
          f"{len(slopes)} fitted instances; "
          f"{sum(r.passes() for r in reports)}/{len(reports)} passed")


if __name__ == "__main__":
    main()
