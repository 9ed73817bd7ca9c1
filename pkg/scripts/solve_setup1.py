#!/usr/bin/env python3
"""Solve the two-sensor reference setup and print the stopping threshold.

Quick sanity check that the DP solver converges and where the threshold
lands as the delay weight moves.
"""

import argparse

import numpy as np

from changefusion import ChangeModel, NetworkModel, solve_value_function


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.005, 0.01, 0.03, 0.1])
    ap.add_argument("--grid-points", type=int, default=1000)
    args = ap.parse_args()

    model = ChangeModel(m0=0.0, m1=0.75, p=0.05, nu=0.0)
    net = NetworkModel(
        sigma_obs_sq=[1.0, 1.0], gain=[1.0, 1.0], mac_sigma_sq=1.0, power=[7.5, 7.5]
    )
    for lam in args.lambdas:
        vf = solve_value_function(model, net, lam, grid_points=args.grid_points)
        print(
            f"lambda={lam:<8g} mu_star={vf.mu_star:.6f} "
            f"iters={vf.iterations:<4d} J(0)={vf.values[0]:.6f} "
            f"max|J''|={np.max(np.abs(np.diff(vf.values, 2))):.2e}"
        )


if __name__ == "__main__":
    main()
