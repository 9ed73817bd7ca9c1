#!/usr/bin/env python3
"""Delay-vs-false-alarm curves for the main policy families.

Runs lambda sweeps for the optimal, reduced-feedback, quantizer and
centralized policies on the reference two-sensor setup and prints the
interpolated delay at a few matched false-alarm rates.  This is the
script-level twin of `changefusion compare --config configs/setup1.json`.
"""

import argparse
import math

from changefusion import ChangeModel, NetworkModel, solve_value_function, sweep_lambda
from changefusion.policies import (
    OptimalPolicy,
    QuantizerPolicy,
    SuboptimalPolicy,
    centralized_equivalent,
    kl_thresholds,
    quantizer_spec,
    solve_quantizer_value_function,
)
from changefusion.sim import edd_at_pfa

MODEL = ChangeModel(m0=0.0, m1=0.75, p=0.05, nu=0.0)
NET = NetworkModel(
    sigma_obs_sq=[1.0, 1.0], gain=[1.0, 1.0], mac_sigma_sq=1.0, power=[7.5, 7.5]
)


def factories():
    quant = quantizer_spec(MODEL, NET, kl_thresholds(MODEL, NET))
    cnet = centralized_equivalent(NET)
    return {
        "optimal": lambda lam: OptimalPolicy(
            MODEL, NET, solve_value_function(MODEL, NET, lam)
        ),
        "suboptimal": lambda lam: SuboptimalPolicy(
            MODEL, NET, solve_value_function(MODEL, NET, lam)
        ),
        "quantizer": lambda lam: QuantizerPolicy(
            MODEL, NET, solve_quantizer_value_function(MODEL, quant, lam), quant
        ),
        "centralized": lambda lam: OptimalPolicy(
            MODEL, cnet, solve_value_function(MODEL, cnet, lam)
        ),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=2025)
    ap.add_argument(
        "--lambdas", type=float, nargs="+", default=[0.005, 0.01, 0.03, 0.08, 0.2, 0.5]
    )
    args = ap.parse_args()

    targets = [math.exp(-k) for k in (1, 2, 3)]
    print(f"{'policy':<14}" + "".join(f"  edd@e^-{k}" for k in (1, 2, 3)))
    for name, factory in factories().items():
        points = sweep_lambda(factory, args.lambdas, args.trials, args.seed)
        cells = []
        for t in targets:
            edd, se = edd_at_pfa(points, t)
            cells.append(f"{edd:7.2f}±{1.96 * se:.2f}")
        print(f"{name:<14}" + "  ".join(cells))


if __name__ == "__main__":
    main()
