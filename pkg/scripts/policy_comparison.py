#!/usr/bin/env python3
"""Compare SC throughput under the three routing policies over a load sweep.

Example:
    python scripts/policy_comparison.py --c1 1 --c2 2 --rhos 0.1 0.3 0.5 0.7 0.9
"""

import argparse

from caflow.ctmc import solve_model
from caflow.model import CellConfig, Policy, TrafficMix


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--c1", default="1", help="carrier-1 peak rate (exact string ok)")
    parser.add_argument("--c2", default="2", help="carrier-2 peak rate")
    parser.add_argument("--rhos", nargs="+", type=float,
                        default=[0.1, 0.3, 0.5, 0.7, 0.9])
    args = parser.parse_args()

    cfg = CellConfig.single_area(args.c1, args.c2)
    total = cfg.areas[0].c_total
    print(f"{'rho':>5} {'jfq':>9} {'jsq':>9} {'bernoulli':>9}")
    for rho in args.rhos:
        traffic = TrafficMix(rho * total, 1.0, 1.0)
        row = []
        for policy in (Policy.JFQ, Policy.JSQ, Policy.BERNOULLI):
            report, _ = solve_model(cfg, traffic, policy)
            row.append(report.gamma_sc(0))
        print(f"{rho:5.2f} {row[0]:9.4f} {row[1]:9.4f} {row[2]:9.4f}")


if __name__ == "__main__":
    main()
