#!/usr/bin/env python3
"""Sweep the functional-inequality constant estimates over m and beta.

Example:
    python scripts/constants_sweep.py --m-list 2,3,4,5 --beta-list 1.05,1.1
"""

import argparse

from cuspflow.domain import build_domain, generate_grid
from cuspflow.inequalities import (
    estimate_poincare,
    estimate_sobolev_s0,
    estimate_weighted_sobolev_Cs,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m-list", default="2,3,4,5")
    ap.add_argument("--beta-list", default="1.1")
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-starts", type=int, default=20)
    args = ap.parse_args()

    print("name,m,beta,refinement,estimate,iterations")
    v = estimate_poincare(1.0, 512)
    print(f"poincare_slab,0,0,512,{v!r},0")
    for beta in (float(x) for x in args.beta_list.split(",")):
        for m in (int(x) for x in args.m_list.split(",")):
            grid = generate_grid(build_domain(m, beta), args.p)
            for est in (
                estimate_sobolev_s0(grid, "zero_on_H", args.seed, args.n_starts),
                estimate_weighted_sobolev_Cs(grid, args.seed, args.n_starts),
            ):
                print(
                    f"{est.name},{est.m},{est.beta},{est.refinement},"
                    f"{est.value!r},{est.iterations}"
                )


if __name__ == "__main__":
    main()
