"""Packed fraction of the one-dimensional packing functional as the time horizon grows.

The fraction approaches the random sequential adsorption jamming limit, about 0.7476.
"""

import argparse

from stabfield.empirical import test_function
from stabfield.estimators import estimate_lln
from stabfield.functionals import FunctionalSpec

JAMMING_LIMIT = 0.747597920253


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--taus", type=float, nargs="+", default=[2.0, 10.0, 50.0])
    ap.add_argument("--lam", type=float, default=1e4)
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    f = test_function("poly:1:1")
    print("tau,fraction,std_error,gap_to_jamming")
    for j, tau in enumerate(args.taus):
        r = estimate_lln(FunctionalSpec.packing(1.0), f, tau, [args.lam], args.replicates, args.seed + j,
                         workers=args.workers, target_replicates=0)[0]
        print(f"{tau:g},{r.value:.6f},{r.std_error:.6f},{JAMMING_LIMIT - r.value:.6f}")


if __name__ == "__main__":
    main()
