"""Scaled cumulant of the NNThreshold pairing against half the variance density."""

import argparse

from stabfield.empirical import test_function
from stabfield.estimators import CumulantScanConfig, estimate_scaled_cumulant
from stabfield.functionals import FunctionalSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--beta", type=float, default=0.25)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[250.0, 1000.0, 4000.0])
    ap.add_argument("--replicates", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    ccfg = CumulantScanConfig(args.beta, tuple(args.lambdas), args.replicates)
    reps = estimate_scaled_cumulant(FunctionalSpec.nn_threshold(0.3), test_function("poly:1:1"), 1.0, ccfg, args.seed,
                                    workers=args.workers)
    print("lambda,alpha,cumulant,std_error,variance_density,ratio")
    for r in reps:
        m = r.metadata
        ratio = r.value / (0.5 * m["variance_density"])
        print(f"{m['lambda']:g},{m['alpha']:.4f},{r.value:.5f},{r.std_error:.5f},{m['variance_density']:.5f},{ratio:.4f}")


if __name__ == "__main__":
    main()
