"""Compare the direct variance density with the two-point estimate under both pair-term factors."""

import argparse

from stabfield.empirical import test_function
from stabfield.estimators import PairCorrelationConfig, arbitrate_factor, estimate_variance_direct, estimate_variance_pair
from stabfield.functionals import FunctionalSpec
from stabfield.report import dumps_report

CASES = {
    "nn_threshold": (FunctionalSpec.nn_threshold(0.3), 1, 1.0),
    "knn_degree": (FunctionalSpec.knn_degree(1, 2), 2, 3.0),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", choices=sorted(CASES), default="nn_threshold")
    ap.add_argument("--lam", type=float, default=4096.0)
    ap.add_argument("--replicates", type=int, default=10_000)
    ap.add_argument("--configurations", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    spec, d, r_max = CASES[args.case]
    f = test_function("poly:1:1")
    direct = estimate_variance_direct(spec, f, 1.0, [args.lam], args.replicates, args.seed, dimension=d, workers=args.workers)[0]
    pcfg = PairCorrelationConfig(r_max=r_max, n_shells=10, aux_volume=1024.0, method="mecke", configurations=args.configurations)
    pair = estimate_variance_pair(spec, f, 1.0, pcfg, args.seed + 1, dimension=d, workers=args.workers)
    print(dumps_report({"case": args.case, "direct": direct, "pair": pair, "factor_check": arbitrate_factor(direct, pair)}), end="")


if __name__ == "__main__":
    main()
