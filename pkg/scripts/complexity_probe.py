#!/usr/bin/env python3
"""Per-iteration runtime scaling probe.

Times the training sweep while doubling the instance count and the factor
count independently, and prints the observed ratios against the linear
O(M N D K_max) expectation.
"""

import argparse

import numpy as np

from wsibp import ModelConfig, fit, sample_dataset


def per_iter_seconds(n: int, k_extra: int, feature_dim: int,
                     iters: int) -> float:
    config = ModelConfig(k_objects=4, k_attributes=4, k_extra=k_extra,
                         sigma=0.3, beta=0.0, rho=0.0, max_iters=iters,
                         tol=0.0, seed=0)
    ds = sample_dataset(config, 2, n, feature_dim, seed=0, labels=1.0,
                        grid_adjacency=False)
    result = fit(ds.bags, config, use_mrf=False)
    return float(np.median([t for _, t in result.trace[1:]]))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--base-instances", type=int, default=3000)
    ap.add_argument("--feature-dim", type=int, default=32)
    ap.add_argument("--iters", type=int, default=5)
    args = ap.parse_args()

    n = args.base_instances
    base = per_iter_seconds(n, 0, args.feature_dim, args.iters)
    double_n = per_iter_seconds(2 * n, 0, args.feature_dim, args.iters)
    double_k = per_iter_seconds(n, 8, args.feature_dim, args.iters)

    print(f"{'configuration':<28}{'sec/iter':>12}{'ratio':>8}")
    print(f"{'N=%d, K=8' % n:<28}{base:>12.4f}{1.0:>8.2f}")
    print(f"{'N=%d, K=8' % (2 * n):<28}{double_n:>12.4f}{double_n / base:>8.2f}")
    print(f"{'N=%d, K=16' % n:<28}{double_k:>12.4f}{double_k / base:>8.2f}")
    print("\nlinear scaling predicts ratios near 2.0 for both doublings")


if __name__ == "__main__":
    main()
