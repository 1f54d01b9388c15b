"""Distribution of the standardized test statistic on truly non-causal pairs.

For every test on a pair the oracle says is non-causal, z = (empirical - mc_mean) / mc_std.
A pair is (falsely) declared causal when z >= nu, so the tail of z above nu is the
false-positive rate per test.

    python scripts/null_calibration.py kinematic_robot --seeds 10
"""

import argparse
import logging

import numpy as np

from causalid.causal import ground_truth_lti, identify_structure
from causalid.scenarios import builtin


def main():
    p = argparse.ArgumentParser()
    p.add_argument("scenario")
    p.add_argument("--seeds", type=int, default=10)
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    zs, wrong = [], 0
    for seed in range(args.seeds):
        sc = builtin(args.scenario, seed)
        res = identify_structure(sc.plant, sc.pipeline, seed)
        state, inp = ground_truth_lti(sc.plant.A, sc.plant.B, sc.pipeline.design.T)
        seed_ok = True
        for r in res.graph.evidence:
            j = int(r.source[1:]) - 1
            truth = (state if r.source[0] == "x" else inp)[r.target, j]
            if not truth and r.mc_std > 0:
                zs.append((r.mmd2_empirical - r.mc_mean) / r.mc_std)
            seed_ok &= (r.decision == "causal") == truth
        wrong += not seed_ok
        print(f"seed {seed}: {'exact' if seed_ok else 'errors'}", flush=True)
    zs = np.array(zs)
    print(f"{args.scenario}: {wrong}/{args.seeds} seeds with errors; {len(zs)} null tests")
    for nu in (1.0, 2.0, 3.0, 5.0):
        print(f"  P(z >= {nu}) = {np.mean(zs >= nu):.3f}")
    print(f"  z quantiles 50/90/99%: {np.round(np.quantile(zs, [0.5, 0.9, 0.99]), 2).tolist()}")


if __name__ == "__main__":
    main()
