"""Held-out prediction error of the initial and the causally restricted model.

Runs start at (s, s, 0) for several distances s from the training box, with and
without process noise, and report the RMSE of x3 for both models.

    python scripts/generalization.py --seed 0
"""

import argparse
import logging

import numpy as np

from causalid.causal import generalization_report, identify_structure
from causalid.dynamics import TrajectoryBatch, chirp_signal, simulate
from causalid.scenarios import builtin


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=10)
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    sc = builtin("appendix_c", args.seed)
    res = identify_structure(sc.plant, sc.pipeline, args.seed)
    print("non-causal:", ", ".join(sorted(res.graph.non_causal_pairs())))
    T = sc.pipeline.design.T
    print(f"{'start':>6} {'noise':>8} {'rmse_init':>11} {'rmse_caus':>11} {'ratio':>7}")
    for s in (3.0, 10.0, 30.0, 100.0):
        for noisy in (False, True):
            plant = sc.plant if noisy else sc.plant.with_noise(0.0)
            runs = [
                simulate(plant, [s, s, 0.0], 0.5 * np.roll(chirp_signal(T, 1.0, 0.01, 0.2, 3), 17 * r, axis=0), (args.seed, 9, r))
                for r in range(args.runs)
            ]
            rep = generalization_report(res.model_init, res.model, TrajectoryBatch(tuple(runs)), 2)
            print(f"{s:6.0f} {'yes' if noisy else 'no':>8} {rep['init']:11.3e} {rep['caus']:11.3e} {rep['caus'] / rep['init']:7.3f}")


if __name__ == "__main__":
    main()
