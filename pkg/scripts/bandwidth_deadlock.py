"""Traffic and deadlocks for N=25 with M=10 units against M=N.

With M < N only M plans are broadcast per round; with M = N everyone
replans every round, which saturates the channel and, in the dense swarm,
tends to freeze vehicles against each other.
"""

import argparse
import logging

import numpy as np

from etdmpc.constraints import ScaledGeometry, Weights
from etdmpc.dynamics import LinearModel, TimingConfig
from etdmpc.sim import generate_scenario, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", type=int, default=10)
    ap.add_argument("--N", type=int, default=25)
    ap.add_argument("--M", type=int, nargs="+", default=[10, 25])
    ap.add_argument("--rounds", type=int, default=180)
    ap.add_argument("--seed-base", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    model = LinearModel.triple_integrator()
    geom = ScaledGeometry.default()
    timing = TimingConfig()
    weights = Weights.default(model)
    for M in args.M:
        replans, deadlocks, success, tavg = [], 0, [], []
        for s in range(args.scenarios):
            sc = generate_scenario(args.N, M, model.x_min[:3], model.x_max[:3], geom, args.seed_base + s)
            res = run(sc, model, timing, geom, weights, "pbt", rounds=args.rounds)
            replans.append(res.metrics.replan_counts.sum() / args.rounds)
            deadlocks += len(res.metrics.deadlocked)
            success.append(res.metrics.success_rate)
            tavg.append(res.metrics.time_averaged_distance)
        share = np.mean(replans) / args.N
        print(f"M={M:3d}: replans/round {np.mean(replans):6.2f} ({share:.0%} of all-replan traffic), "
              f"deadlocked vehicles {deadlocks}, success {np.mean(success):.4f}, "
              f"time-averaged distance {np.mean(tavg):.4f}")


if __name__ == "__main__":
    main()
