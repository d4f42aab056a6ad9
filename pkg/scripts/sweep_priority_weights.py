"""Grid over priority weights against the round-robin baseline.

This is how the default weights in ``PriorityParams`` were chosen. Seeds
default to a range disjoint from the acceptance ensemble.

    python scripts/sweep_priority_weights.py --seeds 10 30
"""

import argparse
import itertools
import logging
import math

import numpy as np

from etdmpc.constraints import ScaledGeometry, Weights
from etdmpc.dynamics import LinearModel, TimingConfig
from etdmpc.sim import generate_scenario, run
from etdmpc.trigger import PriorityParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs=2, default=[10, 30], metavar=("FIRST", "STOP"))
    ap.add_argument("--N", type=int, default=15)
    ap.add_argument("--M", type=int, default=10)
    ap.add_argument("--rounds", type=int, default=180)
    ap.add_argument("--alpha1", type=float, nargs="+", default=[1.0, 2.0])
    ap.add_argument("--alpha2", type=float, nargs="+", default=[0.5, 3.0, 10.0])
    ap.add_argument("--alpha3", type=float, nargs="+", default=[0.0, 0.2, 1.0])
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    model = LinearModel.triple_integrator()
    geom = ScaledGeometry.default()
    timing = TimingConfig()
    weights = Weights.default(model)
    scenarios = [generate_scenario(args.N, args.M, model.x_min[:3], model.x_max[:3], geom, s)
                 for s in range(*args.seeds)]

    def evaluate(trigger):
        ms = [run(sc, model, timing, geom, weights, trigger, rounds=args.rounds).metrics for sc in scenarios]
        return np.mean([m.time_averaged_distance for m in ms]), np.mean([m.success_rate for m in ms])

    d_rr, s_rr = evaluate("round_robin")
    print(f"round_robin                     distance {d_rr:.4f} success {s_rr:.4f}", flush=True)
    for a1, a2, a3 in itertools.product(args.alpha1, args.alpha2, args.alpha3):
        d, s = evaluate(PriorityParams(a1, a2, a3, math.pi / 4))
        flag = "<= rr" if d <= d_rr and s >= s_rr else ""
        print(f"alpha=({a1:g}, {a2:g}, {a3:g}) distance {d:.4f} success {s:.4f} {flag}", flush=True)


if __name__ == "__main__":
    main()
