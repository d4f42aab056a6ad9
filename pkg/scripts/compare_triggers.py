"""Mean distance to target over time, priority trigger against round-robin.

Runs both triggers on identical scenarios and writes the scenario-averaged
curves to a CSV. ``--plot`` additionally draws them (needs matplotlib).

    python scripts/compare_triggers.py --scenarios 100 --out fig2.csv
"""

import argparse
import csv
import logging
import time

import numpy as np

from etdmpc.constraints import ScaledGeometry, Weights
from etdmpc.dynamics import LinearModel, TimingConfig
from etdmpc.sim import generate_scenario, run
from etdmpc.trigger import PriorityParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", type=int, default=20)
    ap.add_argument("--N", type=int, default=15)
    ap.add_argument("--M", type=int, default=10)
    ap.add_argument("--rounds", type=int, default=180)
    ap.add_argument("--seed-base", type=int, default=9000)
    ap.add_argument("--out", default="trigger_comparison.csv")
    ap.add_argument("--plot", default=None, help="write a PNG of the curves here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    model = LinearModel.triple_integrator()
    geom = ScaledGeometry.default()
    timing = TimingConfig()
    weights = Weights.default(model)
    curves = {"pbt": [], "round_robin": []}
    success = {"pbt": [], "round_robin": []}
    wins = 0
    t0 = time.perf_counter()
    for s in range(args.scenarios):
        sc = generate_scenario(args.N, args.M, model.x_min[:3], model.x_max[:3], geom, args.seed_base + s)
        tavg = {}
        for name, trig in (("pbt", PriorityParams()), ("round_robin", "round_robin")):
            m = run(sc, model, timing, geom, weights, trig, rounds=args.rounds).metrics
            curves[name].append(m.mean_distance)
            success[name].append(m.success_rate)
            tavg[name] = m.time_averaged_distance
        wins += tavg["pbt"] <= tavg["round_robin"]
        print(f"seed {sc.seed}: pbt {tavg['pbt']:.4f}  rr {tavg['round_robin']:.4f}", flush=True)

    times = np.arange(args.rounds + 1) * float(timing.T)
    mean = {k: np.mean(v, axis=0) for k, v in curves.items()}
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "mean_dist_pbt", "mean_dist_round_robin"])
        for t, a, b in zip(times, mean["pbt"], mean["round_robin"]):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])

    for k in curves:
        print(f"{k:12s} time-averaged distance {np.mean(mean[k]):.4f}  success {np.mean(success[k]):.4f}")
    print(f"pbt no worse on {wins}/{args.scenarios} scenarios; {time.perf_counter() - t0:.0f}s")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(times, mean["pbt"], label="PBT")
        ax.plot(times, mean["round_robin"], label="round-robin")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("mean distance to target [m]")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=150)


if __name__ == "__main__":
    main()
