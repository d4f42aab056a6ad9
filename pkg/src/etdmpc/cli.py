"""Command line front-end: ``run``, ``verify`` and ``gen-scenario``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sim, verify
from .config import ConfigError, RunConfig, build_config, parse_config
from .constraints import SeparationViolation

log = logging.getLogger("etdmpc")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VIOLATION = 2
EXIT_PACKING = 3

TRAJECTORY_COLUMNS = ["seed", "round", "time_s", "uav", "px", "py", "pz", "vx", "vy", "vz",
                      "dist_to_target", "replanned", "solver_status"]


def _num(x: float) -> str:
    return repr(float(x))


def variant_name(kind: str, M: int) -> str:
    return f"{kind}_M{M}"


def load_scenario(path: Path) -> sim.Scenario:
    with open(path) as fh:
        return sim.Scenario.from_dict(json.load(fh))


def scenarios_for(cfg: RunConfig, M: int) -> list[sim.Scenario]:
    if cfg.scenario_file is not None:
        sc = load_scenario(cfg.scenario_file)
        return [sim.Scenario(sc.N, M, sc.initial_states, sc.targets, sc.space_lower, sc.space_upper, sc.seed)]
    seeds = range(cfg.seed_base, cfg.seed_base + cfg.ensemble)
    return [sim.generate_scenario(cfg.N, M, cfg.space_lower, cfg.space_upper, cfg.geom, s, cfg.model.n) for s in seeds]


def write_trajectory_csv(path: Path, result: sim.RunResult) -> None:
    h = result.history
    states = h.states()
    dist = result.metrics.distances
    d = h.model.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for r in range(states.shape[0]):
            t = r * h.timing.T
            # the plan flown from boundary r was made in round r-1
            rec = h.records[r - 1] if r > 0 else None
            for i in range(h.scenario.N):
                x = states[r, i]
                p = list(x[:d]) + [0.0] * (3 - d)
                v = list(x[d:2 * d]) + [0.0] * (3 - d)
                replanned = int(rec.replanned[i]) if rec else 0
                status = rec.status[i] if rec else "initial"
                w.writerow([h.scenario.seed, r, _num(t), i, *map(_num, p[:3]), *map(_num, v[:3]),
                            _num(dist[r, i]), replanned, status])


def verification_summary(result: sim.RunResult) -> dict:
    m = result.metrics
    return {
        "seed": result.history.scenario.seed,
        "trigger": result.history.trigger,
        "N": result.history.scenario.N,
        "M": result.history.scenario.M,
        "ok": result.guarantees_ok,
        "lemma1": result.separation.summary(),
        "theorem2": result.dense.summary(),
        "theorem1": result.theorem1.summary(),
        "metrics": {
            "time_averaged_distance": m.time_averaged_distance,
            "final_mean_distance": float(m.mean_distance[-1]),
            "success_rate": m.success_rate,
            "deadlocked": m.deadlocked,
            "arrival_round": m.arrival_round,
            "replans_per_round": float(m.replan_counts.sum() / max(len(result.history.records), 1)),
            "arrival_tol": m.arrival_tol,
        },
    }


def _offence(result: sim.RunResult) -> str:
    for name, rep in (("lemma1", result.separation), ("theorem2", result.dense)):
        v = rep.first_violation
        if v is not None and (name == "lemma1" or rep.guarantee_configured):
            return f"{name}: round {v.round}, pair {v.pair}, distance {v.distance:.6g}"
    if result.theorem1.breaches:
        b = result.theorem1.breaches[0]
        return f"theorem1: round {b.round}, uav {b.uav}, {b.reason}"
    return "theorem2: proof inequality failed"


@dataclass
class RunOutcome:
    variant: str
    seed: int
    ok: bool
    error: str | None
    summary: dict | None
    mean_distance: list[float] | None


def _run_one(cfg: RunConfig, kind: str, scenario: sim.Scenario, out: Path) -> RunOutcome:
    name = variant_name(kind, scenario.M)
    vdir = out / "runs" / name
    vdir.mkdir(parents=True, exist_ok=True)
    stem = f"seed{scenario.seed}"
    try:
        result = sim.run(scenario, cfg.model, cfg.timing, cfg.geom, cfg.weights, cfg.trigger_for(kind),
                         cfg.rounds, settings=cfg.solver, substeps=cfg.substeps, arrival_tol=cfg.arrival_tol)
    except sim.SimulationError as exc:
        (vdir / f"{stem}_verification.json").write_text(
            json.dumps({"seed": scenario.seed, "trigger": kind, "ok": False, "error": str(exc)}, indent=2, sort_keys=True) + "\n")
        return RunOutcome(name, scenario.seed, False, str(exc), None, None)
    write_trajectory_csv(vdir / f"{stem}_trajectory.csv", result)
    summary = verification_summary(result)
    (vdir / f"{stem}_verification.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    sim.write_round_log(vdir / f"{stem}_rounds.jsonl", result, {"config": _config_for_log(cfg, kind, scenario.M)})
    err = None if result.guarantees_ok else _offence(result)
    return RunOutcome(name, scenario.seed, result.guarantees_ok, err, summary, result.metrics.mean_distance.tolist())


def _config_for_log(cfg: RunConfig, kind: str, M: int) -> dict:
    raw = json.loads(json.dumps(cfg.raw))
    raw["trigger"]["kind"] = kind
    raw["M"] = M
    raw["scenario_file"] = None
    raw["ensemble"] = 1
    return raw


def _job(args):
    cfg, kind, scenario, out = args
    return _run_one(cfg, kind, scenario, out)


def run_ensemble(cfg: RunConfig, out: Path | None = None) -> int:
    """Run every (trigger, M) variant on the configured seeds and write reports."""
    out = Path(out if out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc)
    jobs = []
    try:
        for kind, M in cfg.variants():
            jobs.extend((cfg, kind, sc, out) for sc in scenarios_for(cfg, M))
    except sim.PackingFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PACKING
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            outcomes = list(pool.map(_job, jobs))
    else:
        outcomes = [_job(j) for j in jobs]
    outcomes.sort(key=lambda o: (o.variant, o.seed))

    (out / "effective_config.yaml").write_text(cfg.effective_yaml())
    _write_ensemble_csv(out / "ensemble_metrics.csv", cfg, outcomes)
    summary = _ensemble_summary(cfg, outcomes)
    (out / "ensemble_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    meta = {
        "started_utc": started.isoformat(),
        "finished_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config_source": str(cfg.source) if cfg.source else None,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "arrival_tol": cfg.arrival_tol,
        "argv": sys.argv,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    bad = [o for o in outcomes if not o.ok]
    for o in bad:
        print(f"violation: {o.variant} seed {o.seed}: {o.error}", file=sys.stderr)
    for name, v in summary["variants"].items():
        tavg = "n/a" if v["time_averaged_distance"] is None else f"{v['time_averaged_distance']:.4f}"
        print(f"{name}: runs={v['runs']} success={v['success_rate']:.4f} "
              f"time_avg_dist={tavg} deadlocks={v['deadlocks']}")
    for note in summary["notes"]:
        print(note)
    return EXIT_VIOLATION if bad else EXIT_OK


def _write_ensemble_csv(path: Path, cfg: RunConfig, outcomes: list[RunOutcome]) -> None:
    names = [variant_name(k, M) for k, M in cfg.variants()]
    series = {}
    for name in names:
        rows = [o.mean_distance for o in outcomes if o.variant == name and o.mean_distance is not None]
        series[name] = np.mean(rows, axis=0) if rows else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "time_s"] + [f"mean_dist_{n}" for n in names])
        for r in range(cfg.rounds + 1):
            row = [r, _num(r * cfg.timing.T)]
            row += ["" if series[n] is None else _num(series[n][r]) for n in names]
            w.writerow(row)


def _ensemble_summary(cfg: RunConfig, outcomes: list[RunOutcome]) -> dict:
    variants = {}
    for kind, M in cfg.variants():
        name = variant_name(kind, M)
        mine = [o for o in outcomes if o.variant == name]
        done = [o.summary["metrics"] for o in mine if o.summary]
        variants[name] = {
            "trigger": kind,
            "M": M,
            "runs": len(mine),
            "failed_runs": sum(not o.ok for o in mine),
            "success_rate": float(np.mean([m["success_rate"] for m in done])) if done else 0.0,
            "time_averaged_distance": float(np.mean([m["time_averaged_distance"] for m in done])) if done else None,
            "deadlocks": int(sum(len(m["deadlocked"]) for m in done)),
            "replans_per_round": float(np.mean([m["replans_per_round"] for m in done])) if done else None,
            "violations": [{"seed": o.seed, "detail": o.error} for o in mine if not o.ok],
        }
    notes = []
    for kind in cfg.trigger_kinds:
        full = [M for M in cfg.M_values if M >= cfg.N]
        part = [M for M in cfg.M_values if M < cfg.N]
        for Mf in full:
            for Mp in part:
                a, b = variants[variant_name(kind, Mf)], variants[variant_name(kind, Mp)]
                if a["deadlocks"] > b["deadlocks"]:
                    notes.append(f"{kind}: M={Mf} (all replanned) has more deadlocks than M={Mp} "
                                 f"({a['deadlocks']} vs {b['deadlocks']})")
    return {"variants": variants, "notes": notes, "N": cfg.N, "rounds": cfg.rounds}


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    return run_ensemble(cfg, args.output_dir)


def cmd_verify(args) -> int:
    try:
        header, records = sim.read_round_log(args.log)
        cfg = build_config(header.get("config", {}))
        scenario = sim.Scenario.from_dict(header["scenario"])
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = sim.replay(scenario, cfg.model, cfg.timing, cfg.geom, cfg.weights, header["trigger"], records,
                        substeps=cfg.substeps, arrival_tol=cfg.arrival_tol)
    # the full re-assembly check, independent of the values logged during the run
    try:
        result.theorem1 = verify.check_theorem1(result.history, reassemble=True)
    except SeparationViolation as exc:
        print(f"violation: seed {scenario.seed}: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    summary = verification_summary(result)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    if not result.guarantees_ok:
        print(f"violation: seed {scenario.seed}: {_offence(result)}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_gen_scenario(args) -> int:
    cfg = parse_config(args.config)
    out = Path(args.output_dir if args.output_dir else cfg.output_dir) / "scenarios"
    out.mkdir(parents=True, exist_ok=True)
    try:
        scs = scenarios_for(cfg, cfg.M_values[0])
    except sim.PackingFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PACKING
    for sc in scs:
        path = out / f"seed{sc.seed}.json"
        path.write_text(json.dumps(sc.to_dict(), indent=2, sort_keys=True) + "\n")
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="etdmpc", description="Event-triggered distributed MPC swarm experiments")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver fallbacks and progress")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a scenario or an ensemble from a config file")
    p.add_argument("config")
    p.add_argument("-o", "--output-dir", default=None, help="override output_dir from the config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", help="re-run the guarantee checks on a saved round log")
    p.add_argument("log")
    p.add_argument("-o", "--output", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("gen-scenario", help="write scenario files only")
    p.add_argument("config")
    p.add_argument("-o", "--output-dir", default=None)
    p.set_defaults(func=cmd_gen_scenario)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
