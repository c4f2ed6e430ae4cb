"""Command-line pipeline: simulate | sample | train | tune | explore | bench.

Each stage reads its predecessor's files and writes its own artifacts into
--out. Exit codes: 0 success, 1 domain failure (infeasible rollout, missed
convergence, or a collision), 2 usage/configuration errors.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench as bench_mod
from . import dataset as dataset_mod
from . import svm as svm_mod
from . import tuner as tuner_mod
from .config import ConfigError, RunConfig, load_run_config
from .constraints import ClassKParams
from .controller import rollout_scenario, write_trajectory_csv
from .exploration import make_exploration_scenario, run_episode, save_episode_reports
from .persistence import atomic_write_text
from .scenario import save_scenario

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _require(path, what):
    if not os.path.exists(path):
        raise UsageError(f"missing {what}: {path}")
    return path


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _params_from(rc: RunConfig, args) -> ClassKParams:
    if getattr(args, "params", None):
        vals = [float(t) for t in args.params.split(",")]
        if len(vals) != 4:
            raise UsageError("--params needs p1,p2,q1,q2")
        return ClassKParams((vals[0], vals[1]), (vals[2], vals[3]))
    if rc.params is not None:
        return rc.params
    raise UsageError("no parameters given: set [params] in the config or pass --params")


def cmd_simulate(rc: RunConfig, args) -> int:
    out = _out_dir(args)
    scenario = rc.scenario()
    params = _params_from(rc, args)
    rec = rollout_scenario(scenario, rc.controller, params)
    write_trajectory_csv(rec, os.path.join(out, "trajectory.csv"))
    summary = {
        "feasible": rec.feasible,
        "converged": rec.converged,
        "t_converge": rec.t_converge,
        "infeasible_t": rec.infeasible_t,
        "D": rec.D,
        "no_activation": rec.no_activation,
        "min_barrier": rec.min_barrier,
        "params": {"p": list(params.p), "q": list(params.q)},
    }
    atomic_write_text(os.path.join(out, "summary.json"), json.dumps(summary, indent=2) + "\n")
    print(
        f"feasible={rec.feasible} converged={rec.converged} "
        f"D={rec.D if rec.D is not None else 'n/a'} min_barrier={rec.min_barrier:.3f}"
    )
    return EXIT_OK if rec.feasible else EXIT_DOMAIN


def cmd_sample(rc: RunConfig, args) -> int:
    out = _out_dir(args)
    count = args.samples if args.samples else rc.sample_count
    ds = dataset_mod.build_dataset(
        count, rc.seed, scenario=rc.scenario(), cfg=rc.controller, workers=rc.workers
    )
    dataset_mod.save_dataset(ds, os.path.join(out, "dataset.csv"))
    print(
        f"sampled={count} discarded={ds.n_discarded} labeled={len(ds.labeled)} "
        f"feasible_fraction={ds.feasible_fraction:.3f} best_D={ds.best_feasible_D():.3f}"
    )
    return EXIT_OK


def cmd_train(rc: RunConfig, args) -> int:
    out = _out_dir(args)
    ds = dataset_mod.load_dataset(_require(args.data, "dataset CSV"))
    sub = ds.prefix(args.samples) if args.samples else ds
    model = svm_mod.train(
        sub, kp=rc.svm.kernel, C=rc.svm.C, kkt_tol=rc.svm.kkt_tol, max_passes=rc.svm.max_passes
    )
    svm_mod.save_model(model, os.path.join(out, "model.json"))
    X, y = sub.matrix()
    print(f"training accuracy: {model.training_accuracy:.4f}  support vectors: {len(model.coef)}")
    print(f"training confusion: {svm_mod.confusion(model, X, y)}")
    if args.eval_data:
        ev = dataset_mod.load_dataset(_require(args.eval_data, "evaluation dataset CSV"))
        Xe, ye = ev.matrix()
        print(f"held-out accuracy: {svm_mod.accuracy(model, Xe, ye):.4f}")
        print(f"held-out confusion: {svm_mod.confusion(model, Xe, ye)}")
    return EXIT_OK


def cmd_tune(rc: RunConfig, args) -> int:
    out = _out_dir(args)
    model = svm_mod.load_model(_require(args.model, "classifier model JSON"))
    tcfg = replace(rc.tuner, mode=args.mode) if args.mode else rc.tuner
    if args.start:
        vals = [float(t) for t in args.start.split(",")]
        start = ClassKParams((vals[0], vals[1]), (vals[2], vals[3]))
    elif rc.params is not None:
        start = rc.params
    else:
        ds = dataset_mod.load_dataset(_require(args.data, "dataset CSV (for a start point)"))
        feas = [s for s in ds.labeled if s.label == 1]
        if not feas:
            print("no feasible start available in the dataset", file=sys.stderr)
            return EXIT_DOMAIN
        start = feas[0].params
    trace = tuner_mod.run_tuner(start, model, rc.scenario(), rc.controller, tcfg)
    tuner_mod.save_trace(trace, os.path.join(out, "trace.jsonl"))
    result = {
        "mode": tcfg.mode,
        "start": {"p": list(start.p), "q": list(start.q)},
        "best": {"p": list(trace.best_params.p), "q": list(trace.best_params.q)},
        "best_D": trace.best_D,
        "iterations": len(trace.iterates),
        "termination": trace.reason,
    }
    atomic_write_text(os.path.join(out, "tune_result.json"), json.dumps(result, indent=2) + "\n")
    print(f"best D = {trace.best_D:.4f} after {len(trace.iterates)} iterates ({trace.reason})")
    return EXIT_OK


def cmd_explore(rc: RunConfig, args) -> int:
    out = _out_dir(args)
    params = _params_from(rc, args)
    reports = []
    for episode in range(rc.explore.episodes):
        seed = rc.seed + episode
        if rc.scenario_path is not None:
            scenario = rc.scenario()
        else:
            scenario = make_exploration_scenario(
                seed,
                n_obstacles=rc.explore.n_obstacles,
                radius_range=(rc.explore.radius_min, rc.explore.radius_max),
                sensor=rc.explore.sensor,
            )
        if episode == 0:
            save_scenario(scenario, os.path.join(out, "scenario_0.json"))
        reports.append(
            run_episode(scenario, params, seed, cfg=rc.controller, motion_step=rc.explore.motion_step)
        )
    save_episode_reports(reports, os.path.join(out, "episodes.json"))
    outcomes = {o: sum(1 for r in reports if r.outcome == o) for o in
                ("reached", "collision", "infeasible", "timeout")}
    worst = min(r.min_true_barrier for r in reports)
    print(f"episodes={len(reports)} outcomes={outcomes} worst_true_barrier={worst:.3f}")
    return EXIT_DOMAIN if outcomes["collision"] else EXIT_OK


def cmd_bench(rc: RunConfig, args) -> int:
    out = _out_dir(args)
    if args.data:
        train_ds = dataset_mod.load_dataset(_require(args.data, "training dataset CSV"))
    else:
        train_ds = dataset_mod.build_dataset(
            max(rc.bench.m_list), rc.seed, scenario=rc.scenario(), cfg=rc.controller,
            workers=rc.workers,
        )
    if args.eval_data:
        test_ds = dataset_mod.load_dataset(_require(args.eval_data, "test dataset CSV"))
    else:
        test_ds = dataset_mod.build_dataset(
            1000, rc.seed + 1, scenario=rc.scenario(), cfg=rc.controller, workers=rc.workers
        )
    timing_params = rc.params if rc.params is not None else ClassKParams((1.0, 1.0), (1.0, 1.0))
    report = bench_mod.bench_report(
        train_ds,
        test_ds,
        m_list=rc.bench.m_list,
        scenario=rc.scenario(),
        cfg=rc.controller,
        tcfg=rc.tuner,
        pool=rc.bench.pool,
        timing_params=timing_params,
        timing_steps=rc.bench.timing_steps,
        svm_settings=rc.svm,
        workers=rc.workers,
    )
    bench_mod.save_bench_report(report, os.path.join(out, "bench.json"))
    qp = report["qp_step_time"]
    comp = report["comparison"]
    print(f"qp step time: median {qp['median_s']*1e3:.3f} ms over {qp['count']} steps")
    for m, row in report["accuracy_rows"].items():
        print(f"M={m}: accuracy={row['accuracy']:.3f}")
    print(
        f"better={comp['better_than_gd']:.3f} worse={comp['worse_than_gd']:.3f} "
        f"ties={comp['ties']:.3f} d_min: gd={comp['d_min_gd']:.2f} fgo={comp['d_min_fgo']:.2f} "
        f"combined_improvement={comp['combined_improvement']:.3f}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="safectrl",
        description="Barrier/Lyapunov QP control with feasibility-guided parameter learning",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("simulate", help="one closed-loop rollout")
    common(p)
    p.add_argument("--params", default=None, help="p1,p2,q1,q2")

    p = sub.add_parser("sample", help="build a labeled parameter dataset")
    common(p)
    p.add_argument("--samples", type=int, default=None, help="number of parameter samples")

    p = sub.add_parser("train", help="train the feasibility classifier")
    common(p)
    p.add_argument("--data", required=True, help="dataset CSV from `sample`")
    p.add_argument("--samples", type=int, default=None, help="use only the first M samples")
    p.add_argument("--eval-data", default=None, help="held-out dataset CSV")

    p = sub.add_parser("tune", help="descend D from a feasible start")
    common(p)
    p.add_argument("--model", required=True, help="model JSON from `train`")
    p.add_argument("--data", default=None, help="dataset CSV supplying a feasible start")
    p.add_argument("--start", default=None, help="start p1,p2,q1,q2")
    p.add_argument("--mode", choices=("fgo", "gd", "combined"), default=None)

    p = sub.add_parser("explore", help="unknown-environment episodes")
    common(p)
    p.add_argument("--params", default=None, help="tuned p1,p2,q1,q2")

    p = sub.add_parser("bench", help="timings and method comparison")
    common(p)
    p.add_argument("--data", default=None, help="training dataset CSV")
    p.add_argument("--eval-data", default=None, help="test dataset CSV")
    return ap


_COMMANDS = {
    "simulate": cmd_simulate,
    "sample": cmd_sample,
    "train": cmd_train,
    "tune": cmd_tune,
    "explore": cmd_explore,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        rc = load_run_config(args.config)
        if args.seed is not None:
            rc = replace(rc, seed=args.seed)
        return _COMMANDS[args.command](rc, args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
