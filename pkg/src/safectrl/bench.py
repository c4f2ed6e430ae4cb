"""Benchmark harness: per-step QP wall times and the method-comparison
table (classifier accuracy per training size, guided-vs-plain descent
percentages, combined-pass improvement)."""

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .constraints import ClassKParams
from .controller import (
    ControllerConfig,
    _warm_start_candidate,
    assemble_step_qp,
    build_obstacle_specs,
)
from .dynamics import step_array, unicycle
from .persistence import atomic_write_text
from .scenario import Scenario
from .solvers import solve_qp
from .svm import SvmModel, accuracy as svm_accuracy, train as svm_train
from .tuner import TunerConfig, run_tuner


def time_qp_steps(
    scenario: Scenario,
    params: ClassKParams,
    cfg: Optional[ControllerConfig] = None,
    max_steps: int = 2000,
) -> list:
    """Wall time of (assembly + solve) per step along closed-loop rollouts.

    Only the QP work is timed; integration and bookkeeping stay outside the
    clock. Rollouts restart until max_steps measurements accumulate.
    """
    cfg = (cfg if cfg is not None else ControllerConfig()).for_scenario(scenario)
    model = unicycle()
    specs = build_obstacle_specs(scenario, params)
    gx, gy = cfg.goal
    times = []
    while len(times) < max_steps:
        x = scenario.start.as_array()
        u_prev = None
        for _ in range(int(round(cfg.t_f / cfg.dt))):
            if math.hypot(x[0] - gx, x[1] - gy) <= cfg.convergence_radius:
                break
            t0 = time.perf_counter()
            inst = assemble_step_qp(x, specs, cfg)
            sol = solve_qp(inst, warm_start=_warm_start_candidate(inst, u_prev))
            times.append(time.perf_counter() - t0)
            if sol.status != "optimal":
                break
            u_prev = sol.x[:2]
            x = step_array(model, x, u_prev, cfg.dt, method=cfg.integrator)
            if len(times) >= max_steps:
                break
    return times


def timing_stats(times: Sequence[float]) -> dict:
    arr = np.asarray(times)
    return {
        "count": int(arr.size),
        "median_s": float(np.median(arr)),
        "p90_s": float(np.percentile(arr, 90)),
        "max_s": float(arr.max()),
    }


@dataclass
class ComparisonRow:
    start_params: ClassKParams
    start_D: float
    d_gd: float
    d_fgo: float
    d_combined: float


def _compare_one(args):
    start, model, scenario, cfg, tcfg = args
    tr_gd = run_tuner(start, model, scenario, cfg, replace(tcfg, mode="gd"))
    tr_fgo = run_tuner(start, model, scenario, cfg, replace(tcfg, mode="fgo"))
    tr_cont = run_tuner(
        tr_gd.best_params, model, scenario, cfg, replace(tcfg, mode="fgo")
    )
    d_combined = min(tr_gd.best_D, tr_cont.best_D)
    return ComparisonRow(
        start_params=start,
        start_D=tr_gd.iterates[0].D,
        d_gd=tr_gd.best_D,
        d_fgo=tr_fgo.best_D,
        d_combined=d_combined,
    )


def compare_tuners(
    starts: Sequence[ClassKParams],
    model: SvmModel,
    scenario: Scenario,
    cfg: ControllerConfig,
    tcfg: TunerConfig,
    workers: int = 1,
) -> list:
    """Run plain, guided, and guided-after-plain descent from each start."""
    jobs = [(s, model, scenario, cfg, tcfg) for s in starts]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_compare_one, jobs))
    return [_compare_one(j) for j in jobs]


def comparison_summary(rows: Sequence[ComparisonRow], total_pool: Optional[int] = None) -> dict:
    """Strict-comparison fractions; ties make up the remaining mass.

    Fractions are reported against the compared starts and, when
    `total_pool` is given (e.g. the full test-sample count), against that
    denominator as well.
    """
    n = len(rows)
    better = sum(1 for r in rows if r.d_fgo < r.d_gd)
    worse = sum(1 for r in rows if r.d_fgo > r.d_gd)
    improved = sum(1 for r in rows if r.d_combined < r.d_gd)
    out = {
        "compared": n,
        "better_than_gd": better / n if n else math.nan,
        "worse_than_gd": worse / n if n else math.nan,
        "ties": (n - better - worse) / n if n else math.nan,
        "d_min_gd": min((r.d_gd for r in rows), default=math.nan),
        "d_min_fgo": min((r.d_fgo for r in rows), default=math.nan),
        "d_min_combined": min((r.d_combined for r in rows), default=math.nan),
        "combined_improvement": improved / n if n else math.nan,
    }
    if total_pool:
        out["better_than_gd_over_pool"] = better / total_pool
        out["worse_than_gd_over_pool"] = worse / total_pool
        out["combined_improvement_over_pool"] = improved / total_pool
    return out


def bench_report(
    train_dataset,
    test_dataset,
    m_list: Sequence[int],
    scenario: Scenario,
    cfg: ControllerConfig,
    tcfg: TunerConfig,
    pool: int,
    timing_params: ClassKParams,
    timing_steps: int = 2000,
    svm_settings=None,
    workers: int = 1,
) -> dict:
    """Accuracy per training size plus one comparison block and QP timings.

    The comparison runs once with the largest-M classifier (descent costs
    dominate; accuracy differences across M are reported separately).
    """
    from .config import SvmSettings

    svm_settings = svm_settings if svm_settings is not None else SvmSettings()
    Xt, yt = test_dataset.matrix()
    rows_by_m = {}
    model = None
    m_list = sorted({min(int(m), len(train_dataset.samples)) for m in m_list})
    for m in m_list:
        sub = train_dataset.prefix(m)
        model = svm_train(
            sub,
            kp=svm_settings.kernel,
            C=svm_settings.C,
            kkt_tol=svm_settings.kkt_tol,
            max_passes=svm_settings.max_passes,
        )
        rows_by_m[m] = {
            "training_samples": m,
            "labeled": len(sub.labeled),
            "accuracy": svm_accuracy(model, Xt, yt),
        }

    starts = [s.params for s in test_dataset.labeled if s.label == 1][:pool]
    comparison = compare_tuners(starts, model, scenario, cfg, tcfg, workers=workers)
    summary = comparison_summary(comparison, total_pool=len(test_dataset.labeled))

    times = time_qp_steps(scenario, timing_params, cfg, max_steps=timing_steps)
    return {
        "dataset": {
            "train_size": len(train_dataset.samples),
            "train_feasible_fraction": train_dataset.feasible_fraction,
            "train_discarded": train_dataset.n_discarded,
            "test_size": len(test_dataset.samples),
            "test_feasible_fraction": test_dataset.feasible_fraction,
            "best_sampled_D": test_dataset.best_feasible_D(),
        },
        "accuracy_rows": rows_by_m,
        "comparison": summary,
        "qp_step_time": timing_stats(times),
    }


def save_bench_report(report: dict, path) -> None:
    atomic_write_text(path, json.dumps(report, indent=2) + "\n")
