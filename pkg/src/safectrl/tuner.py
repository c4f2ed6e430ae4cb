"""Parameter descent on the robustness value D: plain signed-gradient steps
(gd), steps guided by the learned feasibility hypersurface (fgo), or gd
followed by fgo from its best point (combined).

Each iteration estimates dD/d(p,q) by forward differences of full rollouts,
picks a bounded step direction by LP, rolls out the candidate, and accepts
while D does not increase. A candidate whose rollout fails triggers one
unguided fallback step from the last accepted point. Termination reasons
follow the four stopping conditions: infeasible, zero-gradient,
no-improvement, max-iter.
"""

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .constraints import ClassKParams, LinearConstraint, initial_condition_check, speed_limit_cbfs
from .controller import ControllerConfig, build_obstacle_specs, rollout_scenario
from .persistence import atomic_write_text
from .scenario import Scenario
from .solvers import LpInstance, solve_lp
from .svm import SvmModel, decision, decision_gradient

MODES = ("fgo", "gd", "combined")


@dataclass(frozen=True)
class TunerConfig:
    dtau: float = 0.1  # process-time step scaling the chosen direction
    nu_max: tuple = (0.1, 0.1, 0.1, 0.1)  # step-direction box, nu_min = -nu_max
    nu_min: tuple = (-0.1, -0.1, -0.1, -0.1)
    max_iters: int = 200
    fd_step: float = 0.05  # forward-difference step per coordinate
    gamma: float = 1.0  # linear class-K gain on the hypersurface constraint
    mode: str = "fgo"
    rng_seed: int = 0  # drives the dead-gradient retry perturbations
    retry_cap: int = 10

    def __post_init__(self):
        if self.dtau <= 0:
            raise ValueError("dtau must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not all(lo < 0.0 < hi for lo, hi in zip(self.nu_min, self.nu_max)):
            raise ValueError("step box must contain 0 strictly")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class TunerIterate:
    iter: int
    params: ClassKParams
    D: Optional[float]  # None on a failed candidate
    H: Optional[float]  # classifier decision value, None without a model
    nu: Optional[tuple]  # direction that produced this iterate
    fallback: bool  # True when produced without hypersurface guidance
    reason: Optional[str]  # set on the terminating iterate only
    accepted: bool = True  # False for candidates rejected by the accept rule


@dataclass
class TunerTrace:
    iterates: list
    best_params: ClassKParams
    best_D: float
    mode: str
    phase_split: Optional[int] = None  # combined mode: index where fgo resumes

    @property
    def reason(self) -> Optional[str]:
        return self.iterates[-1].reason if self.iterates else None


class TunerError(ValueError):
    pass


def _in_domain(arr) -> bool:
    return bool(np.all(np.asarray(arr) > 0.0))


def _try_rollout(params_arr, scenario, cfg):
    """Rollout summary (feasible, D) handling out-of-domain and discarded
    parameter points as failures."""
    if not _in_domain(params_arr):
        return False, None
    params = ClassKParams.from_array(params_arr)
    specs = build_obstacle_specs(scenario, params)
    speed = speed_limit_cbfs(cfg.v_min, cfg.v_max)
    if not initial_condition_check(specs + speed, scenario.start.as_array()):
        return False, None
    rec = rollout_scenario(scenario, cfg, params, keep_samples=False)
    return rec.feasible, rec.D


def eval_D_gradient(
    params: ClassKParams,
    scenario: Scenario,
    cfg: ControllerConfig,
    tcfg: TunerConfig,
    base_D: Optional[float] = None,
):
    """Forward-difference gradient of D with per-component validity flags.

    A coordinate whose perturbed rollout is infeasible (or discarded) cannot
    be differenced; it is flagged invalid and contributes 0.
    """
    cfg = cfg.for_scenario(scenario)
    base = params.as_array()
    if base_D is None:
        ok, base_D = _try_rollout(base, scenario, cfg)
        if not ok:
            raise TunerError("gradient requested at a rollout-infeasible point")
    grad = np.zeros(4)
    valid = np.ones(4, dtype=bool)
    h = tcfg.fd_step
    for k in range(4):
        pert = base.copy()
        pert[k] += h
        ok, D = _try_rollout(pert, scenario, cfg)
        if not ok:
            valid[k] = False
        else:
            grad[k] = (D - base_D) / h
    return grad, valid


def gd_step(params: ClassKParams, grad, tcfg: TunerConfig) -> tuple:
    """Signed bang-bang direction within the step box; zero stays put."""
    grad = np.asarray(grad, dtype=float)
    nu = np.where(grad > 0.0, tcfg.nu_min, np.where(grad < 0.0, tcfg.nu_max, 0.0))
    return params.as_array() + nu * tcfg.dtau, nu


def fgo_step(params: ClassKParams, grad, model: SvmModel, tcfg: TunerConfig) -> tuple:
    """LP step minimizing grad . nu while the hypersurface stays nonnegative.

    The LP is feasible whenever the current decision value is >= 0 (nu = 0
    satisfies the guidance row), which run_tuner guarantees by construction;
    anything else is a caller bug. The chosen direction is then shrunk until
    the decision value at the landing point is itself nonnegative, realizing
    in discrete steps what the guidance row promises along the flow.
    """
    base = params.as_array()
    H = decision(model, base)
    gH = decision_gradient(model, base)
    row = LinearConstraint(gH, tcfg.gamma * H, sense=">=0", tag="guidance")
    sol = solve_lp(
        LpInstance(
            cost=np.asarray(grad, dtype=float),
            rows=[row],
            lower=np.asarray(tcfg.nu_min, dtype=float),
            upper=np.asarray(tcfg.nu_max, dtype=float),
        )
    )
    assert sol.status == "optimal", (
        "guidance LP infeasible; fgo_step requires a nonnegative decision value"
    )
    nu = sol.x
    new = base + nu * tcfg.dtau
    if H >= 0.0:
        for _ in range(30):
            if decision(model, new) >= 0.0:
                break
            nu = 0.5 * nu
            new = base + nu * tcfg.dtau
    return new, nu


def run_tuner(
    start: ClassKParams,
    model: Optional[SvmModel],
    scenario: Scenario,
    cfg: ControllerConfig,
    tcfg: TunerConfig,
) -> TunerTrace:
    """Descend D from a rollout-feasible start; see module docstring.

    In fgo mode an iteration whose current point has a negative decision
    value (mislabeled by the classifier) cannot be guided; it takes the
    plain signed-gradient step and is flagged as a fallback.
    """
    if tcfg.mode == "combined":
        if model is None:
            raise TunerError("combined mode needs a classifier model")
        gd_trace = run_tuner(start, model, scenario, cfg, replace(tcfg, mode="gd"))
        fgo_trace = run_tuner(
            gd_trace.best_params, model, scenario, cfg, replace(tcfg, mode="fgo")
        )
        offset = len(gd_trace.iterates)
        merged = list(gd_trace.iterates) + [
            replace(it, iter=it.iter + offset) for it in fgo_trace.iterates
        ]
        if fgo_trace.best_D <= gd_trace.best_D:
            best_params, best_D = fgo_trace.best_params, fgo_trace.best_D
        else:
            best_params, best_D = gd_trace.best_params, gd_trace.best_D
        return TunerTrace(
            iterates=merged,
            best_params=best_params,
            best_D=best_D,
            mode="combined",
            phase_split=offset,
        )

    if tcfg.mode == "fgo" and model is None:
        raise TunerError("fgo mode needs a classifier model")
    cfg = cfg.for_scenario(scenario)
    rng = np.random.default_rng(tcfg.rng_seed)

    ok, D0 = _try_rollout(start.as_array(), scenario, cfg)
    if not ok:
        raise TunerError("tuner start must be rollout-feasible")

    def H_of(arr):
        return decision(model, arr) if model is not None else None

    current = start
    D_cur = D0
    best_params, best_D = start, D0
    iterates = [
        TunerIterate(0, start, D0, H_of(start.as_array()), None, False, None)
    ]

    def finish(reason):
        iterates[-1] = replace(iterates[-1], reason=reason)
        return TunerTrace(
            iterates=iterates, best_params=best_params, best_D=best_D, mode=tcfg.mode
        )

    it = 0
    while it < tcfg.max_iters:
        it += 1
        grad, valid = eval_D_gradient(current, scenario, cfg, tcfg, base_D=D_cur)

        if not np.any(valid):
            # every perturbation left the feasible set: jiggle the base point
            escaped = False
            for _ in range(tcfg.retry_cap):
                probe = current.as_array() + rng.uniform(
                    -tcfg.fd_step, tcfg.fd_step, size=4
                )
                ok, D_probe = _try_rollout(probe, scenario, cfg)
                if not ok:
                    continue
                current = ClassKParams.from_array(probe)
                D_cur = D_probe
                iterates.append(
                    TunerIterate(it, current, D_cur, H_of(probe), None, True, None)
                )
                if D_cur <= best_D:
                    best_params, best_D = current, D_cur
                grad, valid = eval_D_gradient(current, scenario, cfg, tcfg, base_D=D_cur)
                if np.any(valid):
                    escaped = True
                    break
            if not escaped:
                return finish("zero-gradient")

        if not np.any(grad != 0.0):
            return finish("zero-gradient")

        cur_arr = current.as_array()
        guided = tcfg.mode == "fgo" and decision(model, cur_arr) >= 0.0
        if guided:
            new_arr, nu = fgo_step(current, grad, model, tcfg)
        else:
            new_arr, nu = gd_step(current, grad, tcfg)
        fallback_flag = tcfg.mode == "fgo" and not guided

        ok, D_new = _try_rollout(new_arr, scenario, cfg)
        if ok:
            cand = ClassKParams.from_array(new_arr)
            take = best_D >= D_new
            iterates.append(
                TunerIterate(
                    it, cand, D_new, H_of(new_arr), tuple(nu), fallback_flag, None, take
                )
            )
            if take:
                current, D_cur = cand, D_new
                best_params, best_D = cand, D_new
                continue
            return finish("no-improvement")

        # candidate rollout failed: one unguided step from the accepted point
        fb_arr, fb_nu = gd_step(current, grad, tcfg)
        if np.array_equal(fb_arr, new_arr):
            iterates.append(
                TunerIterate(
                    it,
                    ClassKParams.from_array(new_arr) if _in_domain(new_arr) else current,
                    None,
                    H_of(new_arr) if _in_domain(new_arr) else H_of(cur_arr),
                    tuple(nu),
                    fallback_flag,
                    None,
                    False,
                )
            )
            return finish("infeasible")
        ok, D_fb = _try_rollout(fb_arr, scenario, cfg)
        if not ok:
            shown = ClassKParams.from_array(fb_arr) if _in_domain(fb_arr) else current
            iterates.append(
                TunerIterate(it, shown, None, H_of(fb_arr) if _in_domain(fb_arr) else None,
                             tuple(fb_nu), True, None, False)
            )
            return finish("infeasible")
        cand = ClassKParams.from_array(fb_arr)
        take = best_D >= D_fb
        iterates.append(
            TunerIterate(it, cand, D_fb, H_of(fb_arr), tuple(fb_nu), True, None, take)
        )
        if take:
            current, D_cur = cand, D_fb
            best_params, best_D = cand, D_fb
            continue
        return finish("no-improvement")

    return finish("max-iter")


# ---------------------------------------------------------------------------
# trace persistence: JSON lines, one iterate per line
# ---------------------------------------------------------------------------


def trace_to_jsonl(trace: TunerTrace) -> str:
    lines = []
    for rec in trace.iterates:
        lines.append(
            json.dumps(
                {
                    "iter": rec.iter,
                    "p": list(rec.params.p),
                    "q": list(rec.params.q),
                    "D": rec.D,
                    "H": rec.H,
                    "nu": list(rec.nu) if rec.nu is not None else None,
                    "fallback": rec.fallback,
                    "reason": rec.reason,
                }
            )
        )
    return "\n".join(lines) + "\n"


def save_trace(trace: TunerTrace, path) -> None:
    atomic_write_text(path, trace_to_jsonl(trace))


def load_trace_iterates(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
