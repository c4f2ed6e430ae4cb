"""Closed-loop QP controller: assemble per-step constraints, solve, hold the
control over the interval, and track feasibility, convergence, constraint
activation, and the robustness value of each rollout.

The robustness value D of a feasible rollout is the obstacle barrier at the
first instant its constraint row is tight at the QP optimum; a rollout whose
obstacle rows never activate falls back to the smallest barrier value seen,
so tuning objectives stay defined everywhere (flagged `no_activation`).
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .constraints import (
    GE,
    LE,
    HocbfSpec,
    LinearConstraint,
    circular_obstacle_hocbf,
    goal_clfs,
    initial_condition_check,
    speed_limit_cbfs,
)
from .dynamics import SystemState, step_array, unicycle
from .persistence import atomic_write_text
from .scenario import Scenario
from .solvers import QpInstance, solve_qp


class InitialConditionError(ValueError):
    """Start state violates the barrier-chain nonnegativity precondition."""


@dataclass(frozen=True)
class ControllerConfig:
    dt: float = 0.1  # s
    t_f: float = 60.0  # s, horizon cap for convergence
    relaxation_penalty: float = 1.0  # weight on each delta^2
    eta: float = 0.5  # turning-vs-acceleration cost tradeoff in [0, 1]
    u1_min: float = -0.2  # rad/s
    u1_max: float = 0.2
    u2_min: float = -0.5  # m/s^2
    u2_max: float = 0.5
    v_min: float = 0.0  # m/s
    v_max: float = 2.0
    goal: tuple = (45.0, 27.0)
    v0: float = 2.0  # desired cruise speed; worst case = v_max
    clf_rate: float = 10.0  # exponential convergence rate of both CLFs
    convergence_radius: float = 0.5  # m
    activation_tol: float = 1e-6  # relative slack below which a row counts as active
    integrator: str = "rk4"
    delta_bound: float = 1e3  # box on the relaxation variables (never active)

    def __post_init__(self):
        if self.dt <= 0 or self.t_f <= 0:
            raise ValueError("dt and t_f must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.convergence_radius <= 0:
            raise ValueError("convergence radius must be positive")

    def for_scenario(self, scenario: Scenario) -> "ControllerConfig":
        return replace(self, goal=scenario.goal)


@dataclass(frozen=True)
class StepSample:
    t: float
    state: np.ndarray  # [x, y, theta, v]
    u: np.ndarray  # [u1, u2]
    delta: np.ndarray  # [delta1, delta2]
    row_values: np.ndarray  # constraint values at the optimum, row order fixed


@dataclass
class TrajectoryRecord:
    feasible: bool
    converged: bool
    t_converge: Optional[float]
    infeasible_t: Optional[float]
    D: Optional[float]  # robustness value; None when infeasible or no obstacles
    no_activation: bool
    min_barrier: float  # min over time and obstacles of the true barrier
    activations: dict  # row tag -> (first activation time, barrier there)
    row_tags: tuple
    samples: list = field(default_factory=list)
    final_state: Optional[np.ndarray] = None


def control_cost_weights(cfg: ControllerConfig) -> tuple:
    """Quadratic weights on (u1^2, u2^2) from the energy tradeoff."""
    ratio = max(cfg.u2_min**2, cfg.u2_max**2) / max(cfg.u1_min**2, cfg.u1_max**2)
    return cfg.eta * ratio, 1.0 - cfg.eta


def assemble_step_qp(state, obstacles: Sequence[HocbfSpec], cfg: ControllerConfig) -> QpInstance:
    """One time step's QP over (u1, u2, delta1, delta2).

    Rows in order: every obstacle barrier, speed-limit pair, then the two
    relaxed Lyapunov rows (heading, speed); the control box enters through
    the variable bounds.
    """
    x = np.asarray(state, dtype=float)
    w1, w2 = control_cost_weights(cfg)
    p = cfg.relaxation_penalty

    rows = []
    for spec in obstacles:
        r = spec.constraint_row(x)
        rows.append(
            LinearConstraint(
                np.array([r.coeffs[0], r.coeffs[1], 0.0, 0.0]), r.const, GE, r.tag
            )
        )
    for spec in speed_limit_cbfs(cfg.v_min, cfg.v_max):
        r = spec.constraint_row(x)
        rows.append(
            LinearConstraint(
                np.array([r.coeffs[0], r.coeffs[1], 0.0, 0.0]), r.const, GE, r.tag
            )
        )
    clfs = goal_clfs(cfg.goal, cfg.v0, cfg.clf_rate)
    penalties = []
    for i, spec in enumerate(clfs):
        coeffs, const = spec.row_pieces(x)
        lifted = np.zeros(4)
        lifted[:2] = coeffs
        if np.any(coeffs != 0.0) or const != 0.0:
            lifted[2 + i] = -1.0
        rows.append(LinearConstraint(lifted, const, LE, spec.tag))
        penalties.append(p * spec.penalty_weight)

    H = np.diag([w1, w2, penalties[0], penalties[1]])
    lower = np.array([cfg.u1_min, cfg.u2_min, -cfg.delta_bound, -cfg.delta_bound])
    upper = np.array([cfg.u1_max, cfg.u2_max, cfg.delta_bound, cfg.delta_bound])
    return QpInstance(hessian=H, linear=np.zeros(4), rows=rows, lower=lower, upper=upper)


def build_obstacle_specs(scenario: Scenario, params) -> list:
    return [
        circular_obstacle_hocbf(o.center, o.radius, params, tag=f"obstacle{i}")
        for i, o in enumerate(scenario.obstacles)
    ]


def _warm_start_candidate(inst: QpInstance, u_prev) -> Optional[np.ndarray]:
    """Feasible guess reusing the previous control: barrier rows move slowly
    across one interval, and the relaxed rows can absorb any Lyapunov
    residual by choice of delta."""
    if u_prev is None:
        return None
    z = np.array([u_prev[0], u_prev[1], 0.0, 0.0])
    for row in inst.rows:
        if row.sense == GE:
            if row.value(z) < 0.0:
                return None
            continue
        # relaxed row: lift its delta slot to cover the residual
        slot = next((j for j in (2, 3) if row.coeffs[j] == -1.0), -1)
        if slot < 0:
            if row.value(z) > 0.0:
                return None
            continue
        need = row.coeffs[0] * z[0] + row.coeffs[1] * z[1] + row.const
        z[slot] = min(max(need, 0.0) + 1e-9, inst.upper[slot])
    if np.all(z >= inst.lower) and np.all(z <= inst.upper):
        return z
    return None


def run_rollout(
    initial: SystemState,
    obstacles: Sequence[HocbfSpec],
    cfg: ControllerConfig,
    keep_samples: bool = True,
) -> TrajectoryRecord:
    """Roll the QP loop out to convergence, infeasibility, or the horizon.

    A record is `feasible` only if every step's QP solved and the position
    reached the convergence ball before t_f. The start must satisfy the
    barrier-chain precondition for every obstacle and speed spec.
    """
    model = unicycle()
    speed_specs = speed_limit_cbfs(cfg.v_min, cfg.v_max)
    x = initial.as_array()
    if not initial_condition_check(list(obstacles) + speed_specs, x):
        raise InitialConditionError(
            "start state violates a barrier chain; sample must be discarded"
        )

    barrier_fns = [(spec.tag, spec.barrier) for spec in obstacles]
    min_b = {tag: fn(x) for tag, fn in barrier_fns}
    activations: dict = {}
    row_tags: tuple = ()
    samples: list = []
    gx, gy = cfg.goal
    xi = cfg.convergence_radius
    n_steps = int(round(cfg.t_f / cfg.dt))

    feasible_so_far = True
    converged = False
    t_converge = None
    infeasible_t = None
    u_prev = None

    for k in range(n_steps + 1):
        t = k * cfg.dt
        if math.hypot(x[0] - gx, x[1] - gy) <= xi:
            converged = True
            t_converge = t
            break
        if k == n_steps:
            break  # horizon exhausted without convergence

        inst = assemble_step_qp(x, obstacles, cfg)
        if not row_tags:
            row_tags = tuple(r.tag for r in inst.rows)
        sol = solve_qp(inst, warm_start=_warm_start_candidate(inst, u_prev))
        if sol.status != "optimal":
            feasible_so_far = False
            infeasible_t = t
            break

        z = sol.x
        for i, row in enumerate(inst.rows):
            tag = row.tag
            if not tag.startswith("obstacle") or tag in activations:
                continue
            if row.value(z) <= cfg.activation_tol * (1.0 + abs(row.const)):
                activations[tag] = (t, _barrier_value(barrier_fns, tag, x))
        if keep_samples:
            samples.append(
                StepSample(
                    t=t,
                    state=x.copy(),
                    u=z[:2].copy(),
                    delta=z[2:4].copy(),
                    row_values=np.array([row.value(z) for row in inst.rows]),
                )
            )
        u_prev = z[:2]
        x = step_array(model, x, u_prev, cfg.dt, method=cfg.integrator)
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"state became non-finite at t={t + cfg.dt:.3f}: {x}")
        for tag, fn in barrier_fns:
            b = fn(x)
            if b < min_b[tag]:
                min_b[tag] = b

    feasible = feasible_so_far and converged
    no_activation = not activations
    D = None
    if barrier_fns:
        per_obstacle = []
        for tag, _ in barrier_fns:
            if tag in activations:
                per_obstacle.append(activations[tag][1])
            else:
                per_obstacle.append(min_b[tag])
        D = float(min(per_obstacle))

    return TrajectoryRecord(
        feasible=feasible,
        converged=converged,
        t_converge=t_converge,
        infeasible_t=infeasible_t,
        D=D if feasible else None,
        no_activation=no_activation,
        min_barrier=float(min(min_b.values())) if min_b else math.inf,
        activations=activations,
        row_tags=row_tags,
        samples=samples,
        final_state=x.copy(),
    )


def _barrier_value(barrier_fns, tag, x) -> float:
    for t, fn in barrier_fns:
        if t == tag:
            return fn(x)
    raise KeyError(tag)


def rollout_scenario(
    scenario: Scenario, cfg: ControllerConfig, params, keep_samples: bool = True
) -> TrajectoryRecord:
    """Convenience wiring of a scenario's start/goal/obstacles into a rollout."""
    cfg = cfg.for_scenario(scenario)
    specs = build_obstacle_specs(scenario, params)
    return run_rollout(scenario.start, specs, cfg, keep_samples=keep_samples)


def robustness_metric(rec: TrajectoryRecord) -> float:
    """D of a feasible rollout (barrier at first activation, or the minimum
    barrier when no row ever activated)."""
    if not rec.feasible:
        raise ValueError("robustness undefined for infeasible rollouts (label is -1)")
    if rec.D is None:
        raise ValueError("robustness undefined without obstacle constraints")
    return rec.D


def write_trajectory_csv(rec: TrajectoryRecord, path) -> None:
    """Rows t,x,y,theta,v,u1,u2,delta1,delta2,feasible; a failed rollout ends
    with one row carrying the state where the QP went infeasible."""
    lines = ["t,x,y,theta,v,u1,u2,delta1,delta2,feasible"]
    for s in rec.samples:
        lines.append(
            f"{s.t:.6g},{s.state[0]:.9g},{s.state[1]:.9g},{s.state[2]:.9g},"
            f"{s.state[3]:.9g},{s.u[0]:.9g},{s.u[1]:.9g},{s.delta[0]:.9g},"
            f"{s.delta[1]:.9g},1"
        )
    if rec.infeasible_t is not None and rec.final_state is not None:
        fs = rec.final_state
        lines.append(f"{rec.infeasible_t:.6g},{fs[0]:.9g},{fs[1]:.9g},{fs[2]:.9g},{fs[3]:.9g},,,,,0")
    atomic_write_text(path, "\n".join(lines) + "\n")
