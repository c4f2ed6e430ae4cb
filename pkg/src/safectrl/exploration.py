"""Unknown-environment episodes: randomly drifting circular obstacles, a
limited-FOV noisy sensor, freeze-on-detection, and the QP controller driving
with barrier rows only for obstacles it has actually seen.

Detected centers carry bounded noise, so planning radii are inflated by the
noise magnitude: the planned barrier then lower-bounds the true barrier and
planned safety implies true safety.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constraints import ClassKParams, circular_obstacle_hocbf, initial_condition_check
from .controller import ControllerConfig, _warm_start_candidate, assemble_step_qp
from .dynamics import step_array, unicycle, wrap_angle
from .persistence import atomic_write_text
from .scenario import Obstacle, Scenario, SensorSpec
from .solvers import solve_qp


@dataclass
class ObstacleTrack:
    true_center: np.ndarray
    radius: float
    motion_seed: int
    frozen: bool = False
    detected_center: Optional[np.ndarray] = None

    @property
    def detected(self) -> bool:
        return self.detected_center is not None


@dataclass
class WorldState:
    obstacles: list
    robot: np.ndarray  # [x, y, theta, v]
    goal: tuple
    t: float = 0.0


@dataclass
class EpisodeReport:
    outcome: str  # reached | collision | infeasible | timeout
    steps: int
    min_true_barrier: float
    seed: int
    detected: int
    start_condition_violations: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "steps": self.steps,
            "min_true_barrier": self.min_true_barrier,
            "seed": self.seed,
            "detected": self.detected,
            "start_condition_violations": self.start_condition_violations,
        }


def sense(world: WorldState, spec: SensorSpec, rngs: Sequence) -> list:
    """Detect obstacles whose nearest boundary point is in range and whose
    center bearing falls inside the field of view; first detection freezes
    the obstacle and fixes its noisy center estimate. Returns the indices
    detected for the first time this call."""
    x, y, theta = world.robot[0], world.robot[1], world.robot[2]
    new = []
    for i, ob in enumerate(world.obstacles):
        if ob.detected:
            continue
        dx, dy = ob.true_center[0] - x, ob.true_center[1] - y
        dist = math.hypot(dx, dy)
        if dist - ob.radius > spec.range:
            continue
        bearing = wrap_angle(math.atan2(dy, dx) - theta)
        if abs(bearing) > spec.fov / 2.0:
            continue
        rng = rngs[i]
        radius = spec.noise * math.sqrt(rng.random())
        angle = 2.0 * math.pi * rng.random()
        ob.detected_center = ob.true_center + radius * np.array(
            [math.cos(angle), math.sin(angle)]
        )
        ob.frozen = True
        new.append(i)
    return new


def _drift_obstacle(ob: ObstacleTrack, rng, motion_step: float) -> None:
    radius = motion_step * math.sqrt(rng.random())
    angle = 2.0 * math.pi * rng.random()
    ob.true_center = ob.true_center + radius * np.array([math.cos(angle), math.sin(angle)])


def run_episode(
    scenario: Scenario,
    tuned: ClassKParams,
    seed: int,
    cfg: Optional[ControllerConfig] = None,
    motion_step: float = 0.05,
    keep_trajectory: bool = False,
) -> EpisodeReport:
    """One seeded episode; see the module docstring for the world rules."""
    if scenario.sensor is None:
        raise ValueError("exploration scenario needs a sensor spec")
    sensor = scenario.sensor
    cfg = (cfg if cfg is not None else ControllerConfig()).for_scenario(scenario)
    model = unicycle()

    world = WorldState(
        obstacles=[
            ObstacleTrack(
                true_center=np.array(o.center, dtype=float),
                radius=o.radius,
                motion_seed=o.motion_seed,
            )
            for o in scenario.obstacles
        ],
        robot=scenario.start.as_array(),
        goal=scenario.goal,
    )
    rngs = [np.random.default_rng([seed, ob.motion_seed]) for ob in world.obstacles]

    def true_barriers():
        x, y = world.robot[0], world.robot[1]
        return [
            math.hypot(ob.true_center[0] - x, ob.true_center[1] - y) - ob.radius
            for ob in world.obstacles
        ]

    min_true_b = min(true_barriers(), default=math.inf)
    violations = []
    trajectory = []
    n_steps = int(round(cfg.t_f / cfg.dt))
    gx, gy = cfg.goal
    u_prev = None
    outcome = "timeout"
    k = 0

    specs = []
    spec_for = {}  # obstacle index -> HocbfSpec over its frozen noisy estimate

    for k in range(n_steps):
        world.t = k * cfg.dt
        if math.hypot(world.robot[0] - gx, world.robot[1] - gy) <= cfg.convergence_radius:
            outcome = "reached"
            break

        for i, ob in enumerate(world.obstacles):
            if not ob.frozen:
                _drift_obstacle(ob, rngs[i], motion_step)

        for i in sense(world, sensor, rngs):
            ob = world.obstacles[i]
            spec = circular_obstacle_hocbf(
                ob.detected_center, ob.radius + sensor.noise, tuned, tag=f"obstacle{i}"
            )
            spec_for[i] = spec
            specs = [spec_for[j] for j in sorted(spec_for)]
            if not initial_condition_check([spec], world.robot):
                violations.append({"t": world.t, "obstacle": i})

        if keep_trajectory:
            trajectory.append(world.robot.copy())
        inst = assemble_step_qp(world.robot, specs, cfg)
        sol = solve_qp(inst, warm_start=_warm_start_candidate(inst, u_prev))
        if sol.status != "optimal":
            outcome = "infeasible"
            break
        u_prev = sol.x[:2]
        world.robot = step_array(model, world.robot, u_prev, cfg.dt, method=cfg.integrator)

        tb = min(true_barriers(), default=math.inf)
        if tb < min_true_b:
            min_true_b = tb
        if tb < 0.0:
            outcome = "collision"
            break
    else:
        if math.hypot(world.robot[0] - gx, world.robot[1] - gy) <= cfg.convergence_radius:
            outcome = "reached"

    return EpisodeReport(
        outcome=outcome,
        steps=k,
        min_true_barrier=float(min_true_b),
        seed=seed,
        detected=sum(1 for ob in world.obstacles if ob.detected),
        start_condition_violations=violations,
        trajectory=trajectory,
    )


def run_exploration(
    scenario: Scenario,
    tuned: ClassKParams,
    seeds: Sequence[int],
    cfg: Optional[ControllerConfig] = None,
    motion_step: float = 0.05,
) -> list:
    """One episode per seed on the same scenario layout."""
    return [
        run_episode(scenario, tuned, seed, cfg=cfg, motion_step=motion_step) for seed in seeds
    ]


def make_exploration_scenario(
    seed: int,
    n_obstacles: int = 3,
    radius_range: tuple = (3.0, 9.0),
    sensor: SensorSpec = SensorSpec(),
    clearance: float = 8.0,
) -> Scenario:
    """Seeded trap-free layout: obstacles pairwise separated by `clearance`
    beyond their noise-inflated radii, clear of the start and the goal ball.
    If a draw cannot be placed, the clearance relaxes deterministically."""
    rng = np.random.default_rng(seed)
    start = (5.0, 25.0, 0.0, 2.0)
    goal = (45.0, 25.0)
    placed = []
    gap = clearance
    attempts = 0
    while len(placed) < n_obstacles:
        attempts += 1
        if attempts % 600 == 0:
            gap = max(4.0, 0.8 * gap)  # keep corridors wide enough to pass
        if attempts > 6000:
            raise RuntimeError(f"could not place {n_obstacles} obstacles with seed {seed}")
        r = rng.uniform(radius_range[0], radius_range[1])
        cx = rng.uniform(16.0, 40.0)
        cy = rng.uniform(5.0, 45.0)
        if math.hypot(cx - start[0], cy - start[1]) < r + sensor.noise + 9.0:
            continue
        if math.hypot(cx - goal[0], cy - goal[1]) < r + sensor.noise + 4.0:
            continue
        if any(
            math.hypot(cx - ox, cy - oy) < r + orad + 2.0 * sensor.noise + gap
            for ox, oy, orad in placed
        ):
            continue
        placed.append((cx, cy, r))
    from .dynamics import SystemState

    return Scenario(
        start=SystemState(*start),
        goal=goal,
        obstacles=tuple(
            Obstacle(center=(cx, cy), radius=r, motion_seed=i)
            for i, (cx, cy, r) in enumerate(placed)
        ),
        sensor=sensor,
    )


def save_episode_reports(reports: Sequence[EpisodeReport], path) -> None:
    doc = {
        "episodes": [r.to_dict() for r in reports],
        "outcomes": {
            o: sum(1 for r in reports if r.outcome == o)
            for o in ("reached", "collision", "infeasible", "timeout")
        },
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
