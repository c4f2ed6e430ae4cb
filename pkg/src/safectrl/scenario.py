"""Maps: robot start, goal, circular obstacles, optional sensor model.

The training map puts the robot 27 m from a single obstacle of safe radius
7 m, heading straight at its center at full speed, with the goal offset
slightly off the center line so closed-loop trajectories break symmetry the
same way every run.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .dynamics import SystemState


@dataclass(frozen=True)
class SensorSpec:
    """Limited field of view, bounded range, bounded center uncertainty."""

    fov: float = 2.0 * math.pi / 3.0  # total angular width, rad
    range: float = 7.0  # m
    noise: float = 1.0  # m, radius of center-estimate error disk

    def __post_init__(self):
        if not 0.0 < self.fov <= 2.0 * math.pi:
            raise ValueError(f"fov must be in (0, 2*pi], got {self.fov}")
        if self.range <= 0.0:
            raise ValueError(f"sensing range must be positive, got {self.range}")
        if self.noise < 0.0:
            raise ValueError(f"noise magnitude must be nonnegative, got {self.noise}")


@dataclass(frozen=True)
class Obstacle:
    center: tuple
    radius: float
    motion_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.radius <= 0.0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Scenario:
    start: SystemState
    goal: tuple
    obstacles: tuple = ()
    sensor: Optional[SensorSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "goal", (float(self.goal[0]), float(self.goal[1])))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def descriptor(self) -> dict:
        d = {
            "start": [self.start.x, self.start.y, self.start.theta, self.start.v],
            "goal": list(self.goal),
            "obstacles": [
                {"center": list(o.center), "radius": o.radius, "motion_seed": o.motion_seed}
                for o in self.obstacles
            ],
        }
        if self.sensor is not None:
            d["sensor"] = {
                "fov": self.sensor.fov,
                "range": self.sensor.range,
                "noise": self.sensor.noise,
            }
        return d


def training_scenario(goal_offset: float = 2.0) -> Scenario:
    """Single-obstacle map used to sample and label penalty parameters.

    The goal sits at (45, 25 + goal_offset): a small positive offset keeps
    the desired bearing from passing exactly through the obstacle center,
    which would park the robot at an equilibrium in front of it. The offset
    must be large enough to break the approach symmetry within the horizon
    (the heading pull is cubic in the heading error), yet small enough that
    constraint activation still happens at full approach speed.
    """
    return Scenario(
        start=SystemState(5.0, 25.0, 0.0, 2.0),
        goal=(45.0, 25.0 + goal_offset),
        obstacles=(Obstacle(center=(32.0, 25.0), radius=7.0),),
    )


def scenario_from_dict(d: dict) -> Scenario:
    sensor = None
    if "sensor" in d:
        s = d["sensor"]
        sensor = SensorSpec(fov=s["fov"], range=s["range"], noise=s["noise"])
    return Scenario(
        start=SystemState(*[float(v) for v in d["start"]]),
        goal=tuple(d["goal"]),
        obstacles=tuple(
            Obstacle(
                center=tuple(o["center"]),
                radius=float(o["radius"]),
                motion_seed=int(o.get("motion_seed", 0)),
            )
            for o in d.get("obstacles", [])
        ),
        sensor=sensor,
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(scenario: Scenario, path) -> None:
    from .persistence import atomic_write_text

    atomic_write_text(path, json.dumps(scenario.descriptor(), indent=2) + "\n")
