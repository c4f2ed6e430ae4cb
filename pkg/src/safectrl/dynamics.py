"""Control-affine system models and fixed-step integration.

State convention for the ground robot: [x, y, theta, v]
  - (x, y): position in meters
  - theta: heading angle in rad, kept in (-pi, pi]
  - v: forward speed in m/s

Control convention: [u1, u2] = [turning rate rad/s, acceleration m/s^2].
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]. Angles already in range pass through unchanged."""
    if -math.pi < theta <= math.pi:
        return theta
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True)
class SystemState:
    x: float
    y: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v], dtype=float)

    @staticmethod
    def from_array(arr) -> "SystemState":
        return SystemState(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))


@dataclass(frozen=True)
class ControlInput:
    u1: float  # turning rate, rad/s
    u2: float  # acceleration, m/s^2

    def as_array(self) -> np.ndarray:
        return np.array([self.u1, self.u2], dtype=float)


@dataclass(frozen=True)
class AffineModel:
    """Control-affine system xdot = drift(x) + actuation(x) @ u."""

    drift: Callable[[np.ndarray], np.ndarray]
    actuation: Callable[[np.ndarray], np.ndarray]  # returns (n, q) matrix
    state_dim: int
    control_dim: int


def unicycle() -> AffineModel:
    """Ground robot with turning-rate and acceleration inputs.

    drift(x) = [v cos(theta), v sin(theta), 0, 0]; the two controls enter
    the heading-rate and acceleration slots directly.
    """

    def drift(x: np.ndarray) -> np.ndarray:
        theta, v = x[2], x[3]
        return np.array([v * math.cos(theta), v * math.sin(theta), 0.0, 0.0])

    g = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

    def actuation(x: np.ndarray) -> np.ndarray:
        return g

    return AffineModel(drift=drift, actuation=actuation, state_dim=4, control_dim=2)


def step_array(
    model: AffineModel,
    x: np.ndarray,
    u: np.ndarray,
    dt: float,
    method: str = "rk4",
) -> np.ndarray:
    """Advance a raw state array by dt under constant control.

    The control is held constant over the whole interval; the intra-interval
    integration is classical RK4 by default ("euler" gives a single forward
    Euler step). Heading (index 2) is wrapped to (-pi, pi] afterwards.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError(f"non-finite state or control: x={x}, u={u}")

    def f(z):
        return model.drift(z) + model.actuation(z) @ u

    if method == "rk4":
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    elif method == "euler":
        out = x + dt * f(x)
    else:
        raise ValueError(f"unknown integration method {method!r}")

    out[2] = wrap_angle(out[2])
    return out


def step(
    model: AffineModel,
    state: SystemState,
    u: ControlInput,
    dt: float,
    method: str = "rk4",
) -> SystemState:
    """Advance `state` by dt under constant control `u`."""
    out = step_array(model, state.as_array(), u.as_array(), dt, method=method)
    return SystemState.from_array(out)
