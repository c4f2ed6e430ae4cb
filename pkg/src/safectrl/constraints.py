"""Barrier and Lyapunov constraint builders for the per-step control QP.

Every builder returns closed-form evaluators; the time derivatives are
derived analytically for the shipped models and cross-checked against
numerical differentiation in the test suite. Constraint rows are affine in
the control inputs (u1, u2); the controller lifts them into the full
decision vector (u1, u2, delta1, delta2).
"""

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import wrap_angle

GE = ">=0"
LE = "<=0"

# Below this distance to an obstacle center the barrier gradient is undefined.
CENTER_SINGULARITY = 1e-6


class SingularStateError(ValueError):
    """State too close to an obstacle center for the barrier gradient."""


@dataclass(frozen=True)
class ClassKParams:
    """Penalty/power vectors (p, q) of the chained class-K terms p_i * z^q_i."""

    p: tuple
    q: tuple

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        if len(self.p) != len(self.q):
            raise ValueError("p and q must have equal length")
        if any(v <= 0 for v in self.p) or any(v <= 0 for v in self.q):
            raise ValueError(f"penalties and powers must be > 0, got p={self.p} q={self.q}")

    @property
    def degree(self) -> int:
        return len(self.p)

    def as_array(self) -> np.ndarray:
        return np.array(self.p + self.q, dtype=float)

    @staticmethod
    def from_array(arr) -> "ClassKParams":
        arr = [float(a) for a in arr]
        m = len(arr) // 2
        return ClassKParams(tuple(arr[:m]), tuple(arr[m:]))


def signed_power(z: float, q: float) -> float:
    """sign(z) * |z|^q, the odd extension of the power class-K term.

    Strictly increasing in z for q > 0 and maps 0 to 0, so small numerical
    excursions below zero stay finite instead of producing complex values.
    """
    if z == 0.0:
        return 0.0
    return math.copysign(abs(z) ** q, z)


@dataclass(frozen=True)
class LinearConstraint:
    """One affine row `coeffs . z + const  (>=0 | <=0)` of a QP/LP.

    `coeffs` spans whatever decision vector the producer documents;
    constraint builders emit rows over (u1, u2).
    """

    coeffs: np.ndarray
    const: float
    sense: str = GE
    tag: str = ""

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", c)
        if not (np.all(np.isfinite(c)) and math.isfinite(self.const)):
            raise ValueError(f"non-finite constraint row (tag={self.tag!r})")
        if self.sense not in (GE, LE):
            raise ValueError(f"unknown sense {self.sense!r}")

    def value(self, z) -> float:
        return float(self.coeffs @ np.asarray(z, dtype=float) + self.const)

    def satisfied(self, z, tol: float = 1e-8) -> bool:
        v = self.value(z)
        return v >= -tol if self.sense == GE else v <= tol


@dataclass(frozen=True)
class HocbfSpec:
    """A barrier with its chained class-K inequality, linear in control.

    `barrier` and `barrier_dot` evaluate b and its drift derivative; for
    relative degree 2, `second_derivative_affine` returns (const, coeffs)
    with  d2b/dt2 = const + coeffs . u.  For relative degree 1,
    `first_derivative_affine` plays that role for db/dt.
    """

    barrier: Callable[[np.ndarray], float]
    degree: int
    params: ClassKParams
    tag: str = "hocbf"
    barrier_dot: Callable[[np.ndarray], float] = None
    first_derivative_affine: Callable[[np.ndarray], tuple] = None
    second_derivative_affine: Callable[[np.ndarray], tuple] = None

    def __post_init__(self):
        if self.degree != self.params.degree:
            raise ValueError(
                f"relative degree {self.degree} != parameter chain length {self.params.degree}"
            )
        if self.degree == 1 and self.first_derivative_affine is None:
            raise ValueError("degree-1 spec needs first_derivative_affine")
        if self.degree == 2 and (
            self.barrier_dot is None or self.second_derivative_affine is None
        ):
            raise ValueError("degree-2 spec needs barrier_dot and second_derivative_affine")
        if self.degree not in (1, 2):
            raise ValueError("only relative degrees 1 and 2 are shipped")

    def psi_values(self, x: np.ndarray) -> list:
        """[psi_0 .. psi_{m-1}] of the chain at state x."""
        b = self.barrier(x)
        if self.degree == 1:
            return [b]
        p1, q1 = self.params.p[0], self.params.q[0]
        return [b, self.barrier_dot(x) + p1 * signed_power(b, q1)]

    def constraint_row(self, x: np.ndarray) -> LinearConstraint:
        """The final chain inequality as a >=0 row over (u1, u2)."""
        if self.degree == 1:
            b = self.barrier(x)
            const, coeffs = self.first_derivative_affine(x)
            p1, q1 = self.params.p[0], self.params.q[0]
            return LinearConstraint(
                coeffs=np.asarray(coeffs, dtype=float),
                const=const + p1 * signed_power(b, q1),
                sense=GE,
                tag=self.tag,
            )
        b = self.barrier(x)
        bdot = self.barrier_dot(x)
        const2, coeffs = self.second_derivative_affine(x)
        p1, q1 = self.params.p[0], self.params.q[0]
        p2, q2 = self.params.p[1], self.params.q[1]
        psi1 = bdot + p1 * signed_power(b, q1)
        # d/dt of p1*spow(b, q1) is p1*q1*|b|^(q1-1)*bdot away from b = 0.
        if b == 0.0:
            if q1 < 1.0:
                raise SingularStateError("chain derivative undefined at b = 0 for q < 1")
            chain_dot = p1 * bdot if q1 == 1.0 else 0.0
        else:
            chain_dot = p1 * q1 * abs(b) ** (q1 - 1.0) * bdot
        return LinearConstraint(
            coeffs=np.asarray(coeffs, dtype=float),
            const=const2 + chain_dot + p2 * signed_power(psi1, q2),
            sense=GE,
            tag=self.tag,
        )


def circular_obstacle_hocbf(
    center: Sequence[float], r: float, params: ClassKParams, tag: str = None
) -> HocbfSpec:
    """Distance barrier b = ||(x,y) - center|| - r for the ground robot.

    Relative degree 2: turning and acceleration appear in the second
    derivative. All derivatives are closed-form.
    """
    if r <= 0:
        raise ValueError(f"safe radius must be positive, got {r}")
    if params.degree != 2:
        raise ValueError("circular obstacle barrier has relative degree 2")
    cx, cy = float(center[0]), float(center[1])
    tag = tag if tag is not None else f"obstacle({cx:g},{cy:g})"

    def _geometry(x):
        dx, dy = x[0] - cx, x[1] - cy
        d = math.hypot(dx, dy)
        if d < CENTER_SINGULARITY:
            raise SingularStateError(
                f"state within {CENTER_SINGULARITY} m of obstacle center ({cx}, {cy})"
            )
        return dx, dy, d

    def barrier(x):
        _, _, d = _geometry(x)
        return d - r

    def barrier_dot(x):
        dx, dy, d = _geometry(x)
        ct, st = math.cos(x[2]), math.sin(x[2])
        return x[3] * (dx * ct + dy * st) / d

    def second_derivative_affine(x):
        dx, dy, d = _geometry(x)
        ct, st = math.cos(x[2]), math.sin(x[2])
        v = x[3]
        along = dx * ct + dy * st  # offset projected on heading
        across = -dx * st + dy * ct  # offset projected on the left normal
        const = v * v * across * across / (d * d * d)
        return const, (v * across / d, along / d)

    return HocbfSpec(
        barrier=barrier,
        degree=2,
        params=params,
        tag=tag,
        barrier_dot=barrier_dot,
        second_derivative_affine=second_derivative_affine,
    )


def speed_limit_cbfs(v_min: float, v_max: float) -> list:
    """Barriers v_max - v and v - v_min, relative degree 1 in u2.

    Identity class-K terms (p = q = 1): the speed rows are not part of the
    learned parameter space.
    """
    if not v_min < v_max:
        raise ValueError(f"need v_min < v_max, got [{v_min}, {v_max}]")
    unit = ClassKParams((1.0,), (1.0,))

    hi = HocbfSpec(
        barrier=lambda x: v_max - x[3],
        degree=1,
        params=unit,
        tag="speed_hi",
        first_derivative_affine=lambda x: (0.0, (0.0, -1.0)),
    )
    lo = HocbfSpec(
        barrier=lambda x: x[3] - v_min,
        degree=1,
        params=unit,
        tag="speed_lo",
        first_derivative_affine=lambda x: (0.0, (0.0, 1.0)),
    )
    return [hi, lo]


@dataclass(frozen=True)
class ClfSpec:
    """A Lyapunov function with its relaxed exponential-decay row.

    The controller assembles `vdot + rate * value <= delta_i` where
    `vdot_affine` returns (const, coeffs) with  dV/dt = const + coeffs . u.
    """

    value: Callable[[np.ndarray], float]
    vdot_affine: Callable[[np.ndarray], tuple]
    rate: float
    penalty_weight: float = 1.0
    tag: str = "clf"

    def row_pieces(self, x: np.ndarray) -> tuple:
        """(coeffs over u, const) of the <= delta row at state x."""
        const, coeffs = self.vdot_affine(x)
        return np.asarray(coeffs, dtype=float), const + self.rate * self.value(x)


def goal_clfs(goal: Sequence[float], v0: float, rate: float) -> list:
    """Heading and speed Lyapunov pairs driving the robot to `goal` at speed v0.

    The desired heading points at the goal and is frozen within each control
    interval, so its own motion does not enter the derivative. A robot
    sitting exactly on the goal has no defined bearing; the heading row
    degenerates to an always-satisfied zero row there.
    """
    gx, gy = float(goal[0]), float(goal[1])

    def heading_error(x):
        dx, dy = gx - x[0], gy - x[1]
        if math.hypot(dx, dy) < 1e-9:
            return None
        return wrap_angle(x[2] - math.atan2(dy, dx))

    def v1(x):
        e = heading_error(x)
        return 0.0 if e is None else e * e

    def v1dot_affine(x):
        e = heading_error(x)
        if e is None:
            return 0.0, (0.0, 0.0)
        return 0.0, (2.0 * e, 0.0)

    def v2(x):
        dv = x[3] - v0
        return dv * dv

    def v2dot_affine(x):
        return 0.0, (0.0, 2.0 * (x[3] - v0))

    heading = ClfSpec(value=v1, vdot_affine=v1dot_affine, rate=rate, tag="clf_heading")
    speed = ClfSpec(value=v2, vdot_affine=v2dot_affine, rate=rate, tag="clf_speed")
    return [heading, speed]


def initial_condition_check(specs: Sequence[HocbfSpec], x) -> bool:
    """True iff every chain value psi_0..psi_{m-1} is nonnegative at x.

    This is the forward-invariance precondition; parameter samples whose
    start state violates it are discarded before labeling.
    """
    x = np.asarray(x, dtype=float)
    for spec in specs:
        if any(v < 0.0 for v in spec.psi_values(x)):
            return False
    return True
