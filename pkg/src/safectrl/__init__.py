"""Safe-control toolkit: barrier/Lyapunov QP controllers plus the
feasibility-guided pipeline that learns penalty parameters maximizing how
late safety constraints activate."""

from .constraints import (
    ClassKParams,
    ClfSpec,
    HocbfSpec,
    LinearConstraint,
    circular_obstacle_hocbf,
    goal_clfs,
    initial_condition_check,
    signed_power,
    speed_limit_cbfs,
)
from .dynamics import AffineModel, ControlInput, SystemState, step, unicycle, wrap_angle
from .solvers import (
    LpInstance,
    LpSolution,
    QpInstance,
    QpSolution,
    check_feasible,
    solve_lp,
    solve_qp,
)

__version__ = "0.1.0"
