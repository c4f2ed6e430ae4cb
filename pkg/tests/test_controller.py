import math
from dataclasses import replace

import numpy as np
import pytest

from safectrl.constraints import ClassKParams, circular_obstacle_hocbf
from safectrl.controller import (
    ControllerConfig,
    InitialConditionError,
    assemble_step_qp,
    build_obstacle_specs,
    control_cost_weights,
    robustness_metric,
    rollout_scenario,
    run_rollout,
    write_trajectory_csv,
)
from safectrl.dynamics import SystemState
from safectrl.scenario import Obstacle, Scenario, training_scenario
from safectrl.solvers import solve_qp

TUNED = ClassKParams((0.7426, 1.9745), (1.9148, 0.7024))


@pytest.fixture(scope="module")
def cfg():
    return ControllerConfig()


@pytest.fixture(scope="module")
def scenario():
    return training_scenario()


class TestAssembleStepQp:
    def test_cost_weights_from_bounds(self, cfg):
        # eta 0.5 with |u2| <= 0.5 and |u1| <= 0.2: 0.5 * 0.25/0.04 = 3.125
        w1, w2 = control_cost_weights(cfg)
        assert w1 == pytest.approx(3.125)
        assert w2 == pytest.approx(0.5)

    def test_hessian_diagonal(self, cfg):
        inst = assemble_step_qp(np.array([5.0, 25.0, 0.0, 2.0]), [], cfg)
        assert np.allclose(np.diag(inst.hessian), [3.125, 0.5, 1.0, 1.0])
        assert np.count_nonzero(inst.hessian - np.diag(np.diag(inst.hessian))) == 0

    def test_unconstrained_optimum_at_goal_heading_speed(self, cfg):
        # aligned with the goal at cruise speed: nothing to do
        x = np.array([5.0, 27.0, 0.0, 2.0])
        cfg2 = replace(cfg, goal=(45.0, 27.0))
        inst = assemble_step_qp(x, [], cfg2)
        sol = solve_qp(inst)
        assert sol.status == "optimal"
        assert np.allclose(sol.x, 0.0, atol=1e-9)

    def test_contradictory_rows_infeasible(self, cfg):
        # obstacle braking demand below the acceleration floor
        from safectrl.constraints import GE, LinearConstraint

        inst = assemble_step_qp(np.array([5.0, 25.0, 0.0, 2.0]), [], cfg)
        rows = list(inst.rows) + [
            LinearConstraint(np.array([0.0, -1.0, 0.0, 0.0]), -0.6, GE, "obstacle_forced")
        ]
        from safectrl.solvers import QpInstance

        sol = solve_qp(
            QpInstance(inst.hessian, inst.linear, rows, inst.lower, inst.upper)
        )
        assert sol.status == "infeasible"
        assert sol.certificate is not None

    def test_row_order_and_tags(self, cfg, scenario):
        specs = build_obstacle_specs(scenario, TUNED)
        inst = assemble_step_qp(scenario.start.as_array(), specs, cfg)
        tags = [r.tag for r in inst.rows]
        assert tags == ["obstacle0", "speed_hi", "speed_lo", "clf_heading", "clf_speed"]


class TestRunRollout:
    def test_tuned_params_reference_band(self, scenario, cfg):
        rec = rollout_scenario(scenario, cfg, TUNED, keep_samples=False)
        assert rec.feasible and rec.converged
        assert 4.1 <= rec.D <= 5.1
        assert not rec.no_activation

    def test_discard_example_raises(self, scenario, cfg):
        bad = ClassKParams((0.05, 1.0), (1.0, 1.0))  # psi1(x0) = -1
        with pytest.raises(InitialConditionError):
            rollout_scenario(scenario, cfg, bad, keep_samples=False)

    def test_determinism(self, scenario, cfg):
        a = rollout_scenario(scenario, cfg, TUNED)
        b = rollout_scenario(scenario, cfg, TUNED)
        assert a.feasible == b.feasible and a.D == b.D and a.t_converge == b.t_converge
        assert len(a.samples) == len(b.samples)
        for sa, sb in zip(a.samples, b.samples):
            assert np.array_equal(sa.state, sb.state) and np.array_equal(sa.u, sb.u)

    def test_safety_and_activation_bound(self, scenario, cfg):
        rec = rollout_scenario(scenario, cfg, TUNED, keep_samples=False)
        assert rec.min_barrier >= -1e-3
        spec = build_obstacle_specs(scenario, TUNED)[0]
        assert rec.D <= spec.barrier(scenario.start.as_array()) + 1e-12

    def test_convergence_flag_consistency(self, scenario, cfg):
        rec = rollout_scenario(scenario, cfg, TUNED)
        assert rec.converged == (rec.t_converge is not None)
        gx, gy = scenario.goal
        # samples stop at the convergence step, so all are outside the ball
        for s in rec.samples:
            assert math.hypot(s.state[0] - gx, s.state[1] - gy) > cfg.convergence_radius

    def test_horizon_cap_marks_nonconverged(self, scenario, cfg):
        short = replace(cfg, t_f=3.0)
        rec = rollout_scenario(scenario, short, TUNED, keep_samples=False)
        assert not rec.converged and not rec.feasible
        assert rec.infeasible_t is None  # ran out of time, no QP failure


class TestRobustnessMetric:
    def test_activation_value(self, scenario, cfg):
        rec = rollout_scenario(scenario, cfg, TUNED, keep_samples=False)
        t_a, b_a = rec.activations["obstacle0"]
        assert robustness_metric(rec) == pytest.approx(b_a)

    def test_never_active_returns_min_barrier(self, cfg):
        # obstacle far away from the route: rows never tighten
        scn = Scenario(
            start=SystemState(5.0, 25.0, 0.0, 2.0),
            goal=(45.0, 27.0),
            obstacles=(Obstacle(center=(25.0, 60.0), radius=7.0),),
        )
        rec = rollout_scenario(scn, cfg, TUNED, keep_samples=False)
        assert rec.feasible and rec.no_activation
        assert robustness_metric(rec) == pytest.approx(rec.min_barrier)

    def test_infeasible_record_rejects_query(self, scenario, cfg):
        rec = rollout_scenario(scenario, replace(cfg, t_f=3.0), TUNED, keep_samples=False)
        assert not rec.feasible
        with pytest.raises(ValueError):
            robustness_metric(rec)


class TestTrajectoryCsv:
    def test_schema_and_rows(self, scenario, cfg, tmp_path):
        rec = rollout_scenario(scenario, cfg, TUNED)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(rec, path)
        raw = path.read_bytes()
        assert b"\r" not in raw  # LF endings
        lines = raw.decode("utf-8").splitlines()
        assert lines[0] == "t,x,y,theta,v,u1,u2,delta1,delta2,feasible"
        assert len(lines) == len(rec.samples) + 1
        first = lines[1].split(",")
        assert float(first[0]) == 0.0 and first[-1] == "1"

    def test_infeasible_tail_row(self, scenario, cfg, tmp_path):
        bad = ClassKParams((0.2, 0.1), (2.0, 0.5))
        rec = rollout_scenario(scenario, cfg, bad)
        if rec.feasible:  # guard: this parameter point is expected to fail
            pytest.skip("parameter point unexpectedly feasible")
        path = tmp_path / "traj.csv"
        write_trajectory_csv(rec, path)
        last = path.read_text().splitlines()[-1]
        assert last.endswith(",0")
