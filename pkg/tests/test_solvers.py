"""Solver tests: spec examples plus exhaustive enumeration oracles on
randomized small instances."""

import itertools

import numpy as np
import pytest

from safectrl.constraints import GE, LE, LinearConstraint
from safectrl.solvers import (
    LpInstance,
    QpInstance,
    check_feasible,
    solve_lp,
    solve_qp,
    verify_certificate,
)


def ge(coeffs, const):
    return LinearConstraint(np.asarray(coeffs, dtype=float), const, GE)


def le(coeffs, const):
    return LinearConstraint(np.asarray(coeffs, dtype=float), const, LE)


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def stacked_ge_system(rows, lower, upper):
    """All constraints as a >= rhs, box faces included."""
    n = len(lower)
    A, rhs = [], []
    for row in rows:
        a = np.asarray(row.coeffs, dtype=float)
        if row.sense == GE:
            A.append(a)
            rhs.append(-row.const)
        else:
            A.append(-a)
            rhs.append(row.const)
    eye = np.eye(n)
    for j in range(n):
        A.append(eye[j])
        rhs.append(lower[j])
        A.append(-eye[j])
        rhs.append(-upper[j])
    return np.array(A), np.array(rhs)


def qp_oracle(H, c, rows, lower, upper):
    """Enumerate every active subset, solve its KKT system, keep the best
    candidate that is primal feasible with nonnegative multipliers."""
    n = len(c)
    A, rhs = stacked_ge_system(rows, lower, upper)
    m = A.shape[0]
    G = 2.0 * np.asarray(H, dtype=float)
    best = None
    for k in range(0, n + 1):
        for subset in itertools.combinations(range(m), k):
            Aw = A[list(subset)]
            if k and np.linalg.matrix_rank(Aw) < k:
                continue
            KKT = np.zeros((n + k, n + k))
            KKT[:n, :n] = G
            KKT[:n, n:] = -Aw.T
            KKT[n:, :n] = Aw
            try:
                sol = np.linalg.solve(KKT, np.concatenate([-c, rhs[list(subset)]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(A @ x < rhs - 1e-8):
                continue
            if k and np.min(lam) < -1e-8:
                continue
            obj = x @ (H @ x) + c @ x
            if best is None or obj < best[0] - 1e-12:
                best = (obj, x)
    return best  # None when infeasible


def lp_oracle(c, rows, lower, upper):
    """Exhaustive vertex enumeration over all n-subsets of tight planes."""
    n = len(c)
    A, rhs = stacked_ge_system(rows, lower, upper)
    m = A.shape[0]
    best = None
    for subset in itertools.combinations(range(m), n):
        Aw = A[list(subset)]
        try:
            x = np.linalg.solve(Aw, rhs[list(subset)])
        except np.linalg.LinAlgError:
            continue
        if np.any(A @ x < rhs - 1e-8):
            continue
        obj = float(c @ x)
        if best is None or obj < best[0] - 1e-12:
            best = (obj, x)
    return best


# ---------------------------------------------------------------------------
# spec examples
# ---------------------------------------------------------------------------


class TestQpExamples:
    def test_projection_onto_halfline(self):
        sol = solve_qp(
            QpInstance(np.eye(1), np.zeros(1), [ge([1.0], -1.0)], np.array([-5.0]), np.array([5.0]))
        )
        assert sol.status == "optimal"
        assert sol.x[0] == pytest.approx(1.0, abs=1e-9)

    def test_empty_feasible_set_certificate(self):
        inst = QpInstance(
            np.eye(1),
            np.zeros(1),
            [ge([1.0], -1.0), le([1.0], 0.0)],
            np.array([-5.0]),
            np.array([5.0]),
        )
        sol = solve_qp(inst)
        assert sol.status == "infeasible"
        assert verify_certificate(inst, sol.certificate)

    def test_independent_coordinate_projections(self):
        rows = [ge([1.0, 0, 0], -0.3), ge([0, 0, 1.0], 0.0)]
        sol = solve_qp(
            QpInstance(np.eye(3), np.zeros(3), rows, -np.ones(3), np.ones(3))
        )
        assert np.allclose(sol.x, [0.3, 0.0, 0.0], atol=1e-9)


class TestLpExamples:
    def test_single_box(self):
        r = solve_lp(LpInstance(np.array([1.0]), [], np.array([-0.1]), np.array([0.1])))
        assert r.x[0] == pytest.approx(-0.1)

    def test_opposing_costs(self):
        r = solve_lp(
            LpInstance(np.array([1.0, -1.0]), [], np.array([-0.1, -0.1]), np.array([0.1, 0.1]))
        )
        assert np.allclose(r.x, [-0.1, 0.1])

    def test_row_binds_before_box(self):
        r = solve_lp(
            LpInstance(np.array([-1.0]), [le([1.0], -0.05)], np.array([-0.1]), np.array([0.1]))
        )
        assert r.x[0] == pytest.approx(0.05, abs=1e-10)

    def test_zero_cost_rests_at_zero(self):
        r = solve_lp(LpInstance(np.array([1.0, 0.0]), [], -np.ones(2), np.ones(2)))
        assert np.allclose(r.x, [-1.0, 0.0])


class TestCheckFeasible:
    def test_contradictory(self):
        assert not check_feasible([ge([1.0], -1.0), le([1.0], 0.0)], [-5.0], [5.0])

    def test_empty_rows(self):
        assert check_feasible([], [-1.0, -1.0], [1.0, 1.0])

    def test_corner(self):
        assert check_feasible([ge([1.0, 1.0], -1.9)], [0.0, 0.0], [1.0, 1.0])


# ---------------------------------------------------------------------------
# randomized oracle equivalence
# ---------------------------------------------------------------------------


def random_instance(rng, n):
    diag = rng.uniform(0.2, 3.0, size=n)
    H = np.diag(diag)
    if rng.random() < 0.5:
        # random SPD with correlations
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.2 * np.eye(n)
    c = rng.normal(size=n)
    lower = rng.uniform(-2.0, -0.2, size=n)
    upper = rng.uniform(0.2, 2.0, size=n)
    rows = []
    for _ in range(rng.integers(0, 7)):
        coeffs = rng.normal(size=n)
        const = rng.normal() * 1.5
        sense = GE if rng.random() < 0.5 else LE
        rows.append(LinearConstraint(coeffs, const, sense))
    return H, c, rows, lower, upper


def test_qp_matches_enumeration_oracle():
    rng = np.random.default_rng(7)
    n_infeasible = 0
    for trial in range(250):
        n = int(rng.integers(1, 4))
        H, c, rows, lower, upper = random_instance(rng, n)
        inst = QpInstance(H, c, rows, lower, upper)
        sol = solve_qp(inst)
        best = qp_oracle(H, c, rows, lower, upper)
        if best is None:
            n_infeasible += 1
            assert sol.status == "infeasible", f"trial {trial}"
            assert verify_certificate(inst, sol.certificate), f"trial {trial}"
        else:
            assert sol.status == "optimal", f"trial {trial}"
            assert sol.objective == pytest.approx(best[0], abs=1e-6), f"trial {trial}"
            assert sol.kkt_residual <= 1e-6, f"trial {trial}"
    assert n_infeasible > 10  # the generator must exercise both outcomes


def test_lp_matches_vertex_enumeration():
    rng = np.random.default_rng(11)
    for trial in range(250):
        n = int(rng.integers(1, 4))
        _, c, rows, lower, upper = random_instance(rng, n)
        inst = LpInstance(c, rows, lower, upper)
        sol = solve_lp(inst)
        best = lp_oracle(c, rows, lower, upper)
        if best is None:
            assert sol.status == "infeasible", f"trial {trial}"
        else:
            assert sol.status == "optimal", f"trial {trial}"
            assert sol.objective == pytest.approx(best[0], abs=1e-6), f"trial {trial}"


def test_qp_feasibility_matches_check_feasible():
    rng = np.random.default_rng(13)
    for _ in range(120):
        n = int(rng.integers(1, 4))
        _, _, rows, lower, upper = random_instance(rng, n)
        feas = check_feasible(rows, lower, upper)
        assert feas == (lp_oracle(np.zeros(n), rows, lower, upper) is not None)


def test_certificate_margin():
    rng = np.random.default_rng(17)
    checked = 0
    for _ in range(200):
        n = int(rng.integers(1, 4))
        H, c, rows, lower, upper = random_instance(rng, n)
        inst = QpInstance(H, c, rows, lower, upper)
        sol = solve_qp(inst)
        if sol.status != "infeasible":
            continue
        checked += 1
        cert = sol.certificate
        assert verify_certificate(inst, cert)
        assert cert["gap"] >= 1e-10
    assert checked > 5


def test_determinism_bit_for_bit():
    rng = np.random.default_rng(19)
    for _ in range(30):
        n = int(rng.integers(1, 4))
        H, c, rows, lower, upper = random_instance(rng, n)
        inst = QpInstance(H, c, rows, lower, upper)
        a = solve_qp(inst)
        b = solve_qp(inst)
        assert a.status == b.status
        if a.status == "optimal":
            assert a.x.tobytes() == b.x.tobytes()
        lp = LpInstance(c, rows, lower, upper)
        la, lb = solve_lp(lp), solve_lp(lp)
        assert la.status == lb.status
        if la.status == "optimal":
            assert la.x.tobytes() == lb.x.tobytes()


def test_rejects_bad_hessian():
    with pytest.raises(ValueError):
        solve_qp(QpInstance(np.array([[-1.0]]), np.zeros(1), [], np.array([-1.0]), np.array([1.0])))
    with pytest.raises(ValueError):
        solve_qp(
            QpInstance(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2), [], -np.ones(2), np.ones(2))
        )
    with pytest.raises(ValueError):
        solve_qp(QpInstance(np.eye(2), np.zeros(3), [], -np.ones(3), np.ones(3)))


def test_warm_start_does_not_change_answer():
    rng = np.random.default_rng(23)
    for _ in range(40):
        n = int(rng.integers(1, 4))
        H, c, rows, lower, upper = random_instance(rng, n)
        inst = QpInstance(H, c, rows, lower, upper)
        cold = solve_qp(inst)
        warm = solve_qp(inst, warm_start=rng.uniform(lower, upper))
        assert cold.status == warm.status
        if cold.status == "optimal":
            assert np.allclose(cold.x, warm.x, atol=1e-7)
            assert warm.kkt_residual <= 1e-6
