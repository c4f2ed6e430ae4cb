"""Small dense QP/LP solvers sized for a handful of variables and tens of rows.

The QP solver is a primal active-set method (feasible start from a two-phase
bounded-variable simplex); the LP solver is the same simplex. Both are
deterministic: Bland's lowest-index rules break every tie, so identical
instances produce identical answers bit for bit. Infeasible systems come
back with a Farkas-style certificate: nonnegative multipliers on the
canonicalized >= rows and on the box faces whose combination reads
0 >= positive constant.

Conventions
-----------
QP objective:  x^T H x + c^T x   (weights sit directly on the squares)
Rows are `LinearConstraint`s; internally every row is canonicalized to
a . x >= rhs (<= rows are negated). All variable boxes must be finite.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constraints import GE, LinearConstraint

FEAS_TOL = 1e-8  # max violation accepted as "satisfied"
KKT_TOL = 1e-6  # residual bound certified on every reported optimum
_PIVOT_TOL = 1e-11
_RCOST_TOL = 1e-10
_ZERO_ROW_TOL = 1e-14


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# canonical row form
# ---------------------------------------------------------------------------


def _canonical_rows(rows: Sequence[LinearConstraint], n: int):
    """Rows as (A, rhs) with A x >= rhs; zero rows are screened separately.

    Returns (A, rhs, keep_idx, bad_zero_row_idx). A zero row whose constant
    already violates its sense makes the system trivially infeasible.
    """
    A, rhs, keep = [], [], []
    for i, row in enumerate(rows):
        coeffs = np.asarray(row.coeffs, dtype=float)
        if coeffs.shape != (n,):
            raise ValueError(f"row {i} has {coeffs.shape[0]} coefficients, expected {n}")
        a, r = (coeffs, -row.const) if row.sense == GE else (-coeffs, row.const)
        if np.max(np.abs(a)) <= _ZERO_ROW_TOL:
            if r > FEAS_TOL:
                return None, None, None, i
            continue
        A.append(a)
        rhs.append(r)
        keep.append(i)
    if A:
        return np.array(A), np.array(rhs), keep, None
    return np.zeros((0, n)), np.zeros(0), keep, None


# ---------------------------------------------------------------------------
# bounded-variable two-phase revised simplex on  A x >= rhs,  l <= x <= u
# ---------------------------------------------------------------------------


@dataclass
class _SimplexResult:
    feasible: bool
    x: Optional[np.ndarray] = None
    obj: float = 0.0
    # Farkas data when infeasible: row multipliers y >= 0 plus box-face
    # multipliers mu_lo, mu_hi >= 0 with  y^T A + mu_lo - mu_hi = 0  and
    # y^T rhs + mu_lo^T l - mu_hi^T u > 0.
    farkas_rows: Optional[np.ndarray] = None
    farkas_lo: Optional[np.ndarray] = None
    farkas_hi: Optional[np.ndarray] = None
    farkas_gap: float = 0.0


def _bounded_simplex(c, A, rhs, l, u, rest_zero_cost_at_zero=False) -> _SimplexResult:
    """Minimize c.x over {A x >= rhs, l <= x <= u} (finite l, u)."""
    m, n = A.shape
    c = np.asarray(c, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(l > u):
        j = int(np.argmax(l > u))
        res = _SimplexResult(feasible=False)
        res.farkas_rows = np.zeros(m)
        res.farkas_lo = np.zeros(n)
        res.farkas_hi = np.zeros(n)
        res.farkas_lo[j] = 1.0
        res.farkas_hi[j] = 1.0
        res.farkas_gap = l[j] - u[j]
        return res

    # Standard form: A x - s = rhs with surplus s >= 0, plus an artificial
    # t_i >= 0 on each row violated at the starting vertex.
    start = np.where(np.abs(l) <= np.abs(u), l, u)
    resid = A @ start - rhs  # surplus value if the slack were basic

    n_s = m
    cols_s = np.arange(n, n + n_s)
    art_rows = np.where(resid < 0.0)[0]
    n_a = len(art_rows)
    cols_a = np.arange(n + n_s, n + n_s + n_a)
    N = n + n_s + n_a

    T = np.zeros((m, N))
    T[:, :n] = A
    T[np.arange(m), cols_s] = -1.0
    for k, i in enumerate(art_rows):
        T[i, cols_a[k]] = 1.0  # t_i = rhs_i - a_i.start > 0 at the start

    lo = np.concatenate([l, np.zeros(n_s + n_a)])
    hi = np.concatenate([u, np.full(n_s + n_a, np.inf)])

    val = np.zeros(N)
    val[:n] = start
    basis = np.empty(m, dtype=int)
    basis[:] = cols_s
    for k, i in enumerate(art_rows):
        basis[i] = cols_a[k]
    in_basis = np.zeros(N, dtype=bool)
    in_basis[basis] = True
    at_upper = np.zeros(N, dtype=bool)
    at_upper[:n] = (start == u) & (l < u)

    def run_phase(cost):
        nonlocal val, basis, in_basis, at_upper
        max_iter = 500 + 60 * m
        for _ in range(max_iter):
            B = T[:, basis]
            nonbasic_part = T @ val - B @ val[basis]
            val[basis] = np.linalg.solve(B, rhs - nonbasic_part)
            y = np.linalg.solve(B.T, cost[basis])
            d = cost - y @ T
            enter = -1
            for j in range(N):  # Bland: lowest eligible index
                if in_basis[j] or lo[j] == hi[j]:
                    continue
                if (not at_upper[j] and d[j] < -_RCOST_TOL) or (
                    at_upper[j] and d[j] > _RCOST_TOL
                ):
                    enter = j
                    break
            if enter < 0:
                return float(cost @ val), y, d
            sigma = -1.0 if at_upper[enter] else 1.0
            w = np.linalg.solve(B, T[:, enter])
            # entering moves by delta*sigma >= 0 off its bound; basics move
            # by -delta*sigma*w
            best_cap = hi[enter] - lo[enter]  # bound-flip distance
            leave_pos = -1
            for k in range(m):
                coef = sigma * w[k]
                bk = basis[k]
                if coef > _PIVOT_TOL:
                    cap = max(0.0, (val[bk] - lo[bk]) / coef)
                elif coef < -_PIVOT_TOL and np.isfinite(hi[bk]):
                    cap = max(0.0, (hi[bk] - val[bk]) / (-coef))
                else:
                    continue
                if cap < best_cap - 1e-12:
                    best_cap = cap
                    leave_pos = k
                elif cap <= best_cap + 1e-12 and leave_pos >= 0 and basis[k] < basis[leave_pos]:
                    leave_pos = k  # Bland tie-break on variable index
            if not np.isfinite(best_cap):
                raise SolverError("LP unbounded despite box bounds")
            val[basis] -= best_cap * sigma * w
            if leave_pos < 0:
                val[enter] = hi[enter] if sigma > 0 else lo[enter]
                at_upper[enter] = sigma > 0
            else:
                leave = basis[leave_pos]
                coef = sigma * w[leave_pos]
                val[leave] = lo[leave] if coef > 0 else hi[leave]
                at_upper[leave] = coef <= 0
                in_basis[leave] = False
                val[enter] = val[enter] + best_cap * sigma
                basis[leave_pos] = enter
                in_basis[enter] = True
        raise SolverError("simplex iteration cap exceeded")

    # phase 1
    if n_a:
        cost1 = np.zeros(N)
        cost1[cols_a] = 1.0
        obj1, y1, d1 = run_phase(cost1)
        if obj1 > 1e-9:
            mu_lo = np.zeros(n)
            mu_hi = np.zeros(n)
            for j in range(n):
                if in_basis[j]:
                    continue
                if at_upper[j]:
                    mu_hi[j] = max(0.0, -d1[j])
                else:
                    mu_lo[j] = max(0.0, d1[j])
            res = _SimplexResult(feasible=False)
            res.farkas_rows = np.maximum(y1, 0.0)
            res.farkas_lo = mu_lo
            res.farkas_hi = mu_hi
            res.farkas_gap = res.farkas_rows @ rhs + mu_lo @ l - mu_hi @ u
            return res
        # drive leftover basic artificials (value ~ 0) out if possible
        hi[cols_a] = 0.0
        lo[cols_a] = 0.0

    # phase 2: forbid artificials from re-entering by freezing their bounds
    cost2 = np.zeros(N)
    cost2[:n] = c
    run_phase(cost2)
    x = val[:n].copy()

    if rest_zero_cost_at_zero:
        x = _relax_zero_cost(c, A, rhs, l, u, x)
    return _SimplexResult(feasible=True, x=x, obj=float(c @ x))


def _relax_zero_cost(c, A, rhs, l, u, x):
    """Move zero-cost coordinates as close to 0 as rows and box allow.

    Tie-breaking rule: an optimum is not unique along zero-cost directions,
    and parameter-step uses should leave those coordinates untouched.
    """
    x = x.copy()
    for j in range(len(x)):
        if c[j] != 0.0:
            continue
        lo_d, hi_d = l[j] - x[j], u[j] - x[j]
        if A.shape[0]:
            slack = A @ x - rhs
            col = A[:, j]
            for i in range(A.shape[0]):
                if col[i] > _PIVOT_TOL:
                    lo_d = max(lo_d, -slack[i] / col[i])
                elif col[i] < -_PIVOT_TOL:
                    hi_d = min(hi_d, slack[i] / (-col[i]))
        delta = min(max(-x[j], lo_d), hi_d)
        if lo_d <= delta <= hi_d:
            x[j] += delta
    return x


# ---------------------------------------------------------------------------
# public LP interface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LpInstance:
    cost: np.ndarray
    rows: Sequence[LinearConstraint]
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class LpSolution:
    status: str  # "optimal" | "infeasible"
    x: Optional[np.ndarray] = None
    objective: float = math.nan


def solve_lp(inst: LpInstance) -> LpSolution:
    """Vertex optimum of a boxed LP (every variable needs finite bounds).

    Zero-cost coordinates rest at 0 whenever rows and box allow; degenerate
    pivots resolve by lowest index, so solutions are reproducible.
    """
    c = np.asarray(inst.cost, dtype=float)
    n = c.shape[0]
    l = np.asarray(inst.lower, dtype=float)
    u = np.asarray(inst.upper, dtype=float)
    if not (np.all(np.isfinite(l)) and np.all(np.isfinite(u))):
        raise ValueError("LP variable boxes must be finite")
    A, rhs, _, bad = _canonical_rows(inst.rows, n)
    if bad is not None:
        return LpSolution(status="infeasible")
    res = _bounded_simplex(c, A, rhs, l, u, rest_zero_cost_at_zero=True)
    if not res.feasible:
        return LpSolution(status="infeasible")
    return LpSolution(status="optimal", x=res.x, objective=res.obj)


def check_feasible(rows: Sequence[LinearConstraint], lower, upper) -> bool:
    """True iff the rows admit a point in the box with violation <= 1e-8."""
    l = np.asarray(lower, dtype=float)
    u = np.asarray(upper, dtype=float)
    n = l.shape[0]
    A, rhs, _, bad = _canonical_rows(rows, n)
    if bad is not None:
        return False
    res = _bounded_simplex(np.zeros(n), A, rhs, l, u)
    return res.feasible


# ---------------------------------------------------------------------------
# QP: primal active set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QpInstance:
    """min x^T H x + c^T x  s.t. rows, lower <= x <= upper."""

    hessian: np.ndarray
    linear: np.ndarray
    rows: Sequence[LinearConstraint]
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class QpSolution:
    status: str  # "optimal" | "infeasible"
    x: Optional[np.ndarray] = None
    objective: float = math.nan
    active_set: tuple = ()
    kkt_residual: float = math.nan
    certificate: Optional[dict] = None


def _validate_qp(inst: QpInstance):
    H = np.asarray(inst.hessian, dtype=float)
    c = np.asarray(inst.linear, dtype=float)
    n = c.shape[0]
    if H.shape != (n, n):
        raise ValueError(f"hessian shape {H.shape} does not match {n} variables")
    scale = max(1.0, float(np.max(np.abs(H))))
    if np.max(np.abs(H - H.T)) > 1e-10 * scale:
        raise ValueError("hessian must be symmetric")
    diag = np.diag(H)
    offdiag = np.abs(H).sum() - np.abs(diag).sum()
    if offdiag <= 1e-14 * scale:
        if np.min(diag) < -1e-12 * scale:
            raise ValueError("hessian must be positive semidefinite")
    elif np.min(np.linalg.eigvalsh(H)) < -1e-9 * scale:
        raise ValueError("hessian must be positive semidefinite")
    l = np.asarray(inst.lower, dtype=float)
    u = np.asarray(inst.upper, dtype=float)
    if l.shape != (n,) or u.shape != (n,):
        raise ValueError("bounds must match the variable count")
    if not (np.all(np.isfinite(l)) and np.all(np.isfinite(u))):
        raise ValueError("QP variable boxes must be finite")
    return H, c, n, l, u


def solve_qp(inst: QpInstance, warm_start=None, max_iter: int = 400) -> QpSolution:
    """Solve a small dense convex QP; infeasible systems carry a certificate.

    `warm_start` may supply a candidate feasible point (skips the phase-1
    LP when it checks out). With a positive-definite hessian the minimizer
    is unique, so warm starts change the path, not the answer.
    """
    H, c, n, l, u = _validate_qp(inst)
    A_r, rhs_r, keep, bad = _canonical_rows(inst.rows, n)
    if bad is not None:
        row = inst.rows[bad]
        gap = float(-row.const if row.sense == GE else row.const)
        cert = {"rows": {bad: 1.0}, "lower": {}, "upper": {}, "gap": gap}
        return QpSolution(status="infeasible", certificate=cert)

    # full >= system: instance rows then box faces x >= l, -x >= -u
    eye = np.eye(n)
    A = np.vstack([A_r, eye, -eye])
    rhs = np.concatenate([rhs_r, l, -u])
    m_r = A_r.shape[0]

    x = None
    if warm_start is not None:
        cand = np.asarray(warm_start, dtype=float)
        if cand.shape == (n,) and np.all(A @ cand >= rhs - 1e-9):
            x = cand.copy()
    if x is None:
        res = _bounded_simplex(np.zeros(n), A_r, rhs_r, l, u)
        if not res.feasible:
            cert = _certificate_from_farkas(res, keep, n)
            return QpSolution(status="infeasible", certificate=cert)
        x = res.x

    G = 2.0 * H
    work: list = []  # indices into the stacked >= system
    n_rows_total = A.shape[0]
    for _ in range(max_iter):
        g = G @ x + c
        k = len(work)
        if k:
            # KKT of the equality-constrained subproblem; multipliers signed
            # so that grad f = A_w^T lam at a stationary point.
            Aw = A[work]
            KKT = np.zeros((n + k, n + k))
            KKT[:n, :n] = G
            KKT[:n, n:] = -Aw.T
            KKT[n:, :n] = Aw
            sol = np.linalg.solve(KKT, np.concatenate([-g, np.zeros(k)]))
            p, lam = sol[:n], sol[n:]
        else:
            p = np.linalg.solve(G, -g) if np.min(np.abs(np.diag(G))) > 0 else _pinv_dir(G, g)
            lam = np.zeros(0)

        if np.max(np.abs(p)) <= 1e-11 * (1.0 + np.max(np.abs(x))):
            if k == 0 or np.min(lam) >= -1e-9:
                return _finish_qp(inst, x, H, c, A, rhs, m_r, keep, work, lam)
            drop = int(np.argmin(lam))
            work.pop(drop)
            continue

        alpha = 1.0
        blocker = -1
        Ap = A @ p
        Ax = A @ x
        for i in range(n_rows_total):
            if i in work or Ap[i] >= -1e-12:
                continue
            cap = (rhs[i] - Ax[i]) / Ap[i]
            if cap < alpha - 1e-14:
                alpha = max(cap, 0.0)
                blocker = i
        x = x + alpha * p
        if blocker >= 0:
            work.append(blocker)
    raise SolverError("active-set iteration cap exceeded")


def _pinv_dir(G, g):
    sol, *_ = np.linalg.lstsq(G, -g, rcond=None)
    return sol


def _finish_qp(inst, x, H, c, A, rhs, m_r, keep, work, lam) -> QpSolution:
    lam_full = np.zeros(A.shape[0])
    for idx, lm in zip(work, lam):
        lam_full[idx] = max(lm, 0.0)
    station = np.max(np.abs(2.0 * H @ x + c - A.T @ lam_full))
    viol = float(max(0.0, np.max(rhs - A @ x, initial=0.0)))
    comp = float(np.max(np.abs(lam_full * (A @ x - rhs)), initial=0.0))
    residual = max(station, viol, comp)

    active = tuple(
        i
        for i, row in enumerate(inst.rows)
        if abs(row.value(x)) <= 1e-7 * (1.0 + abs(row.const))
    )
    obj = float(x @ (H @ x) + c @ x)
    return QpSolution(
        status="optimal",
        x=x,
        objective=obj,
        active_set=active,
        kkt_residual=float(residual),
    )


def _certificate_from_farkas(res: _SimplexResult, keep, n) -> dict:
    rows = {keep[i]: float(v) for i, v in enumerate(res.farkas_rows) if v > 0.0}
    lo = {j: float(v) for j, v in enumerate(res.farkas_lo) if v > 0.0}
    hi = {j: float(v) for j, v in enumerate(res.farkas_hi) if v > 0.0}
    return {"rows": rows, "lower": lo, "upper": hi, "gap": float(res.farkas_gap)}


def verify_certificate(inst, cert, tol: float = FEAS_TOL) -> bool:
    """Check a Farkas certificate: combination 0 >= gap with gap > 0.

    Row multipliers apply to rows in >=-canonical orientation.
    """
    if isinstance(inst, QpInstance) or isinstance(inst, LpInstance):
        rows, lower, upper = inst.rows, inst.lower, inst.upper
    else:
        raise TypeError("expected QpInstance or LpInstance")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = lower.shape[0]
    combo = np.zeros(n)
    rhs_sum = 0.0
    for i, y in cert["rows"].items():
        if y < 0:
            return False
        row = rows[i]
        a = np.asarray(row.coeffs, dtype=float)
        r = -row.const
        if row.sense != GE:
            a, r = -a, row.const
        combo += y * a
        rhs_sum += y * r
    for j, v in cert["lower"].items():
        if v < 0:
            return False
        combo[j] += v
        rhs_sum += v * lower[j]
    for j, v in cert["upper"].items():
        if v < 0:
            return False
        combo[j] -= v
        rhs_sum += -v * upper[j]
    scale = 1.0 + max((abs(v) for v in cert["rows"].values()), default=0.0)
    return bool(np.max(np.abs(combo), initial=0.0) <= tol * scale and rhs_sum >= 1e-10)
