"""Soft-margin SVM with a degree-7 polynomial kernel, trained by sequential
minimal optimization. The decision function doubles as the differentiable
feasibility hypersurface steering the parameter tuner, so both its value and
its analytic gradient are first-class outputs.
"""

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .persistence import atomic_write_text


@dataclass(frozen=True)
class KernelParams:
    c1: float = 0.8
    c2: float = 0.5
    degree: int = 7

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("kernel offset and scale must be positive")
        if self.degree < 1:
            raise ValueError("kernel degree must be a positive integer")


def kernel(y, z, kp: KernelParams = KernelParams()) -> float:
    """(c1 + c2 <y, z>)^degree."""
    return float((kp.c1 + kp.c2 * np.dot(y, z)) ** kp.degree)


def _gram(X, Z, kp: KernelParams) -> np.ndarray:
    return (kp.c1 + kp.c2 * (X @ Z.T)) ** kp.degree


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # (n_sv, 4)
    coef: np.ndarray  # alpha_i * y_i per support vector
    bias: float
    kernel: KernelParams
    C: float
    training_accuracy: float

    def decision(self, point) -> float:
        return decision(self, point)

    def decision_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _gram(X, self.support_vectors, self.kernel) @ self.coef + self.bias

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_batch(X) >= 0.0, 1.0, -1.0)


def decision(model: SvmModel, point) -> float:
    """H(point) = sum_i coef_i k(sv_i, point) + bias."""
    point = np.asarray(point, dtype=float)
    kp = model.kernel
    k = (kp.c1 + kp.c2 * (model.support_vectors @ point)) ** kp.degree
    return float(k @ model.coef + model.bias)


def decision_gradient(model: SvmModel, point) -> np.ndarray:
    """dH/dpoint, exact: chain rule through each kernel term."""
    point = np.asarray(point, dtype=float)
    kp = model.kernel
    base = (kp.c1 + kp.c2 * (model.support_vectors @ point)) ** (kp.degree - 1)
    w = model.coef * base * (kp.degree * kp.c2)
    return w @ model.support_vectors


def fit(
    X,
    y,
    kp: KernelParams = KernelParams(),
    C: float = 100.0,
    kkt_tol: float = 1e-3,
    max_passes: int = 10_000,
) -> SvmModel:
    """Train on labeled rows (y in {-1, +1}) by pairwise dual ascent.

    Each update takes the maximal-violating pair (the extreme admissible
    dual-gradient entries, lowest index on ties), so selection is
    deterministic. Stops when the violating-pair gap falls below kkt_tol or
    after max_passes sweeps' worth of pair updates (one sweep = m updates).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X and y sizes disagree")
    classes = np.unique(y)
    if not np.array_equal(np.sort(classes), [-1.0, 1.0]):
        raise ValueError(f"need both labels -1 and +1, got classes {classes}")

    m = X.shape[0]
    K = _gram(X, X, kp)
    alpha = np.zeros(m)
    fhat = np.zeros(m)  # sum_j alpha_j y_j K_ij, bias excluded
    eps = 1e-12

    def take_step(i, j):
        ai, aj = alpha[i], alpha[j]
        yi, yj = y[i], y[j]
        s = yi * yj
        if s < 0:
            L, H_ = max(0.0, aj - ai), min(C, C + aj - ai)
        else:
            L, H_ = max(0.0, ai + aj - C), min(C, ai + aj)
        if L >= H_ - eps:
            return False
        # PSD Gram makes eta >= 0; ~0 only for (near-)duplicate rows, where
        # this pair cannot make progress anyway.
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= eps:
            return False
        aj_new = aj + yj * ((fhat[i] - yi) - (fhat[j] - yj)) / eta
        aj_new = min(max(aj_new, L), H_)
        if abs(aj_new - aj) < eps * (aj_new + aj + eps):
            return False
        ai_new = ai + s * (aj - aj_new)
        fhat[:] = fhat + yi * (ai_new - ai) * K[i] + yj * (aj_new - aj) * K[j]
        alpha[i], alpha[j] = ai_new, aj_new
        return True

    K_diag = np.diag(K).copy()

    def admissible(ng, a):
        up = ((y > 0) & (a < C - eps)) | ((y < 0) & (a > eps))
        low = ((y > 0) & (a > eps)) | ((y < 0) & (a < C - eps))
        return up, low

    # Most updates late in the run touch only the eventual support vectors,
    # so selection works on a shrunken active set that is rebuilt (and the
    # stopping condition re-verified globally) every recheck interval.
    active = np.arange(m)
    recheck_every = 2048
    since_recheck = 0
    max_updates = max_passes * m
    done = False
    for _ in range(max_updates):
        if since_recheck >= recheck_every or since_recheck == 0:
            ng = y - fhat
            up_g, low_g = admissible(ng, alpha)
            if not up_g.any() or not low_g.any():
                done = True
                break
            m_up = np.max(np.where(up_g, ng, -np.inf))
            m_low = np.min(np.where(low_g, ng, np.inf))
            if m_up - m_low <= kkt_tol:
                done = True
                break
            margin = 0.5 * kkt_tol
            free = (alpha > eps) & (alpha < C - eps)
            keep = free | (up_g & (ng > m_low + margin)) | (low_g & (ng < m_up - margin))
            active = np.where(keep)[0]
            since_recheck = 0
        since_recheck += 1

        ya = y[active]
        aa = alpha[active]
        ng_a = ya - fhat[active]
        up = ((ya > 0) & (aa < C - eps)) | ((ya < 0) & (aa > eps))
        low = ((ya > 0) & (aa > eps)) | ((ya < 0) & (aa < C - eps))
        if not up.any() or not low.any():
            since_recheck = recheck_every  # force a global recheck
            continue
        up_vals = np.where(up, ng_a, -np.inf)
        low_vals = np.where(low, ng_a, np.inf)
        ii = int(np.argmax(up_vals))
        gi = up_vals[ii]
        if gi - low_vals.min() <= kkt_tol:
            since_recheck = recheck_every
            continue
        i = int(active[ii])
        # second-order partner choice: maximize the guaranteed dual decrease
        # (gap^2 / curvature) among admissible points below gi
        diff = gi - ng_a
        curv = np.maximum(K_diag[i] + K_diag[active] - 2.0 * K[i, active], 1e-12)
        score = np.where(low & (diff > 0.0), diff * diff / curv, -np.inf)
        score[ii] = -np.inf
        jj = int(np.argmax(score))
        stepped = np.isfinite(score[jj]) and take_step(i, int(active[jj]))
        if not stepped:
            # rare: walk milder partners until one moves
            for jj in np.argsort(-score, kind="stable"):
                if not np.isfinite(score[jj]):
                    break
                if take_step(i, int(active[jj])):
                    stepped = True
                    break
        if not stepped:
            since_recheck = recheck_every  # stuck on this set: re-verify globally
            ng = y - fhat
            up_g, low_g = admissible(ng, alpha)
            m_up = np.max(np.where(up_g, ng, -np.inf))
            m_low = np.min(np.where(low_g, ng, np.inf))
            if m_up - m_low <= kkt_tol or len(active) == m:
                done = True
                break

    # bias from the final optimality interval (mean over free vectors when
    # any exist, else the interval midpoint)
    neg_grad = y - fhat
    free = (alpha > eps) & (alpha < C - eps)
    up = ((y > 0) & (alpha < C - eps)) | ((y < 0) & (alpha > eps))
    low = ((y > 0) & (alpha > eps)) | ((y < 0) & (alpha < C - eps))
    if free.any():
        b = float(np.mean(neg_grad[free]))
    elif up.any() and low.any():
        b = float(0.5 * (np.max(neg_grad[up]) + np.min(neg_grad[low])))
    else:
        b = 0.0

    mask = alpha > 1e-8
    model = SvmModel(
        support_vectors=X[mask].copy(),
        coef=(alpha * y)[mask].copy(),
        bias=b,
        kernel=kp,
        C=float(C),
        training_accuracy=0.0,
    )
    model.training_accuracy = accuracy(model, X, y)
    return model


def train(dataset, kp: KernelParams = KernelParams(), C: float = 100.0, **kw) -> SvmModel:
    """Fit on a labeled feasibility dataset (discarded samples excluded)."""
    X, y = dataset.matrix()
    return fit(X, y, kp=kp, C=C, **kw)


def accuracy(model: SvmModel, X, y) -> float:
    return float(np.mean(model.predict(X) == np.asarray(y, dtype=float)))


def confusion(model: SvmModel, X, y) -> dict:
    pred = model.predict(X)
    y = np.asarray(y, dtype=float)
    return {
        "tp": int(np.sum((pred == 1) & (y == 1))),
        "tn": int(np.sum((pred == -1) & (y == -1))),
        "fp": int(np.sum((pred == 1) & (y == -1))),
        "fn": int(np.sum((pred == -1) & (y == 1))),
    }


def save_model(model: SvmModel, path) -> None:
    doc = {
        "kernel": {"c1": model.kernel.c1, "c2": model.kernel.c2, "degree": model.kernel.degree},
        "C": model.C,
        "bias": model.bias,
        "training_accuracy": model.training_accuracy,
        "sv": [[float(v) for v in row] for row in model.support_vectors],
        "coef": [float(v) for v in model.coef],
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_model(path) -> SvmModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    kp = KernelParams(**doc["kernel"])
    return SvmModel(
        support_vectors=np.array(doc["sv"], dtype=float).reshape(-1, 4),
        coef=np.array(doc["coef"], dtype=float),
        bias=float(doc["bias"]),
        kernel=kp,
        C=float(doc["C"]),
        training_accuracy=float(doc.get("training_accuracy", 0.0)),
    )
