"""Sequential minimal optimization for the standard SVM dual

    min_a  1/2 a^T Q a + p^T a
    s.t.   y^T a = 0,  0 <= a_t <= C,   y_t in {-1, +1}

with ``Q[t, s] = y_t * y_s * K[idx[t], idx[s]]``.  The index map lets the
epsilon-SVR dual (2l variables over an l x l kernel) share the solver with
binary classification (idx = identity).

Working pairs are chosen by maximal KKT violation: ``i`` is the most
violating index in I_up, ``j`` the most violating in I_low.  The
``"second-order"`` selection keeps ``i`` and picks ``j`` by the largest
guaranteed decrease of the objective instead.  Ties go to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAU = 1e-12
SELECTIONS = ("max-violating", "second-order")


@dataclass
class SmoResult:
    alpha: np.ndarray
    grad: np.ndarray
    rho: float
    objective: float
    iterations: int
    violation: float
    converged: bool


def _violation_extremes(alpha, grad, y, C):
    neg_yg = -y * grad
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    return neg_yg, up, low


def max_violation(alpha, grad, y, C) -> float:
    """m(a) - M(a); the problem is optimal iff this is <= 0."""
    neg_yg, up, low = _violation_extremes(alpha, grad, y, C)
    if not up.any() or not low.any():
        return 0.0
    return float(neg_yg[up].max() - neg_yg[low].min())


def compute_rho(alpha, grad, y, C) -> float:
    yg = y * grad
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yg[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isinf(ub) and np.isinf(lb):
        return 0.0
    if np.isinf(ub):
        return float(lb)
    if np.isinf(lb):
        return float(ub)
    return float((ub + lb) / 2.0)


def solve(
    K: np.ndarray,
    idx: np.ndarray,
    y: np.ndarray,
    p: np.ndarray,
    C: float,
    tol: float = 1e-3,
    max_iter: int = 1_000_000,
    selection: str = "max-violating",
) -> SmoResult:
    if selection not in SELECTIONS:
        raise ValueError(f"unknown working-set selection {selection!r}; expected one of {SELECTIONS}")
    idx = np.asarray(idx)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    n = len(y)
    diag = np.diag(K)[idx]

    alpha = np.zeros(n)
    grad = p.copy()

    def q_column(t):
        return y[t] * y * K[idx[t], idx]

    it = 0
    converged = False
    gap = np.inf
    while it < max_iter:
        neg_yg, up, low = _violation_extremes(alpha, grad, y, C)
        up_vals = np.where(up, neg_yg, -np.inf)
        i = int(np.argmax(up_vals))
        m = up_vals[i]
        low_vals = np.where(low, neg_yg, np.inf)
        gap = m - low_vals.min()
        if gap < tol:
            converged = True
            break

        Qi = q_column(i)
        if selection == "max-violating":
            j = int(np.argmin(low_vals))
        else:
            b = m - low_vals
            cand = low & (b > 0)
            quad = diag[i] + diag - 2.0 * y[i] * y * Qi
            quad = np.where(quad > 0, quad, TAU)
            gain = np.where(cand, b * b / quad, -np.inf)
            j = int(np.argmax(gain))
        Qj = q_column(j)

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = diag[i] + diag[j] + 2.0 * Qi[j]
            if quad <= 0:
                quad = TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * Qi[j]
            if quad <= 0:
                quad = TAU
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total

        alpha[i], alpha[j] = ai, aj
        grad += Qi * (ai - ai_old) + Qj * (aj - aj_old)
        it += 1

    if not converged:
        gap = max_violation(alpha, grad, y, C)
        converged = gap < tol
    objective = 0.5 * float(alpha @ (grad + p))
    rho = compute_rho(alpha, grad, y, C)
    return SmoResult(alpha, grad, rho, objective, it, max(float(gap), 0.0), converged)
