"""Independent dense-QP oracle for the SVM dual, used only by tests.

Solves  min 1/2 a' P a - 1' a  s.t.  0 <= a <= C, y' a = 0  with cvxopt's
interior-point solver (P = yy' * K plus a tiny ridge for strict numerical
positive-definiteness). The bias rule is re-derived here, independently of
the implementation under test: average of margin targets over free support
vectors, else the midpoint of the feasible interval.
"""

import cvxopt
import numpy as np

cvxopt.solvers.options["show_progress"] = False
cvxopt.solvers.options["abstol"] = 1e-10
cvxopt.solvers.options["reltol"] = 1e-10
cvxopt.solvers.options["feastol"] = 1e-10

_RIDGE = 1e-12


def qp_solve_dual(K: np.ndarray, y: np.ndarray, C: np.ndarray) -> np.ndarray:
    n = len(y)
    P = cvxopt.matrix(np.outer(y, y) * K + _RIDGE * np.eye(n))
    q = cvxopt.matrix(-np.ones(n))
    G = cvxopt.matrix(np.vstack([-np.eye(n), np.eye(n)]))
    h = cvxopt.matrix(np.hstack([np.zeros(n), np.asarray(C, dtype=float)]))
    A = cvxopt.matrix(np.asarray(y, dtype=float)[None, :])
    b = cvxopt.matrix(0.0)
    sol = cvxopt.solvers.qp(P, q, G, h, A, b)
    if sol["status"] not in ("optimal", "unknown"):
        raise RuntimeError(f"QP oracle failed: {sol['status']}")
    return np.clip(np.array(sol["x"]).ravel(), 0.0, np.asarray(C, dtype=float))


def qp_bias(alpha: np.ndarray, y: np.ndarray, K: np.ndarray, C: np.ndarray) -> float:
    g = K @ (alpha * y)
    t = y - g
    eps = 1e-8
    free = (alpha > eps) & (alpha < C - eps)
    if np.any(free):
        return float(t[free].mean())
    lower = ((alpha <= eps) & (y > 0)) | ((alpha >= C - eps) & (y < 0))
    upper = ((alpha <= eps) & (y < 0)) | ((alpha >= C - eps) & (y > 0))
    lo = float(t[lower].max()) if np.any(lower) else -np.inf
    hi = float(t[upper].min()) if np.any(upper) else np.inf
    if not np.isfinite(lo):
        return hi if np.isfinite(hi) else 0.0
    if not np.isfinite(hi):
        return lo
    return 0.5 * (lo + hi)


def qp_decision_on_train(alpha: np.ndarray, y: np.ndarray, K: np.ndarray, C: np.ndarray) -> np.ndarray:
    return K @ (alpha * y) + qp_bias(alpha, y, K, C)


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * (ay @ K @ ay))
