"""Hot numeric kernels: bilinear resize, SVM kernel matrices, SMO solver.

Every kernel exists twice: a scalar-loop version compiled with numba's
``@njit`` and a vectorized pure-numpy fallback. The active path is chosen
at import time: numba is used when it imports successfully and the
environment variable ``ABRSVM_DISABLE_NUMBA`` is unset/``0``. Both
variants stay importable (``*_numba`` / ``*_numpy``) so tests and the
benchmark can exercise them side by side.

The paired variants evaluate the same IEEE expressions in the same order
and produce bit-identical results (resize outputs, SMO alphas/threshold/
iteration counts), so the env flag selects speed, never numbers.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        return wrap


USING_NUMBA = _HAVE_NUMBA and os.environ.get("ABRSVM_DISABLE_NUMBA", "0") not in (
    "1",
    "true",
    "yes",
)


# ---------------------------------------------------------------------------
# Bilinear resize, half-pixel-center convention.
#
# Destination pixel (i, j) samples source coordinates
#   sy = (i + 0.5) * H_src / H_dst - 0.5
#   sx = (j + 0.5) * W_src / W_dst - 0.5
# clamped to the source grid. Resizing to the source size is the exact
# identity (sy == i, sx == j, zero fractional weights).
# ---------------------------------------------------------------------------


def _resize_core(src, out_h, out_w):
    in_h, in_w, nc = src.shape
    out = np.empty((out_h, out_w, nc), dtype=np.float64)
    scale_y = in_h / out_h
    scale_x = in_w / out_w
    for i in range(out_h):
        sy = (i + 0.5) * scale_y - 0.5
        if sy < 0.0:
            sy = 0.0
        if sy > in_h - 1.0:
            sy = in_h - 1.0
        y0 = int(sy)
        if y0 > in_h - 2:
            y0 = in_h - 2
        fy = sy - y0
        for j in range(out_w):
            sx = (j + 0.5) * scale_x - 0.5
            if sx < 0.0:
                sx = 0.0
            if sx > in_w - 1.0:
                sx = in_w - 1.0
            x0 = int(sx)
            if x0 > in_w - 2:
                x0 = in_w - 2
            fx = sx - x0
            for c in range(nc):
                p00 = src[y0, x0, c]
                p01 = src[y0, x0 + 1, c]
                p10 = src[y0 + 1, x0, c]
                p11 = src[y0 + 1, x0 + 1, c]
                top = p00 * (1.0 - fx) + p01 * fx
                bot = p10 * (1.0 - fx) + p11 * fx
                out[i, j, c] = top * (1.0 - fy) + bot * fy
    return out


resize_numba = njit(cache=True, nogil=True)(_resize_core)


def resize_numpy(src, out_h, out_w):
    in_h, in_w, _ = src.shape
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    np.clip(sy, 0.0, in_h - 1.0, out=sy)
    np.clip(sx, 0.0, in_w - 1.0, out=sx)
    y0 = np.minimum(sy.astype(np.int64), in_h - 2)
    x0 = np.minimum(sx.astype(np.int64), in_w - 2)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    p00 = src[y0[:, None], x0[None, :], :]
    p01 = src[y0[:, None], x0[None, :] + 1, :]
    p10 = src[y0[:, None] + 1, x0[None, :], :]
    p11 = src[y0[:, None] + 1, x0[None, :] + 1, :]
    top = p00 * (1.0 - fx) + p01 * fx
    bot = p10 * (1.0 - fx) + p11 * fx
    return top * (1.0 - fy) + bot * fy


def bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize HxWxC to out_h x out_w x C (float64, half-pixel centers)."""
    if src.ndim != 3:
        raise ValueError(f"resize expects HxWxC input, got shape {src.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("resize target must be at least 1x1")
    # 1-pixel rows/cols: replicate so the 2x2 gather stays in bounds; the
    # interpolation between identical neighbours reproduces the same values
    if src.shape[0] < 2:
        src = np.repeat(src, 2, axis=0)
    if src.shape[1] < 2:
        src = np.repeat(src, 2, axis=1)
    src = np.ascontiguousarray(src, dtype=np.float64)
    if USING_NUMBA:
        return resize_numba(src, out_h, out_w)
    return resize_numpy(src, out_h, out_w)


# ---------------------------------------------------------------------------
# Kernel matrices. kind: 0 = linear, 1 = RBF.
# ---------------------------------------------------------------------------


def _kmatrix_core(X, kind, gamma):
    n = X.shape[0]
    d = X.shape[1]
    K = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1):
            acc = 0.0
            if kind == 0:
                for t in range(d):
                    acc += X[i, t] * X[j, t]
            else:
                for t in range(d):
                    diff = X[i, t] - X[j, t]
                    acc += diff * diff
                acc = np.exp(-gamma * acc)
            K[i, j] = acc
            K[j, i] = acc
    return K


kmatrix_numba = njit(cache=True, nogil=True)(_kmatrix_core)


def kmatrix_numpy(X, kind, gamma):
    if kind == 0:
        return X @ X.T
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def _kcross_core(A, B, kind, gamma):
    m = A.shape[0]
    n = B.shape[0]
    d = A.shape[1]
    K = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            if kind == 0:
                for t in range(d):
                    acc += A[i, t] * B[j, t]
            else:
                for t in range(d):
                    diff = A[i, t] - B[j, t]
                    acc += diff * diff
                acc = np.exp(-gamma * acc)
            K[i, j] = acc
    return K


kcross_numba = njit(cache=True, nogil=True)(_kcross_core)


def kcross_numpy(A, B, kind, gamma):
    if kind == 0:
        return A @ B.T
    sa = np.einsum("ij,ij->i", A, A)
    sb = np.einsum("ij,ij->i", B, B)
    d2 = sa[:, None] + sb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


# Kernel matrices always take the numpy route: the GEMM decomposition beats
# the scalar loops by an order of magnitude at CNN feature widths (see
# benchmarks/bench_kernels.py), so there is nothing for numba to win here.
# The loop variants above stay importable for the benchmark comparison.


def kernel_matrix(X: np.ndarray, kind: int, gamma: float) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    return kmatrix_numpy(X, kind, gamma)


def kernel_cross(A: np.ndarray, B: np.ndarray, kind: int, gamma: float) -> np.ndarray:
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    return kcross_numpy(A, B, kind, gamma)


# ---------------------------------------------------------------------------
# SMO solver for the soft-margin dual:
#
#   max  sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij
#   s.t. 0 <= alpha_i <= C_i,  sum_i alpha_i y_i = 0
#
# Per-point KKT violations are measured against the instantaneous optimal
# threshold: with t_i = y_i - g_i, points requiring b >= t_i (alpha=0,y=+1;
# alpha=C,y=-1; free) bound b from below, mirrored points from above, and
# b_hat is the midpoint of the two extremes. Pair selection: first index =
# maximal violator; second = maximal |E_i - E_j| (= |t_i - t_j|) over the
# movable set on the opposite side of i's violation (same-side partners
# cannot reduce it), then that set in ascending index order; ties break to
# the lowest index. A violator with no productive partner is parked until
# the next successful step. One "pass" = one selection/update attempt.
# Returns (alpha, b_hat, iterations, converged).
# ---------------------------------------------------------------------------

_ALPHA_EPS = 1e-12


def _smo_core(K, y, C, tol, max_iter):
    n = K.shape[0]
    alpha = np.zeros(n, dtype=np.float64)
    g = np.zeros(n, dtype=np.float64)  # g_i = sum_j alpha_j y_j K_ij
    tvals = np.empty(n, dtype=np.float64)  # t_i = y_i - g_i
    viol = np.empty(n, dtype=np.float64)
    lo_side = np.empty(n, dtype=np.bool_)  # membership of I_up (b >= t_i side)
    hi_side = np.empty(n, dtype=np.bool_)
    parked = np.zeros(n, dtype=np.bool_)
    cand = np.empty(n, dtype=np.int64)
    b_hat = 0.0
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        b_lo = -np.inf  # b must be >= every lower requirement
        b_hi = np.inf
        for t in range(n):
            tv = y[t] - g[t]
            tvals[t] = tv
            if _ALPHA_EPS < alpha[t] < C[t] - _ALPHA_EPS:
                lo_side[t] = True
                hi_side[t] = True
            elif alpha[t] <= _ALPHA_EPS:
                lo_side[t] = y[t] > 0.0
                hi_side[t] = not lo_side[t]
            else:
                hi_side[t] = y[t] > 0.0
                lo_side[t] = not hi_side[t]
            if lo_side[t] and tv > b_lo:
                b_lo = tv
            if hi_side[t] and tv < b_hi:
                b_hi = tv
        b_hat = 0.5 * (b_lo + b_hi)
        # violation of each point against b_hat
        for t in range(n):
            tv = tvals[t]
            v = 0.0
            if lo_side[t] and tv - b_hat > v:
                v = tv - b_hat
            if hi_side[t] and b_hat - tv > v:
                v = b_hat - tv
            viol[t] = v
        best_i = -1
        best_v = tol
        for t in range(n):
            if not parked[t] and viol[t] > best_v:
                best_v = viol[t]
                best_i = t
        if best_i < 0:
            worst = 0.0
            for t in range(n):
                if viol[t] > worst:
                    worst = viol[t]
            converged = worst <= tol
            break
        i = best_i

        # productive partners live on the opposite side of i's violation AND
        # on the far side of t_i (positive signed gap; otherwise the step
        # clips to zero). Order: maximal |Ei - Ej| first, then ascending index.
        need_hi = lo_side[i] and tvals[i] > b_hat  # i needs b >= t_i, pull from I_low
        best_j = -1
        best_gap = 0.0
        for t in range(n):
            if t == i:
                continue
            ok = hi_side[t] if need_hi else lo_side[t]
            if not ok:
                continue
            gap = tvals[i] - tvals[t] if need_hi else tvals[t] - tvals[i]
            if gap > best_gap:
                best_gap = gap
                best_j = t
        ncand = 0
        if best_j >= 0:
            cand[ncand] = best_j
            ncand += 1
            for t in range(n):
                if t == i or t == best_j:
                    continue
                ok = hi_side[t] if need_hi else lo_side[t]
                if not ok:
                    continue
                gap = tvals[i] - tvals[t] if need_hi else tvals[t] - tvals[i]
                if gap > 0.0:
                    cand[ncand] = t
                    ncand += 1

        progressed = False
        for ci in range(ncand):
            j = cand[ci]
            dE = tvals[j] - tvals[i]  # == E_i - E_j, threshold-free
            s = y[i] * y[j]
            if s < 0.0:
                L = max(0.0, alpha[j] - alpha[i])
                H = min(C[j], C[i] + alpha[j] - alpha[i])
            else:
                L = max(0.0, alpha[i] + alpha[j] - C[i])
                H = min(C[j], alpha[i] + alpha[j])
            if H - L < _ALPHA_EPS:
                continue
            eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if eta > 0.0:
                aj_new = alpha[j] + y[j] * dE / eta
                if aj_new < L:
                    aj_new = L
                elif aj_new > H:
                    aj_new = H
            else:
                # flat direction (eta == 0 for PSD kernels): objective is
                # linear along the constraint line, move to the better end
                slope = y[j] * dE
                dL = L - alpha[j]
                dH = H - alpha[j]
                obj_L = slope * dL - 0.5 * eta * dL * dL
                obj_H = slope * dH - 0.5 * eta * dH * dH
                if obj_L > obj_H + 1e-12:
                    aj_new = L
                elif obj_H > obj_L + 1e-12:
                    aj_new = H
                else:
                    continue
            dj = aj_new - alpha[j]
            if abs(dj) < _ALPHA_EPS * (aj_new + alpha[j] + _ALPHA_EPS):
                continue
            ai_new = alpha[i] - s * dj
            # guard float drift only; L/H already bound ai_new
            if ai_new < 0.0:
                ai_new = 0.0
            elif ai_new > C[i]:
                ai_new = C[i]
            di = ai_new - alpha[i]
            # two-step accumulation matches the numpy twin's rounding exactly
            for t in range(n):
                g[t] = g[t] + y[i] * di * K[i, t]
            for t in range(n):
                g[t] = g[t] + y[j] * dj * K[j, t]
            alpha[i] = ai_new
            alpha[j] = aj_new
            progressed = True
            break
        if progressed:
            for t in range(n):
                parked[t] = False
        else:
            parked[i] = True
    return alpha, b_hat, it, converged


smo_numba = njit(cache=True, nogil=True)(_smo_core)


def smo_numpy(K, y, C, tol, max_iter):
    n = K.shape[0]
    alpha = np.zeros(n)
    g = np.zeros(n)
    parked = np.zeros(n, dtype=bool)
    b_hat = 0.0
    it = 0
    converged = False
    idx = np.arange(n)
    pos = y > 0.0

    while it < max_iter:
        it += 1
        tvals = y - g
        free = (alpha > _ALPHA_EPS) & (alpha < C - _ALPHA_EPS)
        at_lo = alpha <= _ALPHA_EPS
        lo_side = free | (at_lo & pos) | (~free & ~at_lo & ~pos)
        hi_side = free | (at_lo & ~pos) | (~free & ~at_lo & pos)
        b_lo = np.max(np.where(lo_side, tvals, -np.inf))
        b_hi = np.min(np.where(hi_side, tvals, np.inf))
        b_hat = 0.5 * (b_lo + b_hi)
        viol = np.zeros(n)
        viol = np.where(lo_side, np.maximum(tvals - b_hat, 0.0), viol)
        viol = np.maximum(viol, np.where(hi_side, np.maximum(b_hat - tvals, 0.0), 0.0))

        v_sel = np.where(parked, -np.inf, viol)
        best_i = int(np.argmax(v_sel))
        if v_sel[best_i] <= tol:
            converged = bool(np.max(viol) <= tol)
            break
        i = best_i

        need_hi = bool(lo_side[i]) and tvals[i] > b_hat
        partner_ok = hi_side if need_hi else lo_side
        signed_gap = tvals[i] - tvals if need_hi else tvals - tvals[i]
        gap = np.where(partner_ok, signed_gap, 0.0)
        gap[i] = 0.0
        best_j = int(np.argmax(gap))
        if gap[best_j] <= 0.0:
            parked[i] = True
            continue
        others = idx[(gap > 0.0) & (idx != best_j)]
        candidates = np.concatenate(([best_j], others))

        progressed = False
        for j in candidates:
            j = int(j)
            dE = tvals[j] - tvals[i]
            s = y[i] * y[j]
            if s < 0.0:
                L = max(0.0, alpha[j] - alpha[i])
                H = min(C[j], C[i] + alpha[j] - alpha[i])
            else:
                L = max(0.0, alpha[i] + alpha[j] - C[i])
                H = min(C[j], alpha[i] + alpha[j])
            if H - L < _ALPHA_EPS:
                continue
            eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if eta > 0.0:
                aj_new = min(max(alpha[j] + y[j] * dE / eta, L), H)
            else:
                slope = y[j] * dE
                dL = L - alpha[j]
                dH = H - alpha[j]
                obj_L = slope * dL - 0.5 * eta * dL * dL
                obj_H = slope * dH - 0.5 * eta * dH * dH
                if obj_L > obj_H + 1e-12:
                    aj_new = L
                elif obj_H > obj_L + 1e-12:
                    aj_new = H
                else:
                    continue
            dj = aj_new - alpha[j]
            if abs(dj) < _ALPHA_EPS * (aj_new + alpha[j] + _ALPHA_EPS):
                continue
            ai_new = min(max(alpha[i] - s * dj, 0.0), C[i])
            di = ai_new - alpha[i]
            g = g + y[i] * di * K[i] + y[j] * dj * K[j]
            alpha[i] = ai_new
            alpha[j] = aj_new
            progressed = True
            break
        if progressed:
            parked[:] = False
        else:
            parked[i] = True
    return alpha, b_hat, it, converged


def smo_solve(
    K: np.ndarray, y: np.ndarray, C: np.ndarray, tol: float, max_iter: int
) -> tuple[np.ndarray, float, int, bool]:
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if USING_NUMBA:
        alpha, b, it, conv = smo_numba(K, y, C, tol, max_iter)
    else:
        alpha, b, it, conv = smo_numpy(K, y, C, tol, max_iter)
    return alpha, float(b), int(it), bool(conv)
