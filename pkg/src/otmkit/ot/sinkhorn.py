"""Entropic optimal transport.

Objective: ``<P, C> - eps * H(P)`` with ``H(P) = -sum P log P``. Potentials
parametrize the plan as ``P = exp((f_i + g_j - C_ij) / eps)``, so at an exact
fixed point the value is ``<f, alpha> + <g, beta>`` and ``f`` is a gradient of
the value with respect to ``alpha`` (up to the additive gauge).

Two implementations live here. :func:`sinkhorn` is a plain log-domain solver
for one problem. :func:`sinkhorn_batch` runs many problems at once, which is
what the fixed-point sweeps need; when the cost range over ``eps`` is modest it
works with a shifted Gibbs kernel and matrix products, otherwise it falls back
to batched log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import InputError
from .types import DualPair, OtSolution, TransportPlan, check_problem, entropic_objective

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10000
# largest (max C - min C) / eps for which the shifted-kernel path is used
KERNEL_RANGE_LIMIT = 150.0


def center_duals(f, g, f_mask, g_mask):
    """Shift to ``mean(f) = 0`` over active rows; inactive entries become 0."""
    f = np.where(f_mask, f, 0.0)
    g = np.where(g_mask, g, 0.0)
    c = f.sum(axis=-1, keepdims=True) / np.maximum(f_mask.sum(axis=-1, keepdims=True), 1)
    return np.where(f_mask, f - c, 0.0), np.where(g_mask, g + c, 0.0)


def sinkhorn(alpha, beta, C, epsilon: float, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER, init=None, polish_after: int = 300) -> OtSolution:
    """Log-domain Sinkhorn on the active (positive-mass) indices.

    Stops when the L1 marginal violation of the current plan is at most ``tol``.
    ``init`` is an optional ``(f, g)`` warm start in full coordinates. After
    ``polish_after`` iterations (0 disables) :func:`newton_polish` is tried once.
    """
    if not epsilon > 0:
        raise InputError("sinkhorn needs epsilon > 0")
    a_full, b_full, C = check_problem(alpha, beta, C)
    ia = a_full > 0
    jb = b_full > 0
    a, b = a_full[ia], b_full[jb]
    M = C[np.ix_(ia, jb)]
    la, lb = np.log(a), np.log(b)
    eps = float(epsilon)
    if init is None:
        g = np.zeros(b.size)
    else:
        g = np.asarray(init[1], dtype=float)[jb]
    it = 0
    err = np.inf
    while True:
        f = eps * (la - logsumexp((g[None, :] - M) / eps, axis=1))
        g = eps * (lb - logsumexp((f[:, None] - M) / eps, axis=0))
        it += 1
        # columns are exact after the g step; rows carry the whole violation
        row = np.exp(logsumexp((f[:, None] + g[None, :] - M) / eps, axis=1))
        err = float(np.abs(row - a).sum())
        if err <= tol or it >= max_iter:
            break
        if polish_after and it == polish_after:
            out = newton_polish(a, b, M, eps, g, tol, max_steps=50)
            if out is not None:
                f, g, _, err = out
                break
    P = np.exp((f[:, None] + g[None, :] - M) / eps)
    plan = np.zeros_like(C)
    plan[np.ix_(ia, jb)] = P
    f_full = np.zeros(a_full.size)
    g_full = np.zeros(b_full.size)
    f_full[ia] = f
    g_full[jb] = g
    fc, gc = center_duals(f_full, g_full, ia, jb)
    return OtSolution(
        value=entropic_objective(plan, C, eps),
        plan=TransportPlan(plan),
        duals=DualPair(fc, gc, f_mask=ia, g_mask=jb),
        iterations=it,
        converged=err <= tol,
        epsilon=eps,
    )


@dataclass
class BatchResult:
    """Raw (uncentered) potentials of a batch of entropic problems."""

    f: np.ndarray
    g: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def _lse_update(other, act_other, log_marg, act_self, M, eps, rows: bool):
    # rows=True: new f from g; M has shape (L or 1, n, m)
    masked = np.where(act_other, other, -np.inf)
    with np.errstate(invalid="ignore"):
        if rows:
            T = (masked[:, None, :] - M) / eps
            ax = 2
        else:
            T = (masked[:, :, None] - M) / eps
            ax = 1
        mx = T.max(axis=ax)
        lse = mx + np.log(np.exp(T - np.expand_dims(mx, ax)).sum(axis=ax))
        new = eps * (log_marg - lse)
    return np.where(act_self, new, 0.0)


def _kernel_update(other, act_other, log_marg, act_self, K, shift, eps):
    # K oriented so that the reduction is ``W @ K`` with W over the other side
    s = np.where(act_other, other, -np.inf).max(axis=1)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        W = np.where(act_other, np.exp((other - s[:, None]) / eps), 0.0)
        S = W @ K
        new = eps * (log_marg - np.log(S)) - s[:, None] + shift
    return np.where(act_self, new, 0.0)


def newton_polish(a, b, M, eps: float, g, tol: float, max_steps: int = 200):
    """Damped Newton ascent on the semi-dual ``g -> <f(g), a> + <g, b>``.

    ``a``, ``b`` are the active (positive) marginals. Rows of the returned
    plan are exact; returns ``(f, g, value, err)`` with ``err`` the L1 column
    violation, or ``None`` if the iteration breaks down.
    """
    la = np.log(a)
    m = b.size

    def state(gv):
        with np.errstate(over="ignore"):
            return _state(gv)

    def _state(gv):
        T = (gv[None, :] - M) / eps
        mx = T.max(axis=1)
        f = eps * (la - mx - np.log(np.exp(T - mx[:, None]).sum(axis=1)))
        P = np.exp((f[:, None] + gv[None, :] - M) / eps)
        return f, P, float(f @ a + gv @ b)

    g = np.array(g, dtype=float)
    f, P, D = state(g)
    for _ in range(max_steps):
        col = P.sum(axis=0)
        grad = b - col
        err = float(np.abs(grad).sum())
        if err <= tol:
            return f, g, float(f @ a + g @ col), err
        if m == 1:
            break
        # negative Hessian, gauge pinned by fixing the last coordinate; near
        # block-diagonal plans make it badly conditioned, so small eigenvalues
        # are floored and the step is capped (a crude trust region)
        H = (np.diag(col) - P.T @ (P / a[:, None]))[:-1, :-1] / eps
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        if not np.all(np.isfinite(w)) or w[-1] <= 0:
            return None
        w = np.maximum(w, 1e-12 * w[-1])
        step = np.append(V @ ((V.T @ grad[:-1]) / w), 0.0)
        big = float(np.abs(step).max())
        if big > 10.0 * eps:
            step *= 10.0 * eps / big
        slope = float(grad @ step)
        if slope < 0:
            return None
        t = 1.0
        f_t, P_t, D_t = state(g + step)
        # Armijo backtracking, skipped once the predicted gain is below roundoff of D
        if slope > 1e-15 * (abs(D) + 1.0):
            while not (np.isfinite(D_t) and D_t >= D + 1e-4 * t * slope):
                t *= 0.5
                if t < 1e-10:
                    return None
                f_t, P_t, D_t = state(g + t * step)
        elif not np.isfinite(D_t):
            return None
        g = g + t * step
        f, P, D = f_t, P_t, D_t
    col = P.sum(axis=0)
    err = float(np.abs(b - col).sum())
    if err <= tol:
        return f, g, float(f @ a + g @ col), err
    return None


def sinkhorn_batch(A, B, M, epsilon: float, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER, f0=None, g0=None,
                   method: str = "auto", polish_after: int = 300,
                   polish_cells: int = 32) -> BatchResult:
    """Solve ``L`` problems ``(A[c], B[c], M or M[c])`` simultaneously.

    Each problem stops on its own once the L1 marginal violation of its plan
    is at most ``tol``; the returned potentials are those of that certified
    plan. Once at most ``polish_cells`` problems remain after
    ``polish_after`` iterations, the stragglers are finished by
    :func:`newton_polish` (slow Sinkhorn convergence is typical for small
    ``eps`` and near-degenerate costs).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    M = np.asarray(M, dtype=float)
    eps = float(epsilon)
    L, n = A.shape
    m = B.shape[1]
    shared = M.ndim == 2
    if method == "auto":
        rng = float(M.max() - M.min()) if M.size else 0.0
        method = "kernel" if shared and rng / eps <= KERNEL_RANGE_LIMIT else "log"
    if method == "kernel" and not shared:
        raise InputError("kernel method needs a shared cost matrix")

    act_a = A > 0
    act_b = B > 0
    with np.errstate(divide="ignore"):
        la = np.where(act_a, np.log(np.where(act_a, A, 1.0)), 0.0)
        lb = np.where(act_b, np.log(np.where(act_b, B, 1.0)), 0.0)

    if method == "kernel":
        shift = float(M.min())
        Kf = np.exp(-(M - shift) / eps).T.copy()  # (m, n): g-side to f-side
        Kg = Kf.T.copy()                           # (n, m): f-side to g-side

        def upd_f(g, ia, ja, la_, Mw):
            return _kernel_update(g, ja, la_, ia, Kf, shift, eps)

        def upd_g(f, ia, ja, lb_, Mw):
            return _kernel_update(f, ia, lb_, ja, Kg, shift, eps)
    else:
        M3 = M[None] if shared else M

        def upd_f(g, ia, ja, la_, Mw):
            return _lse_update(g, ja, la_, ia, Mw, eps, rows=True)

        def upd_g(f, ia, ja, lb_, Mw):
            return _lse_update(f, ia, lb_, ja, Mw, eps, rows=False)

    out_f = np.zeros((L, n))
    out_g = np.zeros((L, m))
    values = np.zeros(L)
    errors = np.full(L, np.inf)
    iters = np.zeros(L, dtype=np.int64)
    conv = np.zeros(L, dtype=bool)

    live = np.arange(L)
    ia, ja, la_w, lb_w = act_a, act_b, la, lb
    Aw, Bw = A, B
    Mw = None if method == "kernel" else M3
    g = np.zeros((L, m)) if g0 is None else np.where(act_b, np.asarray(g0, dtype=float), 0.0)
    if f0 is None:
        f = upd_f(g, ia, ja, la_w, Mw)
        g = upd_g(f, ia, ja, lb_w, Mw)
        done_iters = 1
    else:
        f = np.where(act_a, np.asarray(f0, dtype=float), 0.0)
        done_iters = 0
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        if method == "kernel":
            return sinkhorn_batch(A, B, M, eps, tol, max_iter, f0, g0, method="log")
        raise FloatingPointError("non-finite Sinkhorn potentials")

    while live.size:
        f_new = upd_f(g, ia, ja, la_w, Mw)
        if not np.all(np.isfinite(f_new)):
            if method == "kernel":
                return sinkhorn_batch(A, B, M, eps, tol, max_iter, f0, g0, method="log")
            raise FloatingPointError("non-finite Sinkhorn potentials")
        with np.errstate(over="ignore"):
            ratio = np.where(ia, np.exp((f - f_new) / eps), 0.0)
        row = Aw * ratio
        err = np.abs(row - Aw).sum(axis=1)
        last = done_iters >= max_iter
        fin = (err <= tol) | last
        if fin.any():
            idx = live[fin]
            out_f[idx] = f[fin]
            out_g[idx] = g[fin]
            # primal objective of the certified plan: sum_i r_i f_i + sum_j b_j g_j
            values[idx] = (row[fin] * f[fin]).sum(axis=1) + (Bw[fin] * g[fin]).sum(axis=1)
            errors[idx] = err[fin]
            iters[idx] = done_iters
            conv[idx] = err[fin] <= tol
            keep = ~fin
            live = live[keep]
            if not live.size:
                break
            f_new, g = f_new[keep], g[keep]
            ia, ja, la_w, lb_w, Aw, Bw = ia[keep], ja[keep], la_w[keep], lb_w[keep], Aw[keep], Bw[keep]
            if Mw is not None and Mw.shape[0] > 1:
                Mw = Mw[keep]
        f = f_new
        g = upd_g(f, ia, ja, lb_w, Mw)
        done_iters += 1
        if polish_after and done_iters >= polish_after and live.size <= polish_cells and done_iters < max_iter:
            keep = np.ones(live.size, dtype=bool)
            for c in range(live.size):
                rows, cols = ia[c], ja[c]
                Mc = (Mw[0] if Mw is not None and Mw.shape[0] == 1 else
                      (M if Mw is None else Mw[c]))[np.ix_(rows, cols)]
                out = newton_polish(Aw[c][rows], Bw[c][cols], Mc, eps, g[c][cols], tol, max_steps=50)
                if out is None:
                    continue
                pf, pg, val, perr = out
                idx = live[c]
                out_f[idx] = 0.0
                out_g[idx] = 0.0
                out_f[idx, rows] = pf
                out_g[idx, cols] = pg
                values[idx] = val
                errors[idx] = perr
                iters[idx] = done_iters
                conv[idx] = True
                keep[c] = False
            polish_after = 0
            if not keep.all():
                live = live[keep]
                f, g = f[keep], g[keep]
                ia, ja, la_w, lb_w, Aw, Bw = ia[keep], ja[keep], la_w[keep], lb_w[keep], Aw[keep], Bw[keep]
                if Mw is not None and Mw.shape[0] > 1:
                    Mw = Mw[keep]
    return BatchResult(out_f, out_g, values, errors, iters, conv)


def batch_plans(f, g, M, A, B, epsilon: float) -> np.ndarray:
    """Plans ``exp((f_i + g_j - M_ij)/eps)`` of a batch, zero off the active set."""
    M3 = M[None] if M.ndim == 2 else M
    act = (A > 0)[:, :, None] & (B > 0)[:, None, :]
    with np.errstate(over="ignore"):
        P = np.exp((f[:, :, None] + g[:, None, :] - M3) / epsilon)
    return np.where(act, P, 0.0)
