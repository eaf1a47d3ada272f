"""Gradients of the entropic discounted fixed-point distance.

The fixed point satisfies ``M = delta C + (1-delta) Phi(M; kx, ky)``. With the
per-cell plans stacked into ``P`` (row = output cell ``(i, j)``, column =
input cell ``(k, l)``) the implicit function theorem gives

    (I - (1-delta) P) dM = delta dC + (1-delta) (F dkx + G dky),

where ``F`` and ``G`` hold the cell dual potentials placed on the kernel row
each cell reads. A pullback of an upstream ``U = dL/dM`` therefore needs one
transposed solve ``(I - (1-delta) P)^T x = U``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .chains import MarkovChain, validate_chain
from .errors import EpsilonZero, ExactPathUnsupported, InputError, InvariantViolation, NotConverged
from .ot import OtSolution
from .otm import INFINITE, DiscountParams, FixedPointResult, cost_norm, dwl_infinity

LU_MAX_CELLS = 4000
PLAN_ROW_TOL = 1e-7


@dataclass(frozen=True)
class BackwardCache:
    P: np.ndarray                 # (nm, nm)
    F: sp.csr_matrix              # (nm, n*n)
    G: sp.csr_matrix              # (nm, m*m)
    final_plan: np.ndarray
    final_f: np.ndarray
    final_g: np.ndarray
    delta: float


@dataclass
class GradientBundle:
    d_C: np.ndarray
    d_mX: np.ndarray
    d_mY: np.ndarray
    d_nuX: np.ndarray
    d_nuY: np.ndarray
    value: float = float("nan")

    def to_json(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


@dataclass
class SinkhornVjp:
    d_cost: np.ndarray
    d_alpha: np.ndarray
    d_beta: np.ndarray


def _require_entropic(result: FixedPointResult):
    if not result.converged:
        raise NotConverged("gradients need a converged fixed point", residual=result.residual)
    if not result.params.epsilon > 0:
        raise EpsilonZero("gradients are defined on the entropic path only (epsilon > 0)")
    if not result.params.delta > 0:
        raise InputError("gradients need delta > 0")
    if result.sweep is None or result.sweep.plans is None or result.sweep.f is None:
        raise InputError("result carries no stored cell plans and duals")


def _center(v: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean-zero over active entries (zero elsewhere): the tangent-space representative."""
    cnt = np.maximum(mask.sum(axis=-1, keepdims=True), 1)
    return np.where(mask, v - np.where(mask, v, 0.0).sum(axis=-1, keepdims=True) / cnt, 0.0)


def build_cache(result: FixedPointResult) -> BackwardCache:
    _require_entropic(result)
    sw = result.sweep
    n, m = sw.values.shape
    nm = n * m
    P = sw.plans.reshape(nm, nm)
    rows = P.sum(axis=1)
    if np.abs(rows - 1.0).max() > PLAN_ROW_TOL:
        raise InvariantViolation("stored cell plans are not probability matrices")
    cell = np.arange(nm)
    i_of = cell // m
    j_of = cell % m
    # F[(i,j), (i,k')] = f_ij[k'];  G[(i,j), (j,l')] = g_ij[l']
    f_cols = i_of[:, None] * n + np.arange(n)[None, :]
    g_cols = j_of[:, None] * m + np.arange(m)[None, :]
    # each potential is reported mean-zero over its active entries
    f = _center(sw.f.reshape(nm, n), sw.plans.sum(axis=3).reshape(nm, n) > 0)
    g = _center(sw.g.reshape(nm, m), sw.plans.sum(axis=2).reshape(nm, m) > 0)
    F = sp.csr_matrix((f.ravel(), (np.repeat(cell, n), f_cols.ravel())), shape=(nm, n * n))
    G = sp.csr_matrix((g.ravel(), (np.repeat(cell, m), g_cols.ravel())), shape=(nm, m * m))
    fin = result.final_ot
    return BackwardCache(P, F, G, fin.plan.mass, _center(fin.duals.f, fin.duals.f_mask),
                         _center(fin.duals.g, fin.duals.g_mask), result.params.delta)


def _adjoint_solve(P: np.ndarray, delta: float, U: np.ndarray, method: str = "auto") -> np.ndarray:
    """Solve ``(I - (1-delta) P)^T x = U``."""
    nm = P.shape[0]
    K = np.eye(nm) - (1.0 - delta) * P
    margin = np.abs(np.diag(K)) - (np.abs(K).sum(axis=1) - np.abs(np.diag(K)))
    if margin.min() <= 0.5 * delta:
        raise InvariantViolation(f"system not diagonally dominant (margin {margin.min():.3e})")
    if method == "auto":
        method = "lu" if nm <= LU_MAX_CELLS else "neumann"
    if method == "lu":
        return sla.lu_solve(sla.lu_factor(K), U, trans=1)
    if method == "neumann":
        # x = sum_t ((1-delta) P^T)^t U, truncated once the geometric tail is negligible
        x = U.copy()
        term = U.copy()
        scale = max(float(np.abs(U).max()), 1e-300)
        t = 0
        while float(np.abs(term).max()) > 1e-15 * scale / delta:
            term = (1.0 - delta) * (P.T @ term)
            x += term
            t += 1
        return x
    raise InputError(f"unknown solve method {method!r}")


def backward(result: FixedPointResult, upstream, method: str = "auto") -> dict:
    """Pull ``upstream = dL/dM`` (n x m) back to the label cost and both kernels."""
    cache = build_cache(result)
    n, m = result.cost_final.shape
    U = np.broadcast_to(np.asarray(upstream, dtype=float), (n, m)).ravel().copy()
    delta = cache.delta
    if not np.any(U):
        return {"d_C": np.zeros((n, m)), "d_mX": np.zeros((n, n)), "d_mY": np.zeros((m, m))}
    x = _adjoint_solve(cache.P, delta, U, method)
    return {
        "d_C": (delta * x).reshape(n, m),
        "d_mX": ((1.0 - delta) * (cache.F.T @ x)).reshape(n, n),
        "d_mY": ((1.0 - delta) * (cache.G.T @ x)).reshape(m, m),
    }


def sinkhorn_vjp(solution: OtSolution, upstream: float = 1.0) -> SinkhornVjp:
    """Value gradient of one entropic solve: plan for the cost, potentials for the marginals."""
    if solution.duals is None or not solution.epsilon > 0:
        raise ExactPathUnsupported("vjp needs an entropic solution with dual potentials")
    if not solution.converged:
        raise NotConverged("vjp needs a converged solve")
    u = float(upstream)
    d = solution.duals
    return SinkhornVjp(solution.plan.mass * u, _center(d.f, d.f_mask) * u, _center(d.g, d.g_mask) * u)


def full_gradient(X: MarkovChain, Y: MarkovChain, C, params: DiscountParams,
                  result: FixedPointResult | None = None, upstream: float = 1.0,
                  method: str = "auto") -> GradientBundle:
    """Gradient of the distance with respect to the cost, both kernels and both initials."""
    if params.depth != INFINITE:
        raise InputError("full_gradient is defined for the infinite-depth distance")
    if not params.epsilon > 0:
        raise EpsilonZero("gradients are defined on the entropic path only (epsilon > 0)")
    if not params.delta > 0:
        raise InputError("gradients need delta > 0")
    if result is None:
        result = dwl_infinity(X, Y, C, params)
    vjp = sinkhorn_vjp(result.final_ot, upstream)
    parts = backward(result, vjp.d_cost, method)
    return GradientBundle(
        d_C=parts["d_C"],
        d_mX=parts["d_mX"],
        d_mY=parts["d_mY"],
        d_nuX=vjp.d_alpha,
        d_nuY=vjp.d_beta,
        value=result.value,
    )


# -- finite differences ----------------------------------------------------------

TARGETS = ("C", "mX", "mY", "nuX", "nuY")


@dataclass
class FdReport:
    max_rel_error: dict
    details: list = field(default_factory=list)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values()) if self.max_rel_error else 0.0

    def to_json(self) -> dict:
        return {"max_rel_error": self.max_rel_error, "worst": self.worst}


def _tangent(rng, support: np.ndarray) -> np.ndarray:
    """Random direction supported on ``support`` with zero sum along the last axis."""
    D = rng.standard_normal(support.shape) * support
    cnt = np.maximum(support.sum(axis=-1, keepdims=True), 1)
    D = (D - D.sum(axis=-1, keepdims=True) / cnt) * support
    return D


def fd_params(params: DiscountParams, C) -> DiscountParams:
    """Tight tolerances used for finite-difference evaluations."""
    scale = max(cost_norm(np.asarray(C, dtype=float)), 1.0)
    return replace(params, tol=1e-12 * scale, sinkhorn_tol=1e-13, accelerate="newton",
                   max_iter=max(params.max_iter, 10_000))


def finite_difference_check(X: MarkovChain, Y: MarkovChain, C, params: DiscountParams,
                            n_directions: int = 8, h_list=(1e-4, 1e-5, 1e-6), seed: int = 0,
                            targets=TARGETS, rel_floor: float = 1e-8,
                            good_enough: float = 1e-6) -> FdReport:
    """Compare directional derivatives of the gradient against central differences.

    Kernel and initial directions are tangent to the simplex (zero row sums)
    and supported where the base distribution is positive. For each direction
    the step from ``h_list`` with the smallest discrepancy is reported; steps
    are tried in order and the sweep stops early once one agrees to
    ``good_enough``.
    """
    C = np.asarray(C, dtype=float)
    tight = fd_params(params, C)
    base = dwl_infinity(X, Y, C, tight)
    bundle = full_gradient(X, Y, C, tight, result=base)
    rng = np.random.Generator(np.random.Philox(seed))

    def value(C_, X_, Y_):
        return dwl_infinity(X_, Y_, C_, tight, start=base).value

    def perturbed(target, D, h):
        if target == "C":
            return C + h * D, X, Y
        if target == "mX":
            return C, validate_chain(X.kernel + h * D, X.initial), Y
        if target == "mY":
            return C, X, validate_chain(Y.kernel + h * D, Y.initial)
        if target == "nuX":
            return C, validate_chain(X.kernel, X.initial + h * D), Y
        return C, X, validate_chain(Y.kernel, Y.initial + h * D)

    grads = {"C": bundle.d_C, "mX": bundle.d_mX, "mY": bundle.d_mY, "nuX": bundle.d_nuX, "nuY": bundle.d_nuY}
    supports = {
        "C": np.ones_like(C),
        "mX": (X.kernel > 0).astype(float),
        "mY": (Y.kernel > 0).astype(float),
        "nuX": (X.initial > 0).astype(float),
        "nuY": (Y.initial > 0).astype(float),
    }
    report = FdReport({})
    for target in targets:
        worst = 0.0
        for _ in range(n_directions):
            if target == "C":
                D = rng.standard_normal(C.shape)
            else:
                D = _tangent(rng, supports[target])
            analytic = float(np.sum(grads[target] * D))
            best = np.inf
            best_fd = np.nan
            for h in h_list:
                if target in ("mX", "mY", "nuX", "nuY"):
                    base_arr = {"mX": X.kernel, "mY": Y.kernel, "nuX": X.initial, "nuY": Y.initial}[target]
                    neg = D < 0
                    if np.any(base_arr[neg] + h * D[neg] < 0) or np.any(base_arr[~neg] - h * D[~neg] < 0):
                        continue
                fd = (value(*perturbed(target, D, h)) - value(*perturbed(target, D, -h))) / (2 * h)
                denom = max(abs(analytic), abs(fd), rel_floor)
                err = abs(analytic - fd) / denom
                if err < best:
                    best, best_fd = err, fd
                if best <= good_enough:
                    break
            report.details.append({"target": target, "analytic": analytic, "fd": best_fd, "rel_error": best})
            worst = max(worst, best)
        report.max_rel_error[target] = worst
    return report
