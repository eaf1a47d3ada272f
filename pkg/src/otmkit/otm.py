"""Discounted and undiscounted WL-type distances between Markov chains.

Every distance here is built from one primitive, the cellwise sweep

    Phi(M)[i, j] = OT(kernel_x[i], kernel_y[j]; M),

which is 1-Lipschitz in ``M`` for the sup norm. Depth-k WL applies it k times
to the label cost; the discounted variant mixes the label cost back in,
``M <- delta * C + (1 - delta) * Phi(M)``, which is a ``(1 - delta)``-contraction
with a unique fixed point. The distance is the OT of the two initial
distributions under the final matrix.

Cells are solved exactly (transportation simplex) when ``epsilon == 0`` and by
batched Sinkhorn otherwise. The sparse path restricts every cell to the
supports of its two kernel rows.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .chains import MarkovChain, stationarity_residual, structure_check
from .errors import (
    DimensionMismatch,
    InputError,
    InvariantViolation,
    NegativeEntry,
    NonFiniteCost,
    NotConverged,
    NotConvergedWarning,
    NotStationary,
    PreconditionViolated,
)
from .ot import DualPair, OtSolution, TransportPlan, exact_ot, sinkhorn
from .ot.exact import exact_sweep_rows, pivot_tolerance
from .ot.sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, batch_plans, center_duals, sinkhorn_batch
from .ot.types import entropic_objective

INFINITE = math.inf
INITS = ("delta_C", "C", "zero")
STATIONARY_TOL = 1e-8
MIN_OTC_DELTA = 1e-4


@dataclass(frozen=True)
class DiscountParams:
    delta: float = 0.5
    epsilon: float = 0.0
    depth: float = INFINITE
    tol: float | None = None          # None: 1e-8 * max|C|
    max_iter: int = 100_000
    schedule: int = 0                 # 0 = off, else Sinkhorn cap growth per sweep
    init: str = "delta_C"
    sinkhorn_tol: float = DEFAULT_TOL
    sinkhorn_max_iter: int = DEFAULT_MAX_ITER
    accelerate: str = "none"          # "newton": policy-evaluation steps
    threads: int = 1
    record_iterates: bool = False

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise InputError(f"delta must lie in [0, 1], got {self.delta}")
        if not self.epsilon >= 0.0:
            raise InputError("epsilon must be >= 0")
        if self.tol is not None and not self.tol > 0:
            raise InputError("tol must be > 0")
        if self.depth != INFINITE and (self.depth < 0 or int(self.depth) != self.depth):
            raise InputError("depth must be a nonnegative integer or INFINITE")
        if self.init not in INITS:
            raise InputError(f"init must be one of {INITS}")
        if self.accelerate not in ("none", "newton"):
            raise InputError("accelerate must be 'none' or 'newton'")
        if self.schedule < 0 or self.max_iter < 1 or self.threads < 1:
            raise InputError("schedule >= 0, max_iter >= 1 and threads >= 1 required")

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["depth"] = "inf" if self.depth == INFINITE else int(self.depth)
        return out


@dataclass(frozen=True)
class HorizonDistribution:
    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise InputError("horizon distribution needs at least one entry")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InputError("horizon probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise InputError(f"horizon probabilities sum to {p.sum()!r}")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @property
    def horizon(self) -> int:
        return len(self.probs) - 1


def truncated_geometric(delta: float, k: int) -> HorizonDistribution:
    """Mass ``delta (1-delta)^t`` for ``t < k`` and the tail ``(1-delta)^k`` at ``k``."""
    if not 0.0 <= delta <= 1.0 or k < 0:
        raise InputError("need 0 <= delta <= 1 and k >= 0")
    probs = [delta * (1.0 - delta) ** t for t in range(k)] + [(1.0 - delta) ** k]
    return HorizonDistribution(tuple(probs))


# -- sweep engine -------------------------------------------------------------


@dataclass
class SweepOutput:
    values: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    plans: np.ndarray | None = None   # (n, m, n, m)
    f: np.ndarray | None = None       # (n, m, n), centered
    g: np.ndarray | None = None       # (n, m, m)
    work: int = 0


def _support_table(kernel: np.ndarray, sparse: bool):
    n = kernel.shape[0]
    if not sparse:
        return np.tile(np.arange(n), (n, 1)), np.full(n, n, dtype=np.int64)
    counts = (kernel > 0).sum(axis=1).astype(np.int64)
    table = np.zeros((n, int(counts.max())), dtype=np.int64)
    for i in range(n):
        idx = np.flatnonzero(kernel[i] > 0)
        table[i, : idx.size] = idx
    return table, counts


class CellSweeper:
    """Applies ``Phi`` to cost matrices for a fixed pair of chains.

    Keeps the Sinkhorn potentials of the previous sweep as a warm start and
    counts cell-block work (``sum |supp_i| * |supp_j|`` per sweep).
    """

    def __init__(self, X: MarkovChain, Y: MarkovChain, epsilon: float = 0.0, sparse: bool = False,
                 sinkhorn_tol: float = DEFAULT_TOL, sinkhorn_max_iter: int = DEFAULT_MAX_ITER,
                 threads: int = 1):
        self.KX = np.ascontiguousarray(X.kernel)
        self.KY = np.ascontiguousarray(Y.kernel)
        self.n, self.m = self.KX.shape[0], self.KY.shape[0]
        self.epsilon = float(epsilon)
        self.sparse = sparse
        self.sinkhorn_tol = sinkhorn_tol
        self.sinkhorn_max_iter = sinkhorn_max_iter
        self.threads = threads
        self.sx, self.cx = _support_table(self.KX, sparse)
        self.sy, self.cy = _support_table(self.KY, sparse)
        self.block_work = int(self.cx.sum() * self.cy.sum())
        self.work = 0
        self.sweeps = 0
        self._warm_f = None
        if self.epsilon > 0:
            n, m = self.n, self.m
            ii = np.repeat(np.arange(n), m)
            jj = np.tile(np.arange(m), n)
            if sparse:
                self.A = np.take_along_axis(self.KX, self.sx, 1)[ii]
                self.B = np.take_along_axis(self.KY, self.sy, 1)[jj]
                self.A[np.arange(self.sx.shape[1])[None, :] >= self.cx[ii, None]] = 0.0
                self.B[np.arange(self.sy.shape[1])[None, :] >= self.cy[jj, None]] = 0.0
                self._rows = self.sx[ii]
                self._cols = self.sy[jj]
            else:
                self.A = self.KX[ii]
                self.B = self.KY[jj]

    def reset_warm_start(self):
        self._warm_f = None

    def warm_start(self, f_cells: np.ndarray):
        """Seed the next entropic sweep with per-cell row potentials, shape (n, m, n)."""
        if f_cells.shape == (self.n, self.m, self.n) and not self.sparse:
            self._warm_f = f_cells.reshape(self.n * self.m, self.n).copy()

    def __call__(self, M: np.ndarray, store: bool = False, cap: int | None = None) -> SweepOutput:
        M = np.ascontiguousarray(M, dtype=float)
        self.sweeps += 1
        self.work += self.block_work
        if self.epsilon == 0.0:
            out = self._exact(M, store)
        else:
            out = self._entropic(M, store, cap)
        out.work = self.block_work
        return out

    def _exact(self, M, store):
        n, m = self.n, self.m
        values = np.zeros((n, m))
        plans = np.zeros((n, m, n, m)) if store else np.zeros((1, 1, 1, 1))
        status = np.zeros(1, dtype=np.int64)
        tol = pivot_tolerance(M)
        args = (M, self.KX, self.KY, self.sx, self.cx, self.sy, self.cy, tol)
        if self.threads > 1 and n > 1:
            bounds = np.linspace(0, n, min(self.threads, n) + 1).astype(int)
            with ThreadPoolExecutor(self.threads) as pool:
                jobs = [pool.submit(exact_sweep_rows, *args, lo, hi, values, plans, store, status)
                        for lo, hi in zip(bounds[:-1], bounds[1:])]
                for job in jobs:
                    job.result()
        else:
            exact_sweep_rows(*args, 0, n, values, plans, store, status)
        ok = status[0] == 0
        return SweepOutput(
            values=values,
            converged=np.full((n, m), ok),
            iterations=np.zeros((n, m), dtype=np.int64),
            plans=plans if store else None,
        )

    def _entropic(self, M, store, cap):
        n, m, eps = self.n, self.m, self.epsilon
        max_iter = self.sinkhorn_max_iter if cap is None else min(cap, self.sinkhorn_max_iter)
        if self.sparse:
            Mc = M[self._rows[:, :, None], self._cols[:, None, :]]
        else:
            Mc = M
        res = sinkhorn_batch(self.A, self.B, Mc, eps, tol=self.sinkhorn_tol, max_iter=max_iter,
                             f0=self._warm_f)
        self._warm_f = res.f
        out = SweepOutput(
            values=res.values.reshape(n, m),
            converged=res.converged.reshape(n, m),
            iterations=res.iterations.reshape(n, m),
        )
        if store:
            if self.sparse:
                raise InputError("the sparse path is forward-only and does not store plans")
            P = batch_plans(res.f, res.g, M, self.A, self.B, eps)
            fc, gc = center_duals(res.f, res.g, self.A > 0, self.B > 0)
            out.plans = P.reshape(n, m, n, m)
            out.f = fc.reshape(n, m, n)
            out.g = gc.reshape(n, m, m)
        return out


# -- results --------------------------------------------------------------------


@dataclass(eq=False)
class FixedPointResult:
    cost_final: np.ndarray
    value: float
    iterations: int
    residual: float
    final_ot: OtSolution
    converged: bool
    params: DiscountParams
    cost: np.ndarray
    residuals: list = field(default_factory=list)
    iterates: list | None = None
    work: int = 0
    sweep: SweepOutput | None = None
    sweep_cost: np.ndarray | None = None  # the matrix the stored plans were solved on

    @cached_property
    def cell_solutions(self):
        """n x m grid of per-cell OtSolutions from the stored sweep (None if not kept)."""
        sw = self.sweep
        if sw is None or sw.plans is None:
            return None
        n, m = sw.values.shape
        eps = self.params.epsilon
        grid = []
        for i in range(n):
            row = []
            for j in range(m):
                P = sw.plans[i, j]
                duals = None
                if sw.f is not None:
                    duals = DualPair(sw.f[i, j], sw.g[i, j], f_mask=P.sum(1) > 0, g_mask=P.sum(0) > 0)
                row.append(OtSolution(
                    value=entropic_objective(P, self.sweep_cost, eps),
                    plan=TransportPlan(P),
                    duals=duals,
                    iterations=int(sw.iterations[i, j]),
                    converged=bool(sw.converged[i, j]),
                    epsilon=eps,
                ))
            grid.append(row)
        return grid

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "cost_final": self.cost_final.tolist(),
            "work": self.work,
            "params": self.params.to_json(),
        }


@dataclass(frozen=True)
class CouplingPolicy:
    joint_kernel: np.ndarray
    joint_initial: np.ndarray
    shape: tuple[int, int]


@dataclass
class WlInfinityResult:
    value: float
    gap: float
    iterations: int
    converged: bool
    ot_value: float
    mins: list
    maxs: list

    def to_json(self) -> dict:
        return {"value": self.value, "gap": self.gap, "iterations": self.iterations,
                "converged": self.converged, "ot_value": self.ot_value}


@dataclass
class OtcEstimate:
    deltas: list
    values: list
    converged: list
    estimate: float
    nondecreasing: bool

    def to_json(self) -> dict:
        return {"deltas": self.deltas, "values": self.values, "converged": self.converged,
                "estimate": self.estimate, "nondecreasing_trend": self.nondecreasing}


# -- helpers ----------------------------------------------------------------------


def _check_cost(X: MarkovChain, Y: MarkovChain, C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.shape != (X.n, Y.n):
        raise DimensionMismatch(f"cost shape {C.shape} does not match chains ({X.n}, {Y.n})")
    if not np.all(np.isfinite(C)):
        raise NonFiniteCost("cost matrix has non-finite entries")
    if np.any(C < 0):
        raise NegativeEntry("cost matrix has negative entries")
    return C


def _final_ot(X, Y, M, params: DiscountParams, warm: OtSolution | None = None) -> OtSolution:
    if params.epsilon > 0:
        init = None
        if warm is not None and warm.duals is not None and warm.duals.f.shape == (X.n,):
            init = (warm.duals.f, warm.duals.g)
        return sinkhorn(X.initial, Y.initial, M, params.epsilon, tol=params.sinkhorn_tol,
                        max_iter=params.sinkhorn_max_iter, init=init)
    return exact_ot(X.initial, Y.initial, M)


def cost_norm(C: np.ndarray) -> float:
    return float(np.abs(C).max()) if C.size else 0.0


def rate_bound_cap(delta: float, tol: float, scale: float) -> int:
    """Smallest k with ``2 (1-delta)^k / delta * scale <= tol``."""
    if delta >= 1.0 or scale <= 0:
        return 1
    k = math.log(tol * delta / (2.0 * scale)) / math.log(1.0 - delta)
    return max(1, math.ceil(k))


def _newton_step(C, M, sw: SweepOutput, delta: float) -> np.ndarray:
    # evaluate the current cell plans exactly: (I - (1-delta) P) x = delta C - (1-delta) eps H
    n, m = C.shape
    P = sw.plans.reshape(n * m, n * m)
    ent = P @ M.ravel() - sw.values.ravel()   # eps * H of each cell plan
    K = np.eye(n * m) - (1.0 - delta) * P
    rhs = delta * C.ravel() - (1.0 - delta) * ent
    return np.linalg.solve(K, rhs).reshape(n, m)


def _initial_matrix(C, params: DiscountParams, start):
    if start is not None:
        M = start.cost_final if isinstance(start, FixedPointResult) else np.asarray(start, dtype=float)
        if M.shape != C.shape:
            raise DimensionMismatch("warm-start matrix has the wrong shape")
        return np.array(M, dtype=float)
    if params.init == "delta_C":
        return params.delta * C
    if params.init == "C":
        return C.copy()
    return np.zeros_like(C)


# -- distances --------------------------------------------------------------------


def _depth_k(X, Y, C, params: DiscountParams, sparse: bool) -> FixedPointResult:
    C = _check_cost(X, Y, C)
    k = int(params.depth)
    delta = params.delta
    sweeper = CellSweeper(X, Y, params.epsilon, sparse, params.sinkhorn_tol,
                          params.sinkhorn_max_iter, params.threads)
    M = C.copy()
    residuals = []
    iterates = [M.copy()] if params.record_iterates else None
    last = None
    prev = M
    all_conv = True
    for level in range(k):
        store = level == k - 1 and not sparse
        sw = sweeper(M, store=store)
        all_conv &= bool(sw.converged.all())
        prev = M
        M = delta * C + (1.0 - delta) * sw.values
        residuals.append(float(np.abs(M - prev).max()))
        if iterates is not None:
            iterates.append(M.copy())
        if store:
            last = sw
    final = _final_ot(X, Y, M, params)
    return FixedPointResult(
        cost_final=M,
        value=final.value,
        iterations=k,
        residual=residuals[-1] if residuals else 0.0,
        final_ot=final,
        converged=all_conv and final.converged,
        params=params,
        cost=C,
        residuals=residuals,
        iterates=iterates,
        work=sweeper.work,
        sweep=last,
        sweep_cost=prev if last is not None else None,
    )


def wl_depth_k(X: MarkovChain, Y: MarkovChain, C, k: int, epsilon: float = 0.0, **kw) -> FixedPointResult:
    """Depth-k WL distance: ``k`` plain sweeps, then OT of the initial distributions."""
    return _depth_k(X, Y, C, DiscountParams(delta=0.0, epsilon=epsilon, depth=k, **kw), sparse=False)


def dwl_depth_k(X: MarkovChain, Y: MarkovChain, C, params: DiscountParams) -> FixedPointResult:
    if params.depth == INFINITE:
        raise InputError("dwl_depth_k needs a finite depth")
    return _depth_k(X, Y, C, params, sparse=False)


def dwl_depth_k_sparse(X: MarkovChain, Y: MarkovChain, C, params: DiscountParams) -> FixedPointResult:
    """Same as :func:`dwl_depth_k` with every cell restricted to its kernel supports."""
    if params.depth == INFINITE:
        raise InputError("dwl_depth_k_sparse needs a finite depth")
    return _depth_k(X, Y, C, params, sparse=True)


def dwl_infinity(X: MarkovChain, Y: MarkovChain, C, params: DiscountParams = DiscountParams(),
                 start=None, sparse: bool = False) -> FixedPointResult:
    """Fixed point of ``M -> delta C + (1-delta) Phi(M)`` and the induced distance.

    Stops when the sup-norm step is at most ``tol`` or when the a-priori rate
    bound certifies ``tol`` accuracy, whichever comes first. The last sweep is
    re-solved to full Sinkhorn tolerance and its plans and duals are kept.
    Hitting ``max_iter`` returns ``converged=False`` and emits
    :class:`NotConvergedWarning`.
    """
    C = _check_cost(X, Y, C)
    delta = params.delta
    if not delta > 0:
        raise InputError("dwl_infinity needs delta > 0; use wl_infinity for the undiscounted limit")
    if sparse and params.accelerate == "newton":
        raise InputError("newton acceleration needs the dense path")
    eps = params.epsilon
    n, m = C.shape
    scale = cost_norm(C)
    tol = params.tol if params.tol is not None else (1e-8 * scale if scale > 0 else 1e-12)
    bound_scale = scale + (0.5 * eps * math.log(n * m) if eps > 0 else 0.0)
    kstar = rate_bound_cap(delta, tol, bound_scale)
    sweeper = CellSweeper(X, Y, eps, sparse, params.sinkhorn_tol, params.sinkhorn_max_iter, params.threads)
    newton = params.accelerate == "newton"

    M = _initial_matrix(C, params, start)
    warm_ot = None
    if isinstance(start, FixedPointResult):
        warm_ot = start.final_ot
        if eps > 0 and not sparse and start.sweep is not None and start.sweep.f is not None:
            sweeper.warm_start(start.sweep.f)
    residuals = []
    iterates = [M.copy()] if params.record_iterates else None
    converged = False
    best_res = np.inf
    it = 0
    while it < params.max_iter:
        it += 1
        cap = None
        if params.schedule > 0:
            cap = 1 + params.schedule * (it - 1)
        sw = sweeper(M, store=newton, cap=cap)
        cells_ok = bool(sw.converged.all())
        M_plain = delta * C + (1.0 - delta) * sw.values
        res = float(np.abs(M_plain - M).max())
        residuals.append(res)
        if cells_ok and (res <= tol or (not newton and it >= kstar)):
            converged = True
            break
        if newton and cells_ok and res < best_res:
            best_res = res
            M = _newton_step(C, M, sw, delta)
        else:
            M = M_plain
        if iterates is not None:
            iterates.append(M.copy())

    if not converged:
        warnings.warn(f"dwl_infinity stopped after {it} sweeps with residual {residuals[-1]:.3e}",
                      NotConvergedWarning, stacklevel=2)

    # final sweep: every cell fully converged, plans and duals stored
    final_sweep = sweeper(M, store=not sparse)
    cost_final = delta * C + (1.0 - delta) * final_sweep.values
    if iterates is not None:
        iterates.append(cost_final.copy())
    final_res = float(np.abs(cost_final - M).max())
    residuals.append(final_res)
    cells_ok = bool(final_sweep.converged.all())
    final = _final_ot(X, Y, cost_final, params, warm_ot)
    return FixedPointResult(
        cost_final=cost_final,
        value=final.value,
        iterations=it + 1,
        residual=final_res,
        final_ot=final,
        converged=converged and cells_ok and final.converged,
        params=replace(params, tol=tol),
        cost=C,
        residuals=residuals,
        iterates=iterates,
        work=sweeper.work,
        sweep=None if sparse else final_sweep,
        sweep_cost=None if sparse else M,
    )


def wl_infinity(X: MarkovChain, Y: MarkovChain, C, tol: float = 1e-9, max_iter: int = 100_000) -> WlInfinityResult:
    """Undiscounted limit: iterate ``Phi`` on ``C`` until the matrix is constant.

    Needs irreducible aperiodic kernels. Asserts that the minimum entry never
    decreases and the maximum never increases from one iterate to the next.
    """
    C = _check_cost(X, Y, C)
    for name, chain in (("X", X), ("Y", Y)):
        rep = structure_check(chain)
        if not (rep.irreducible and rep.aperiodic):
            raise PreconditionViolated(f"chain {name} must be irreducible and aperiodic")
    sweeper = CellSweeper(X, Y, 0.0)
    slack = 1e-12 * max(cost_norm(C), 1.0)
    M = C.copy()
    mins, maxs = [float(M.min())], [float(M.max())]
    it = 0
    while maxs[-1] - mins[-1] > tol:
        if it >= max_iter:
            gap = maxs[-1] - mins[-1]
            raise NotConverged(f"wl_infinity gap {gap:.3e} after {it} sweeps", residual=gap)
        M = sweeper(M).values
        it += 1
        lo, hi = float(M.min()), float(M.max())
        if lo < mins[-1] - slack or hi > maxs[-1] + slack:
            raise InvariantViolation(f"envelope not monotone at sweep {it}")
        mins.append(lo)
        maxs.append(hi)
    ot_val = exact_ot(X.initial, Y.initial, M).value
    return WlInfinityResult(
        value=float(M.mean()),
        gap=maxs[-1] - mins[-1],
        iterations=it,
        converged=True,
        ot_value=ot_val,
        mins=mins,
        maxs=maxs,
    )


def otm_general_p(X: MarkovChain, Y: MarkovChain, C, p: HorizonDistribution,
                  epsilon: float = 0.0, **kw) -> FixedPointResult:
    """OTM distance for a finitely supported horizon law, by backward induction."""
    C = _check_cost(X, Y, C)
    probs = p.probs
    K = len(probs) - 1
    params = DiscountParams(delta=0.0, epsilon=epsilon, depth=K, **kw)
    sweeper = CellSweeper(X, Y, epsilon, False, params.sinkhorn_tol, params.sinkhorn_max_iter, params.threads)
    V = probs[K] * C
    all_conv = True
    last = None
    prev = V
    for t in range(K - 1, -1, -1):
        sw = sweeper(V, store=t == 0)
        all_conv &= bool(sw.converged.all())
        prev = V
        V = probs[t] * C + sw.values
        if t == 0:
            last = sw
    final = _final_ot(X, Y, V, params)
    return FixedPointResult(
        cost_final=V,
        value=final.value,
        iterations=K,
        residual=0.0,
        final_ot=final,
        converged=all_conv and final.converged,
        params=params,
        cost=C,
        work=sweeper.work,
        sweep=last,
        sweep_cost=prev if last is not None else None,
    )


def otc_estimate(X: MarkovChain, Y: MarkovChain, C, deltas, epsilon: float = 0.0,
                 tol: float | None = None, max_iter: int = 100_000,
                 accelerate: str = "newton", **kw) -> OtcEstimate:
    """Discounted fixed-point distances along a decreasing ``delta`` schedule.

    The chains must start from stationary distributions. The smallest-delta
    value is the estimate; no extrapolation is attempted.
    """
    C = _check_cost(X, Y, C)
    for name, chain in (("X", X), ("Y", Y)):
        r = stationarity_residual(chain)
        if r > STATIONARY_TOL:
            raise NotStationary(f"initial distribution of {name} is not stationary (residual {r:.2e})")
    ds = [float(d) for d in deltas]
    if not ds:
        raise InputError("delta schedule is empty")
    if any(b >= a for a, b in zip(ds, ds[1:])):
        raise InputError("delta schedule must be strictly decreasing")
    if ds[-1] < MIN_OTC_DELTA or ds[0] > 1.0:
        raise InputError(f"deltas must lie in [{MIN_OTC_DELTA}, 1]")
    values, conv = [], []
    prev = None
    for d in ds:
        params = DiscountParams(delta=d, epsilon=epsilon, tol=tol, max_iter=max_iter,
                                accelerate=accelerate, **kw)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConvergedWarning)
            res = dwl_infinity(X, Y, C, params, start=prev)
        values.append(res.value)
        conv.append(res.converged)
        prev = res
    slack = 1e-9 * max(cost_norm(C), 1.0)
    trend = all(b >= a - slack for a, b in zip(values, values[1:]))
    return OtcEstimate(ds, values, conv, values[-1], trend)


def extract_optimal_coupling(result: FixedPointResult, X: MarkovChain, Y: MarkovChain,
                             marginal_tol: float = 1e-6) -> CouplingPolicy:
    """Time-homogeneous joint chain on pairs ``(i, j)`` from the stored cell plans."""
    if not result.converged:
        raise NotConverged("coupling extraction needs a converged fixed point", residual=result.residual)
    sw = result.sweep
    if sw is None or sw.plans is None:
        raise InputError("result carries no cell plans (sparse or depth-0 run)")
    n, m = X.n, Y.n
    if sw.plans.shape != (n, m, n, m):
        raise DimensionMismatch("result does not belong to these chains")
    plans = sw.plans
    err_x = np.abs(plans.sum(axis=3) - X.kernel[:, None, :]).max()
    err_y = np.abs(plans.sum(axis=2) - Y.kernel[None, :, :]).max()
    P0 = result.final_ot.plan.mass
    err_0 = max(np.abs(P0.sum(1) - X.initial).max(), np.abs(P0.sum(0) - Y.initial).max())
    worst = float(max(err_x, err_y, err_0))
    if worst > marginal_tol:
        raise InputError(f"cell plans violate their marginals by {worst:.2e}")
    return CouplingPolicy(plans.reshape(n * m, n * m).copy(), P0.ravel().copy(), (n, m))
