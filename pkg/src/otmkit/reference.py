"""Slow, independent oracles and stochastic cross-checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chains import MarkovChain
from .errors import InputError, InvalidPolicy
from .ot import exact_ot, sinkhorn
from .otm import INFINITE, CouplingPolicy, DiscountParams, HorizonDistribution, otm_general_p, wl_depth_k

POLICY_TOL = 1e-6


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    horizon: int
    tail_bound: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class LowerBoundCheck:
    lhs: float
    rhs: float
    holds: bool


def _check_policy(policy: CouplingPolicy, chains):
    J = np.asarray(policy.joint_kernel, dtype=float)
    nu = np.asarray(policy.joint_initial, dtype=float)
    S = J.shape[0]
    if J.shape != (S, S) or nu.shape != (S,):
        raise InvalidPolicy("joint kernel must be square and match the joint initial")
    if np.any(J < -POLICY_TOL) or np.any(nu < -POLICY_TOL):
        raise InvalidPolicy("negative transition mass")
    if np.abs(J.sum(axis=1) - 1).max() > POLICY_TOL or abs(nu.sum() - 1) > POLICY_TOL:
        raise InvalidPolicy("joint kernel rows / joint initial do not sum to 1")
    if chains is not None:
        X, Y = chains
        n, m = X.n, Y.n
        T = J.reshape(n, m, n, m)
        err = max(
            np.abs(T.sum(axis=3) - X.kernel[:, None, :]).max(),
            np.abs(T.sum(axis=2) - Y.kernel[None, :, :]).max(),
            np.abs(nu.reshape(n, m).sum(1) - X.initial).max(),
            np.abs(nu.reshape(n, m).sum(0) - Y.initial).max(),
        )
        if err > POLICY_TOL:
            raise InvalidPolicy(f"policy marginals off by {err:.2e}")
    return np.clip(J, 0, None), np.clip(nu, 0, None)


def default_horizon(delta: float, precision: float = 1e-4) -> int:
    """Steps after which the geometric tail weight ``(1-delta)^h`` drops below ``precision``."""
    if delta >= 1.0:
        return 0
    return max(1, math.ceil(math.log(precision) / math.log(1.0 - delta)))


def simulate_discounted_cost(policy: CouplingPolicy, C, delta: float, horizon_truncation: int | None = None,
                             n_paths: int = 100_000, seed: int = 0, chains=None) -> McEstimate:
    """Monte-Carlo estimate of ``E sum_t delta (1-delta)^t C(X_t, Y_t)`` under ``policy``.

    Paths are truncated at ``h`` steps; the tail is replaced by
    ``(1-delta)^h C(X_h, Y_h)``, whose error is at most ``(1-delta)^h * max|C|``
    (reported as ``tail_bound``). Uses a Philox counter-based generator.
    """
    if not delta > 0:
        raise InputError("simulation needs delta > 0")
    if n_paths < 1:
        raise InputError("n_paths must be >= 1")
    J, nu = _check_policy(policy, chains)
    C = np.asarray(C, dtype=float).ravel()
    if C.size != J.shape[0]:
        raise InputError("cost does not match the joint state space")
    h = default_horizon(delta) if horizon_truncation is None else int(horizon_truncation)
    rng = np.random.Generator(np.random.Philox(seed))
    cdf_J = np.cumsum(J, axis=1)
    cdf_nu = np.cumsum(nu)
    last = J.shape[0] - 1

    def draw(cdf_rows, u):
        return np.minimum((cdf_rows < u[:, None]).sum(axis=1), last)

    state = np.minimum(np.searchsorted(cdf_nu, rng.random(n_paths), side="right"), last)
    total = np.zeros(n_paths)
    w = 1.0
    for _ in range(h):
        total += delta * w * C[state]
        w *= 1.0 - delta
        state = draw(cdf_J[state], rng.random(n_paths))
    total += w * C[state]
    se = float(total.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return McEstimate(float(total.mean()), se, n_paths, seed, h, w * float(np.abs(C).max()))


def lower_bound_check(X: MarkovChain, Y: MarkovChain, C, p: HorizonDistribution,
                      epsilon: float = 0.0, slack: float = 1e-9) -> LowerBoundCheck:
    """Compare the OTM distance for ``p`` with the ``p``-average of depth-t WL distances."""
    lhs = otm_general_p(X, Y, C, p, epsilon=epsilon).value
    rhs = 0.0
    for t, w in enumerate(p.probs):
        if w > 0:
            rhs += w * wl_depth_k(X, Y, C, t, epsilon=epsilon).value
    return LowerBoundCheck(lhs, rhs, lhs >= rhs - slack)


def naive_dense_recursion(X: MarkovChain, Y: MarkovChain, C, params: DiscountParams) -> float:
    """Plain loop over levels and cells with one independent OT call per cell."""
    if params.depth == INFINITE:
        raise InputError("naive_dense_recursion needs a finite depth")
    C = np.asarray(C, dtype=float)
    eps = params.epsilon

    def solve(a, b, M):
        if eps > 0:
            return sinkhorn(a, b, M, eps, tol=params.sinkhorn_tol, max_iter=params.sinkhorn_max_iter).value
        return exact_ot(a, b, M).value

    M = C.copy()
    for _ in range(int(params.depth)):
        nxt = np.empty_like(M)
        for i in range(X.n):
            for j in range(Y.n):
                nxt[i, j] = params.delta * C[i, j] + (1.0 - params.delta) * solve(X.kernel[i], Y.kernel[j], M)
        M = nxt
    return solve(X.initial, Y.initial, M)
