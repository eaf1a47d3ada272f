"""Result containers shared by the exact and entropic solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from ..errors import DimensionMismatch, MarginalNotNormalized, NonFiniteCost

MARGINAL_TOL = 1e-9
EXACT_FEAS_TOL = 1e-12
ENTROPIC_FEAS_TOL = 1e-7


@dataclass(frozen=True)
class TransportPlan:
    mass: np.ndarray

    def marginal_error(self, alpha, beta) -> float:
        """Max absolute deviation of row/column sums from ``alpha``/``beta``."""
        r = np.abs(self.mass.sum(axis=1) - alpha).max()
        c = np.abs(self.mass.sum(axis=0) - beta).max()
        return float(max(r, c))

    @property
    def shape(self):
        return self.mass.shape


@dataclass(frozen=True)
class DualPair:
    """Potentials with ``mean(f) = 0``; masked entries had zero marginal mass."""

    f: np.ndarray
    g: np.ndarray
    gauge: str = "mean_f_zero"
    f_mask: np.ndarray | None = None
    g_mask: np.ndarray | None = None


@dataclass(frozen=True)
class OtSolution:
    value: float
    plan: TransportPlan
    duals: DualPair | None
    iterations: int
    converged: bool
    epsilon: float
    row_index: np.ndarray | None = None
    col_index: np.ndarray | None = None

    def objective(self, C) -> float:
        """Recompute the objective from the plan: ``<P, C> - eps * H(P)``."""
        P = self.plan.mass
        val = float(np.sum(P * C))
        if self.epsilon > 0:
            val += self.epsilon * float(np.sum(xlogy(P, P)))
        return val


def entropic_objective(P: np.ndarray, C: np.ndarray, epsilon: float) -> float:
    return float(np.sum(P * C) + epsilon * np.sum(xlogy(P, P)))


def check_problem(alpha, beta, C) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.asarray(alpha, dtype=float).ravel()
    b = np.asarray(beta, dtype=float).ravel()
    M = np.asarray(C, dtype=float)
    if M.ndim != 2 or M.shape != (a.size, b.size):
        raise DimensionMismatch(f"cost shape {M.shape} does not match marginals ({a.size}, {b.size})")
    if not np.all(np.isfinite(M)):
        raise NonFiniteCost("cost matrix has non-finite entries")
    for name, v in (("alpha", a), ("beta", b)):
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise MarginalNotNormalized(f"{name} must be a finite nonnegative vector")
        if abs(v.sum() - 1.0) > MARGINAL_TOL:
            raise MarginalNotNormalized(f"{name} sums to {v.sum()!r}")
    return a, b, M
