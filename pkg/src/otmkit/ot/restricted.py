"""OT restricted to declared supports of the two marginals.

Rows and columns outside the supports carry no mass, so dropping them leaves
the feasible set (and the optimum) unchanged; only the block of the cost on
``support_rows x support_cols`` is ever read.
"""

from __future__ import annotations

import numpy as np

from ..errors import SupportViolation
from .exact import exact_ot
from .sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, sinkhorn
from .types import OtSolution, check_problem


def solve_restricted(alpha, beta, C, support_rows, support_cols, epsilon: float = 0.0,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> OtSolution:
    """Solve on ``support_rows x support_cols``; plan and duals are in restricted coordinates."""
    a, b, M = check_problem(alpha, beta, C)
    rows = np.unique(np.asarray(support_rows, dtype=np.int64))
    cols = np.unique(np.asarray(support_cols, dtype=np.int64))
    if rows.size == 0 or cols.size == 0:
        raise SupportViolation("supports must be non-empty")
    if rows.min() < 0 or rows.max() >= a.size or cols.min() < 0 or cols.max() >= b.size:
        raise SupportViolation("support index out of range")
    out_r = np.ones(a.size, dtype=bool)
    out_r[rows] = False
    out_c = np.ones(b.size, dtype=bool)
    out_c[cols] = False
    if np.any(a[out_r] > 0) or np.any(b[out_c] > 0):
        raise SupportViolation("marginal mass outside the declared support")
    sub = M[np.ix_(rows, cols)]
    if epsilon > 0:
        sol = sinkhorn(a[rows], b[cols], sub, epsilon, tol=tol, max_iter=max_iter)
    else:
        sol = exact_ot(a[rows], b[cols], sub)
    return OtSolution(
        value=sol.value,
        plan=sol.plan,
        duals=sol.duals,
        iterations=sol.iterations,
        converged=sol.converged,
        epsilon=sol.epsilon,
        row_index=rows,
        col_index=cols,
    )
