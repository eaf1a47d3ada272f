"""Exact discrete optimal transport by the transportation (network) simplex.

The basis is a spanning tree of the bipartite row/column graph. Pricing is
Dantzig's rule with lexicographic tie-breaking; after a run of degenerate
pivots it switches to Bland's rule until a non-degenerate pivot happens,
which rules out cycling. Every choice is index-ordered, so identical inputs
give bit-identical plans.
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_OPTIMAL = 0
STATUS_PIVOT_LIMIT = 1


@njit(cache=True, nogil=True)
def _northwest_corner(a, b, x, basic):
    n = a.shape[0]
    m = b.shape[0]
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    while True:
        q = min(ra[i], rb[j])
        if q < 0.0:
            q = 0.0
        x[i, j] = q
        basic[i, j] = True
        ra[i] -= q
        rb[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1


@njit(cache=True, nogil=True)
def _potentials(C, basic, u, v, queue, row_set, col_set):
    n, m = C.shape
    row_set[:] = False
    col_set[:] = False
    u[0] = 0.0
    row_set[0] = True
    queue[0] = 0
    head = 0
    tail = 1
    while head < tail:
        node = queue[head]
        head += 1
        if node < n:
            for c in range(m):
                if basic[node, c] and not col_set[c]:
                    v[c] = C[node, c] - u[node]
                    col_set[c] = True
                    queue[tail] = n + c
                    tail += 1
        else:
            c = node - n
            for r in range(n):
                if basic[r, c] and not row_set[r]:
                    u[r] = C[r, c] - v[c]
                    row_set[r] = True
                    queue[tail] = r
                    tail += 1


@njit(cache=True, nogil=True)
def _tree_path(basic, r, s, parent, queue, seen):
    """Fill ``parent`` with a BFS tree of the basis rooted at row ``r``, stopping at column ``s``."""
    n, m = basic.shape
    seen[:] = False
    seen[r] = True
    queue[0] = r
    head = 0
    tail = 1
    target = n + s
    while head < tail:
        node = queue[head]
        head += 1
        if node == target:
            break
        if node < n:
            for c in range(m):
                nb = n + c
                if basic[node, c] and not seen[nb]:
                    seen[nb] = True
                    parent[nb] = node
                    queue[tail] = nb
                    tail += 1
        else:
            c = node - n
            for rr in range(n):
                if basic[rr, c] and not seen[rr]:
                    seen[rr] = True
                    parent[rr] = node
                    queue[tail] = rr
                    tail += 1


@njit(cache=True, nogil=True)
def transport_simplex(a, b, C, tol):
    """Solve ``min <x, C>`` over couplings of ``a`` and ``b``.

    Returns ``(plan, u, v, pivots, status)`` where ``u, v`` are the simplex
    potentials of the final basis (``u[0] = 0``).
    """
    n, m = C.shape
    x = np.zeros((n, m))
    basic = np.zeros((n, m), dtype=np.bool_)
    u = np.zeros(n)
    v = np.zeros(m)
    if n == 1 or m == 1:
        _northwest_corner(a, b, x, basic)
        _potentials(C, basic, u, v, np.empty(n + m, np.int64), np.zeros(n, np.bool_), np.zeros(m, np.bool_))
        return x, u, v, 0, STATUS_OPTIMAL
    _northwest_corner(a, b, x, basic)
    queue = np.empty(n + m, np.int64)
    row_set = np.zeros(n, np.bool_)
    col_set = np.zeros(m, np.bool_)
    parent = np.empty(n + m, np.int64)
    seen = np.zeros(n + m, np.bool_)
    path = np.empty(n + m, np.int64)
    max_pivots = 50 * (n * m + n + m) + 1000
    degenerate_run = 0
    pivots = 0
    status = STATUS_OPTIMAL
    while True:
        _potentials(C, basic, u, v, queue, row_set, col_set)
        bland = degenerate_run > 2 * (n + m)
        best = -tol
        r = -1
        s = -1
        for i in range(n):
            for j in range(m):
                if not basic[i, j]:
                    rc = C[i, j] - u[i] - v[j]
                    if rc < best:
                        best = rc
                        r = i
                        s = j
                        if bland:
                            break
            if bland and r >= 0:
                break
        if r < 0:
            break
        if pivots >= max_pivots:
            status = STATUS_PIVOT_LIMIT
            break
        pivots += 1
        _tree_path(basic, r, s, parent, queue, seen)
        # walk back from column s to row r
        length = 0
        node = n + s
        while node != r:
            path[length] = node
            length += 1
            node = parent[node]
        path[length] = r
        length += 1
        # edges path[k]-path[k+1]; the first (touching column s) is a minus edge
        theta = np.inf
        leave_i = -1
        leave_j = -1
        for k in range(0, length - 1, 2):
            p = path[k]
            q = path[k + 1]
            if p < n:
                ii = p
                jj = q - n
            else:
                ii = q
                jj = p - n
            val = x[ii, jj]
            if val < theta or (val == theta and ii * m + jj < leave_i * m + leave_j):
                theta = val
                leave_i = ii
                leave_j = jj
        for k in range(length - 1):
            p = path[k]
            q = path[k + 1]
            if p < n:
                ii = p
                jj = q - n
            else:
                ii = q
                jj = p - n
            if k % 2 == 0:
                x[ii, jj] -= theta
            else:
                x[ii, jj] += theta
        x[r, s] = theta
        x[leave_i, leave_j] = 0.0
        basic[leave_i, leave_j] = False
        basic[r, s] = True
        if theta > 0.0:
            degenerate_run = 0
        else:
            degenerate_run += 1
    return x, u, v, pivots, status


@njit(cache=True, nogil=True)
def exact_sweep_rows(M, KX, KY, sx, cx, sy, cy, tol, row_lo, row_hi, values, plans, store, status):
    """Solve cells ``(i, j)`` for ``row_lo <= i < row_hi`` on the given supports.

    Returns the cell-block work ``sum |supp_i| * |supp_j|`` for the rows handled.
    """
    m = KY.shape[0]
    work = 0
    for i in range(row_lo, row_hi):
        ni = cx[i]
        ri = sx[i, :ni]
        a = np.empty(ni)
        for p in range(ni):
            a[p] = KX[i, ri[p]]
        for j in range(m):
            mj = cy[j]
            cj = sy[j, :mj]
            b = np.empty(mj)
            for q in range(mj):
                b[q] = KY[j, cj[q]]
            sub = np.empty((ni, mj))
            for p in range(ni):
                for q in range(mj):
                    sub[p, q] = M[ri[p], cj[q]]
            x, _, _, _, st = transport_simplex(a, b, sub, tol)
            total = 0.0
            for p in range(ni):
                for q in range(mj):
                    total += x[p, q] * sub[p, q]
            values[i, j] = total
            if st != 0:
                status[0] = st
            if store:
                for p in range(ni):
                    for q in range(mj):
                        plans[i, j, ri[p], cj[q]] = x[p, q]
            work += ni * mj
    return work


def pivot_tolerance(C: np.ndarray) -> float:
    """Reduced costs above ``-tol`` count as nonnegative."""
    return 1e-12 * max(float(np.abs(C).max()) if C.size else 0.0, 1e-300)


def exact_ot(alpha, beta, C):
    """Exact optimal transport; returns an optimal vertex of the transport polytope.

    Dual potentials are not reported on this path (``duals is None``).
    """
    from .types import OtSolution, TransportPlan, check_problem

    a, b, M = check_problem(alpha, beta, C)
    M = np.ascontiguousarray(M)
    x, _, _, pivots, status = transport_simplex(a, b, M, pivot_tolerance(M))
    return OtSolution(
        value=float(np.sum(x * M)),
        plan=TransportPlan(x),
        duals=None,
        iterations=int(pivots),
        converged=status == STATUS_OPTIMAL,
        epsilon=0.0,
    )
