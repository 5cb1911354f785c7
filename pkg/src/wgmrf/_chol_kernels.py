"""Numba kernels for the sparse Cholesky factorization.

All kernels operate on the *permuted* matrix C = P Q P^T stored as the
upper triangle in compressed-column form (column k holds rows <= k,
unsorted). L is built column by column in CSC with the diagonal entry
first; row indices within a column come out in increasing order because
rows are appended as the up-looking pass walks k = 0..n-1.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def etree(n, Cp, Ci):
    """Elimination tree of a symmetric matrix given its upper-triangle CSC."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


@njit(cache=True, inline="always")
def _ereach(k, Cp, Ci, parent, w, path, out, n):
    """Pattern of row k of L (excluding diagonal) in topological order.

    Marks with ``w`` (w[i] == k means visited in this round); returns
    ``top``: out[top:n] is the pattern, children before etree parents.
    """
    top = n
    w[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        depth = 0
        while w[i] != k:
            path[depth] = i
            depth += 1
            w[i] = k
            i = parent[i]
        while depth > 0:
            depth -= 1
            top -= 1
            out[top] = path[depth]
    return top


@njit(cache=True)
def col_counts(n, Cp, Ci, parent):
    """Nonzero count per column of L (diagonal included)."""
    counts = np.zeros(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    for k in range(n):
        top = _ereach(k, Cp, Ci, parent, w, path, out, n)
        counts[k] += 1
        for t in range(top, n):
            counts[out[t]] += 1
    return counts


@njit(cache=True)
def chol_numeric(n, Cp, Ci, Cx, parent, Lp, Li, Lx, write_pattern):
    """Up-looking numeric factorization C = L L^T.

    With ``write_pattern`` the row indices Li are written alongside the
    values; a refactorization on an identical pattern can skip that and
    only refresh Lx. Returns -1 on success or the index of the first
    non-positive pivot.
    """
    c = Lp[:n].copy()
    x = np.zeros(n, dtype=np.float64)
    w = np.full(n, -1, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    for k in range(n):
        top = _ereach(k, Cp, Ci, parent, w, path, out, n)
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            if i <= k:
                x[i] = Cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            j = out[t]
            lkj = x[j] / Lx[Lp[j]]
            x[j] = 0.0
            for p in range(Lp[j] + 1, c[j]):
                x[Li[p]] -= Lx[p] * lkj
            d -= lkj * lkj
            pj = c[j]
            c[j] = pj + 1
            if write_pattern:
                Li[pj] = k
            Lx[pj] = lkj
        if d <= 0.0:
            return k
        pk = c[k]
        c[k] = pk + 1
        if write_pattern:
            Li[pk] = k
        Lx[pk] = np.sqrt(d)
    return -1


@njit(cache=True)
def lower_solve(n, Lp, Li, Lx, x):
    """Solve L y = x in place (diagonal entry first in each column)."""
    for j in range(n):
        xj = x[j] / Lx[Lp[j]]
        x[j] = xj
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj


@njit(cache=True)
def lower_transpose_solve(n, Lp, Li, Lx, x):
    """Solve L^T y = x in place."""
    for j in range(n - 1, -1, -1):
        s = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * x[Li[p]]
        x[j] = s / Lx[Lp[j]]


@njit(cache=True)
def sym_matvec(n, Ap, Ai, Ax, x, y):
    """y = Q x for Q stored as its lower triangle in CSC."""
    for i in range(n):
        y[i] = 0.0
    for j in range(n):
        xj = x[j]
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            v = Ax[p]
            y[i] += v * xj
            if i != j:
                y[j] += v * x[i]


@njit(cache=True)
def permuted_upper(n, Qp, Qi, pinv):
    """Pattern of C = P Q P^T (upper CSC) from lower-CSC Q plus a value map.

    Returns (Cp, Ci, src) with src[t] = position in Q.data feeding C.data[t].
    """
    nnz = Qp[n]
    counts = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        b = pinv[j]
        for p in range(Qp[j], Qp[j + 1]):
            a = pinv[Qi[p]]
            col = a if a > b else b
            counts[col + 1] += 1
    Cp = np.empty(n + 1, dtype=np.int64)
    Cp[0] = 0
    for j in range(n):
        Cp[j + 1] = Cp[j] + counts[j + 1]
    nxt = Cp[:n].copy()
    Ci = np.empty(nnz, dtype=np.int64)
    src = np.empty(nnz, dtype=np.int64)
    for j in range(n):
        b = pinv[j]
        for p in range(Qp[j], Qp[j + 1]):
            a = pinv[Qi[p]]
            if a > b:
                col = a
                row = b
            else:
                col = b
                row = a
            q = nxt[col]
            nxt[col] = q + 1
            Ci[q] = row
            src[q] = p
    return Cp, Ci, src
