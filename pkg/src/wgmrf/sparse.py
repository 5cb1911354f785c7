"""Sparse symmetric matrices and their Cholesky factorization.

``SparseSymmetric`` stores the lower triangle in compressed-column form.
``factorize`` computes P Q P^T = L L^T with a fill-reducing minimum-degree
permutation; the symbolic analysis (permutation, elimination tree, column
pointers) is reused by ``refactorize`` for every matrix sharing the same
sparsity pattern, which is the dominant cost saving inside the MCMC loops.

Canonical-form Gaussian sampling: for a precision matrix P and linear
term b, ``sample_canonical`` draws from N(P^{-1} b, P^{-1}) by solving
L^T u = z through the permuted factor.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from . import _chol_kernels as _k
from .errors import NotSpdError, ParseError, ValidationError


class SparseSymmetric:
    """Symmetric n x n matrix stored as its lower triangle in CSC form.

    Row indices are strictly increasing within each column and every
    diagonal entry is explicitly present.
    """

    __slots__ = ("n", "indptr", "indices", "data")

    def __init__(self, n, indptr, indices, data, validate=True):
        self.n = int(n)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if validate:
            self._validate()

    def _validate(self):
        n = self.n
        if self.indptr.shape != (n + 1,):
            raise ValidationError("indptr must have length n + 1")
        if self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise ValidationError("indptr endpoints inconsistent with indices")
        if len(self.indices) != len(self.data):
            raise ValidationError("indices and data length mismatch")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("matrix values must be finite")
        for j in range(n):
            lo, hi = self.indptr[j], self.indptr[j + 1]
            if lo >= hi or self.indices[lo] != j:
                raise ValidationError(f"column {j} is missing its diagonal entry")
            col = self.indices[lo:hi]
            if np.any(np.diff(col) <= 0):
                raise ValidationError(f"row indices not strictly increasing in column {j}")
            if col[-1] >= n:
                raise ValidationError(f"row index out of range in column {j}")

    @property
    def nnz_lower(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_coo(cls, n, rows, cols, vals, validate=True):
        """Build from lower-triangle coordinates; duplicates are rejected."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if np.any(rows < cols):
            raise ValidationError("entries must lie in the lower triangle (row >= col)")
        order = np.lexsort((rows, cols))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows) > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                raise ValidationError("duplicate entries in coordinate input")
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, cols + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(n, indptr, rows, vals, validate=validate)

    @classmethod
    def from_scipy(cls, M, validate=True):
        """Take the lower triangle of a scipy sparse symmetric matrix."""
        import scipy.sparse as sp

        M = sp.coo_matrix(M)
        keep = M.row >= M.col
        return cls.from_coo(M.shape[0], M.row[keep], M.col[keep], M.data[keep],
                            validate=validate)

    @classmethod
    def from_dense(cls, A):
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        rows, cols = np.nonzero(np.tril(A) != 0.0)
        vals = A[rows, cols]
        # make sure diagonals are explicit even when zero
        missing = np.setdiff1d(np.arange(n), rows[rows == cols])
        if missing.size:
            rows = np.concatenate([rows, missing])
            cols = np.concatenate([cols, missing])
            vals = np.concatenate([vals, A[missing, missing]])
        return cls.from_coo(n, rows, cols, vals)

    def to_scipy(self):
        """Full symmetric matrix as scipy CSC."""
        import scipy.sparse as sp

        L = sp.csc_matrix(
            (self.data, self.indices, self.indptr), shape=(self.n, self.n)
        )
        D = sp.diags(L.diagonal())
        return (L + L.T - D).tocsc()

    def to_dense(self):
        A = np.zeros((self.n, self.n))
        for j in range(self.n):
            for p in range(self.indptr[j], self.indptr[j + 1]):
                i = self.indices[p]
                A[i, j] = self.data[p]
                A[j, i] = self.data[p]
        return A

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        y = np.empty(self.n)
        _k.sym_matvec(self.n, self.indptr, self.indices, self.data, x, y)
        return y

    def quad_form(self, x) -> float:
        """x^T Q x."""
        return float(np.dot(np.asarray(x, dtype=float), self.matvec(x)))

    def same_pattern(self, other: "SparseSymmetric") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def with_data(self, data) -> "SparseSymmetric":
        """Same pattern, new values (no validation beyond length)."""
        data = np.ascontiguousarray(data, dtype=np.float64)
        if len(data) != len(self.data):
            raise ValidationError("data length does not match pattern")
        return SparseSymmetric(self.n, self.indptr, self.indices, data, validate=False)


def min_degree_order(Q: SparseSymmetric) -> np.ndarray:
    """Fill-reducing elimination order by quotient-graph minimum degree.

    Eliminated pivots become elements; adjacent elements are absorbed and
    variable degrees are tracked with the standard approximate external
    degree bound. Deterministic: ties break on node index.
    """
    n = Q.n
    avars = [set() for _ in range(n)]
    for j in range(n):
        for p in range(Q.indptr[j], Q.indptr[j + 1]):
            i = int(Q.indices[p])
            if i != j:
                avars[i].add(j)
                avars[j].add(i)
    aelems = [set() for _ in range(n)]
    elem_vars: dict[int, set] = {}
    degree = [len(a) for a in avars]
    alive = [True] * n
    heap = [(degree[i], i) for i in range(n)]
    heapq.heapify(heap)
    order = np.empty(n, dtype=np.int64)
    ordered = 0
    while ordered < n:
        d, p = heapq.heappop(heap)
        if not alive[p] or d != degree[p]:
            continue
        lp = set(avars[p])
        for e in aelems[p]:
            lp |= elem_vars[e]
        lp.discard(p)
        absorbed = aelems[p]
        for e in absorbed:
            del elem_vars[e]
        elem_vars[p] = lp
        # |Le intersect Lp| for every element touching the new element
        overlap: dict[int, int] = {}
        for i in lp:
            for e in aelems[i]:
                if e in absorbed:
                    continue
                overlap[e] = overlap.get(e, 0) + 1
        for i in lp:
            av = avars[i]
            av.discard(p)
            av -= lp
            ae = aelems[i]
            ae -= absorbed
            ae.add(p)
            di = len(av) + len(lp) - 1
            for e in ae:
                if e != p:
                    di += len(elem_vars[e]) - overlap.get(e, 0)
            degree[i] = di
            heapq.heappush(heap, (di, i))
        alive[p] = False
        avars[p] = None
        aelems[p] = None
        order[ordered] = p
        ordered += 1
    return order


class CholeskyFactor:
    """Sparse Cholesky factorization P Q P^T = L L^T.

    Immutable after construction; ``refactorize`` returns a new factor
    sharing the symbolic analysis. ``perm`` maps permuted index -> original
    index.
    """

    __slots__ = (
        "n", "perm", "pinv", "parent", "Lp", "Li", "Lx",
        "Cp", "Ci", "src", "pattern_indptr", "pattern_indices", "log_det_value",
    )

    def __init__(self, n, perm, pinv, parent, Lp, Li, Lx, Cp, Ci, src,
                 pattern_indptr, pattern_indices):
        self.n = n
        self.perm = perm
        self.pinv = pinv
        self.parent = parent
        self.Lp = Lp
        self.Li = Li
        self.Lx = Lx
        self.Cp = Cp
        self.Ci = Ci
        self.src = src
        self.pattern_indptr = pattern_indptr
        self.pattern_indices = pattern_indices
        self.log_det_value = 2.0 * float(np.sum(np.log(Lx[Lp[:-1]])))

    @property
    def nnz_L(self) -> int:
        return int(self.Lp[-1])


def factorize(Q: SparseSymmetric, ordering: str = "amd") -> CholeskyFactor:
    """Factor an SPD matrix; raises ``NotSpdError`` naming the failing pivot.

    ``ordering`` is "amd" (minimum degree, default) or "natural".
    """
    n = Q.n
    if ordering == "amd":
        perm = min_degree_order(Q)
    elif ordering == "natural":
        perm = np.arange(n, dtype=np.int64)
    else:
        raise ValidationError(f"unknown ordering {ordering!r}")
    pinv = np.empty(n, dtype=np.int64)
    pinv[perm] = np.arange(n, dtype=np.int64)
    Cp, Ci, src = _k.permuted_upper(n, Q.indptr, Q.indices, pinv)
    parent = _k.etree(n, Cp, Ci)
    counts = _k.col_counts(n, Cp, Ci, parent)
    Lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=Lp[1:])
    Li = np.empty(Lp[-1], dtype=np.int64)
    Lx = np.empty(Lp[-1], dtype=np.float64)
    Cx = Q.data[src]
    bad = _k.chol_numeric(n, Cp, Ci, Cx, parent, Lp, Li, Lx, True)
    if bad >= 0:
        raise NotSpdError(perm[bad])
    return CholeskyFactor(n, perm, pinv, parent, Lp, Li, Lx, Cp, Ci, src,
                          Q.indptr, Q.indices)


def refactorize(factor: CholeskyFactor, Q_new: SparseSymmetric) -> CholeskyFactor:
    """Numeric refactorization reusing the symbolic analysis of ``factor``.

    ``Q_new`` must carry the exact sparsity pattern the factor was built on.
    """
    if (
        Q_new.n != factor.n
        or not np.array_equal(Q_new.indptr, factor.pattern_indptr)
        or not np.array_equal(Q_new.indices, factor.pattern_indices)
    ):
        raise ValidationError("sparsity pattern differs from the factored matrix")
    Lx = np.empty_like(factor.Lx)
    Cx = Q_new.data[factor.src]
    bad = _k.chol_numeric(
        factor.n, factor.Cp, factor.Ci, Cx, factor.parent,
        factor.Lp, factor.Li, Lx, False,
    )
    if bad >= 0:
        raise NotSpdError(factor.perm[bad])
    return CholeskyFactor(
        factor.n, factor.perm, factor.pinv, factor.parent,
        factor.Lp, factor.Li, Lx, factor.Cp, factor.Ci, factor.src,
        factor.pattern_indptr, factor.pattern_indices,
    )


def log_det(factor: CholeskyFactor) -> float:
    """Log determinant of the factored matrix."""
    return factor.log_det_value


def solve(factor: CholeskyFactor, b) -> np.ndarray:
    """Solve Q x = b through the permuted factor."""
    b = np.asarray(b, dtype=float)
    if b.shape != (factor.n,):
        raise ValidationError(f"right-hand side must have length {factor.n}")
    xp = b[factor.perm].copy()
    _k.lower_solve(factor.n, factor.Lp, factor.Li, factor.Lx, xp)
    _k.lower_transpose_solve(factor.n, factor.Lp, factor.Li, factor.Lx, xp)
    x = np.empty(factor.n)
    x[factor.perm] = xp
    return x


def solve_many(factor: CholeskyFactor, B) -> np.ndarray:
    """Column-wise solve for a dense right-hand-side matrix."""
    B = np.asarray(B, dtype=float)
    out = np.empty_like(B)
    for j in range(B.shape[1]):
        out[:, j] = solve(factor, B[:, j])
    return out


def sqrt_solve_transpose(factor: CholeskyFactor, z) -> np.ndarray:
    """Map iid standard normals z to a draw with covariance Q^{-1}.

    Solves L^T u = z in the permuted frame and undoes the permutation;
    the result has precision Q exactly.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (factor.n,):
        raise ValidationError(f"noise vector must have length {factor.n}")
    u = z.copy()
    _k.lower_transpose_solve(factor.n, factor.Lp, factor.Li, factor.Lx, u)
    x = np.empty(factor.n)
    x[factor.perm] = u
    return x


def sample_canonical(factor: CholeskyFactor, b, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(P^{-1} b, P^{-1}) for the factored precision matrix P."""
    mean = solve(factor, b)
    noise = sqrt_solve_transpose(factor, rng.standard_normal(factor.n))
    return mean + noise


def save_triplet(Q: SparseSymmetric, path):
    """Write the lower triangle in `n nnz` / `row col value` text form."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{Q.n} {Q.nnz_lower}\n")
        for j in range(Q.n):
            for p in range(Q.indptr[j], Q.indptr[j + 1]):
                fh.write(f"{Q.indices[p]} {j} {float(Q.data[p])!r}\n")


def load_triplet(path) -> SparseSymmetric:
    """Read a matrix written by ``save_triplet``."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError("expected header 'n nnz'", path=path, line=1)
        try:
            n, nnz = int(header[0]), int(header[1])
        except ValueError as exc:
            raise ParseError(f"bad header: {exc}", path=path, line=1) from None
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        for t in range(nnz):
            line = fh.readline()
            parts = line.split()
            if len(parts) != 3:
                raise ParseError("expected 'row col value'", path=path, line=t + 2)
            try:
                rows[t], cols[t] = int(parts[0]), int(parts[1])
                vals[t] = float(parts[2])
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=t + 2) from None
            if rows[t] < cols[t]:
                raise ParseError("entry above the diagonal", path=path, line=t + 2)
            if rows[t] >= n or cols[t] < 0:
                raise ParseError("index out of range", path=path, line=t + 2)
    try:
        return SparseSymmetric.from_coo(n, rows, cols, vals)
    except ValidationError as exc:
        raise ParseError(str(exc), path=path) from None
