"""Triangulated meshes, finite-element matrices, and the SPDE precision.

A mesh is either planar (nodes are (x, y) points) or spherical (nodes are
unit 3-vectors; longitude/latitude degrees are the canonical file format).
The finite-element triple (D, G1, G2) uses piecewise-linear nodal basis
functions with a lumped (diagonal) mass matrix:

    D_jj   = sum of area(T)/3 over triangles T containing node j
    (G1)_jk = sum of area(T) * grad(z_j) . grad(z_k)
    G2     = G1 D^{-1} G1

The precision of the mesh weights at range psi is
Q_psi = (1/(4*pi)) * (psi^{-2} D + 2 G1 + psi^2 G2), whose sparsity
pattern does not depend on psi; ``FemTriple`` caches the union pattern so
rebuilding Q for a new psi is a pure vector operation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import (
    OutOfDomainError,
    ParseError,
    ResourceLimitError,
    ValidationError,
)
from .sparse import SparseSymmetric, factorize, solve

EARTH_RADIUS_KM = 6371.0
FOUR_PI = 4.0 * math.pi


def lonlat_to_xyz(lonlat):
    """Degrees (lon, lat) -> unit vectors, shape (..., 3)."""
    lonlat = np.asarray(lonlat, dtype=float)
    lon = np.radians(lonlat[..., 0])
    lat = np.radians(lonlat[..., 1])
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)], axis=-1)


def xyz_to_lonlat(xyz):
    """Unit vectors -> degrees (lon, lat) with lon in [-180, 180]."""
    xyz = np.asarray(xyz, dtype=float)
    lon = np.degrees(np.arctan2(xyz[..., 1], xyz[..., 0]))
    lat = np.degrees(np.arcsin(np.clip(xyz[..., 2], -1.0, 1.0)))
    return np.stack([lon, lat], axis=-1)


class Mesh:
    """Triangulation with consistent orientation and positive-area triangles.

    ``nodes`` is (N, 2) for planar meshes; spherical meshes keep canonical
    (lon, lat) degrees in ``lonlat`` and derived unit vectors in ``nodes``
    (N, 3).
    """

    def __init__(self, mode, nodes, triangles, lonlat=None):
        if mode not in ("planar", "spherical"):
            raise ValidationError(f"unknown mesh mode {mode!r}")
        self.mode = mode
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValidationError("triangles must be a (T, 3) integer array")
        if mode == "planar":
            nodes = np.ascontiguousarray(nodes, dtype=float)
            if nodes.ndim != 2 or nodes.shape[1] != 2:
                raise ValidationError("planar nodes must be a (N, 2) array")
            self.lonlat = None
        else:
            if lonlat is None:
                lonlat = xyz_to_lonlat(nodes)
            lonlat = np.ascontiguousarray(lonlat, dtype=float)
            if np.any(np.abs(lonlat[:, 0]) > 180.0) or np.any(np.abs(lonlat[:, 1]) > 90.0):
                raise ValidationError("longitude/latitude out of range")
            self.lonlat = lonlat
            nodes = lonlat_to_xyz(lonlat)
        self.nodes = nodes
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(nodes)):
            raise ValidationError("triangle node index out of range")
        self.triangles = self._orient(triangles)

    def _orient(self, tri):
        """Normalize orientation (planar CCW / spherical outward); reject degenerates."""
        v = self.nodes
        a, b, c = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
        if self.mode == "planar":
            signed = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (
                b[:, 1] - a[:, 1]
            ) * (c[:, 0] - a[:, 0])
            scale = np.maximum(
                np.abs(b - a).max(axis=1), np.abs(c - a).max(axis=1)
            )
            bad = np.abs(signed) <= 1e-14 * np.maximum(scale * scale, 1e-300)
            flip = signed < 0
        else:
            det = np.einsum("ij,ij->i", a, np.cross(b, c))
            area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
            bad = area2 <= 1e-14
            flip = det < 0
        if np.any(bad):
            raise ValidationError(
                f"degenerate triangle at index {int(np.nonzero(bad)[0][0])}"
            )
        tri = tri.copy()
        tri[flip, 1], tri[flip, 2] = tri[flip, 2], tri[flip, 1]
        return tri

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_corners(self):
        """Corner coordinate arrays (a, b, c), each (T, dim)."""
        t = self.triangles
        return self.nodes[t[:, 0]], self.nodes[t[:, 1]], self.nodes[t[:, 2]]

    def triangle_areas(self):
        a, b, c = self.triangle_corners()
        if self.mode == "planar":
            return 0.5 * np.abs(
                (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
            )
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def build_planar_mesh(bbox, edge, extension=0.0) -> Mesh:
    """Structured triangulation of ``bbox`` expanded by ``extension`` per side.

    Squares of spacing <= ``edge`` are split along their lower-left to
    upper-right diagonal; deterministic for fixed inputs.
    """
    x0, y0, x1, y1 = (float(v) for v in bbox)
    if not (x1 > x0 and y1 > y0):
        raise ValidationError("bbox must have positive extent")
    if edge <= 0:
        raise ValidationError("edge must be > 0")
    if extension < 0:
        raise ValidationError("extension must be >= 0")
    if edge > (x1 - x0) or edge > (y1 - y0):
        raise ValidationError("edge larger than bbox extent")
    wx, wy = (x1 - x0) + 2 * extension, (y1 - y0) + 2 * extension
    nx = max(1, math.ceil(wx / edge - 1e-9))
    ny = max(1, math.ceil(wy / edge - 1e-9))
    xs = np.linspace(x0 - extension, x1 + extension, nx + 1)
    ys = np.linspace(y0 - extension, y1 + extension, ny + 1)
    xx, yy = np.meshgrid(xs, ys)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    tris = []
    for iy in range(ny):
        for ix in range(nx):
            ll = iy * (nx + 1) + ix
            lr = ll + 1
            ul = ll + (nx + 1)
            ur = ul + 1
            tris.append((ll, lr, ur))
            tris.append((ll, ur, ul))
    return Mesh("planar", nodes, np.array(tris, dtype=np.int64))


_ICO_T = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
        (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
        (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
    ],
    dtype=float,
)
_ICO_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


def build_spherical_mesh(subdivisions: int) -> Mesh:
    """Icosahedron subdivided ``subdivisions`` times, nodes on the unit sphere."""
    if subdivisions < 0:
        raise ValidationError("subdivisions must be >= 0")
    if subdivisions > 8:
        raise ResourceLimitError("subdivisions > 8 exceeds the mesh size limit")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for (i, j, k) in faces:
            a, b, c = mid(i, j), mid(j, k), mid(k, i)
            new_faces += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = new_faces
    xyz = np.array(verts)
    lonlat = xyz_to_lonlat(xyz)
    return Mesh("spherical", None, np.array(faces, dtype=np.int64), lonlat=lonlat)


def save_mesh(mesh: Mesh, path):
    """Text format: `mode N T`, N node lines (`x y` or `lon lat`), T index lines."""
    coords = mesh.nodes if mesh.mode == "planar" else mesh.lonlat
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{mesh.mode} {mesh.n_nodes} {mesh.n_triangles}\n")
        for x, y in coords:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def load_mesh(path) -> Mesh:
    """Parse and validate a mesh file; errors carry line numbers."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty mesh file", path=path, line=1)
    head = lines[0].split()
    if len(head) != 3 or head[0] not in ("planar", "spherical"):
        raise ParseError("expected header 'mode N T'", path=path, line=1)
    try:
        n, t = int(head[1]), int(head[2])
    except ValueError:
        raise ParseError("bad node/triangle counts", path=path, line=1) from None
    if len(lines) < 1 + n + t:
        raise ParseError(
            f"expected {n} node and {t} triangle lines", path=path, line=len(lines)
        )
    coords = np.empty((n, 2))
    for r in range(n):
        parts = lines[1 + r].split()
        if len(parts) != 2:
            raise ParseError("expected two coordinates", path=path, line=r + 2)
        try:
            coords[r] = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise ParseError(str(exc), path=path, line=r + 2) from None
    tris = np.empty((t, 3), dtype=np.int64)
    for r in range(t):
        parts = lines[1 + n + r].split()
        if len(parts) != 3:
            raise ParseError("expected three node indices", path=path, line=n + r + 2)
        try:
            tris[r] = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ParseError(str(exc), path=path, line=n + r + 2) from None
        if len(set(tris[r].tolist())) != 3:
            raise ParseError(
                f"degenerate triangle (repeated node index {tris[r].tolist()})",
                path=path, line=n + r + 2,
            )
        if tris[r].min() < 0 or tris[r].max() >= n:
            raise ParseError(
                f"node index out of range in triangle {tris[r].tolist()}",
                path=path, line=n + r + 2,
            )
    try:
        if head[0] == "planar":
            return Mesh("planar", coords, tris)
        return Mesh("spherical", None, tris, lonlat=coords)
    except ValidationError as exc:
        raise ParseError(str(exc), path=path) from None


def _basis_gradients(mesh: Mesh):
    """Per-triangle gradients of the three nodal basis functions, (T, 3, dim)."""
    a, b, c = mesh.triangle_corners()
    if mesh.mode == "planar":
        a = np.column_stack([a, np.zeros(len(a))])
        b = np.column_stack([b, np.zeros(len(b))])
        c = np.column_stack([c, np.zeros(len(c))])
    normal = np.cross(b - a, c - a)
    two_area = np.linalg.norm(normal, axis=1)
    nhat = normal / two_area[:, None]
    grads = np.stack(
        [np.cross(nhat, c - b), np.cross(nhat, a - c), np.cross(nhat, b - a)],
        axis=1,
    )
    return grads / two_area[:, None, None], 0.5 * two_area


@dataclass
class FemTriple:
    """Finite-element matrices D (diagonal), G1, G2 for a mesh.

    Also carries the psi-independent union sparsity pattern of
    Q_psi = (1/4pi)(psi^{-2} D + 2 G1 + psi^2 G2) with the three value
    vectors expanded onto it, so ``precision`` is a cheap vector update.
    """

    mesh: Mesh
    d: np.ndarray
    g1: SparseSymmetric
    g2: SparseSymmetric
    _indptr: np.ndarray = field(repr=False, default=None)
    _indices: np.ndarray = field(repr=False, default=None)
    _dvec: np.ndarray = field(repr=False, default=None)
    _g1vec: np.ndarray = field(repr=False, default=None)
    _g2vec: np.ndarray = field(repr=False, default=None)

    @property
    def n_nodes(self) -> int:
        return len(self.d)

    def precision(self, psi: float) -> SparseSymmetric:
        """Q_psi on the fixed union pattern."""
        if psi <= 0:
            raise ValidationError(f"psi must be > 0, got {psi}")
        data = (
            self._dvec / (psi * psi) + 2.0 * self._g1vec + (psi * psi) * self._g2vec
        ) / FOUR_PI
        return SparseSymmetric(
            self.n_nodes, self._indptr, self._indices, data, validate=False
        )


def fem_matrices(mesh: Mesh) -> FemTriple:
    """Assemble D, G1, G2 = G1 D^{-1} G1; rejects meshes with isolated nodes."""
    n = mesh.n_nodes
    grads, areas = _basis_gradients(mesh)
    tri = mesh.triangles
    d = np.zeros(n)
    np.add.at(d, tri.ravel(), np.repeat(areas / 3.0, 3))
    if np.any(d <= 0.0):
        raise ValidationError(
            f"isolated node {int(np.nonzero(d <= 0)[0][0])} belongs to no triangle"
        )
    # stiffness: area * grad_i . grad_j for each of the 9 vertex pairs
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tri[:, i])
            cols.append(tri[:, j])
            vals.append(areas * np.einsum("td,td->t", grads[:, i], grads[:, j]))
    g1_sp = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsc()
    g1_sp.sum_duplicates()
    g2_sp = (g1_sp @ sp.diags(1.0 / d) @ g1_sp).tocsc()
    g2_sp.sum_duplicates()

    d_sp = sp.diags(d).tocsc()
    lower = []
    for M in (d_sp, g1_sp, g2_sp):
        Ml = sp.tril(M, format="csc")
        Ml.sort_indices()
        lower.append(Ml)
    union = lower[0].copy()
    union.data = np.abs(union.data) + 1.0
    for M in lower[1:]:
        Ma = M.copy()
        Ma.data = np.abs(Ma.data) + 1.0
        union = union + Ma
    union.sort_indices()

    def _keys(indptr, indices):
        cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
        return cols * n + indices

    ukeys = _keys(union.indptr, union.indices)
    expanded = []
    for M in lower:
        vec = np.zeros(len(ukeys))
        vec[np.searchsorted(ukeys, _keys(M.indptr, M.indices))] = M.data
        expanded.append(vec)
    return FemTriple(
        mesh,
        d,
        SparseSymmetric.from_scipy(g1_sp),
        SparseSymmetric.from_scipy(g2_sp),
        _indptr=np.ascontiguousarray(union.indptr, dtype=np.int64),
        _indices=np.ascontiguousarray(union.indices, dtype=np.int64),
        _dvec=expanded[0],
        _g1vec=expanded[1],
        _g2vec=expanded[2],
    )


def spde_precision(fem: FemTriple, psi: float) -> SparseSymmetric:
    """Q_psi = (1/4pi)(psi^{-2} D + 2 G1 + psi^2 G2); SPD for every psi > 0."""
    return fem.precision(psi)


class _Locator:
    """Containing-triangle search via a KD-tree over triangle centroids."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        a, b, c = mesh.triangle_corners()
        self.a = a
        self.tree = cKDTree((a + b + c) / 3.0)
        if mesh.mode == "planar":
            # columns of the 2x2 edge matrix [b-a, c-a], inverted per triangle
            e1, e2 = b - a, c - a
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            self.inv = np.empty((len(a), 2, 2))
            self.inv[:, 0, 0] = e2[:, 1] / det
            self.inv[:, 0, 1] = -e2[:, 0] / det
            self.inv[:, 1, 0] = -e1[:, 1] / det
            self.inv[:, 1, 1] = e1[:, 0] / det
        else:
            e1, e2 = b - a, c - a
            g11 = np.einsum("td,td->t", e1, e1)
            g12 = np.einsum("td,td->t", e1, e2)
            g22 = np.einsum("td,td->t", e2, e2)
            det = g11 * g22 - g12 * g12
            self.e1, self.e2 = e1, e2
            self.ginv = np.empty((len(a), 2, 2))
            self.ginv[:, 0, 0] = g22 / det
            self.ginv[:, 0, 1] = -g12 / det
            self.ginv[:, 1, 0] = -g12 / det
            self.ginv[:, 1, 1] = g11 / det
            self.normal = np.cross(b - a, c - a)
            self.nv0 = np.einsum("td,td->t", self.normal, a)

    def _bary_candidates(self, pts, cand):
        """Barycentric weights of pts within candidate triangles, (N, k, 3)."""
        if self.mesh.mode == "planar":
            rhs = pts[:, None, :] - self.a[cand]
            w12 = np.einsum("nkij,nkj->nki", self.inv[cand], rhs)
        else:
            # gnomonic projection of the ray onto each candidate's plane
            ndot = np.einsum("nkd,nd->nk", self.normal[cand], pts)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = self.nv0[cand] / ndot
            q = t[..., None] * pts[:, None, :]
            rhs = q - self.a[cand]
            proj = np.stack(
                [
                    np.einsum("nkd,nkd->nk", self.e1[cand], rhs),
                    np.einsum("nkd,nkd->nk", self.e2[cand], rhs),
                ],
                axis=-1,
            )
            w12 = np.einsum("nkij,nkj->nki", self.ginv[cand], proj)
            w12[~np.isfinite(w12)] = -1.0
            w12[t <= 0] = -1.0
        w0 = 1.0 - w12[..., 0] - w12[..., 1]
        return np.concatenate([w0[..., None], w12], axis=-1)

    def locate(self, pts):
        """(triangle index, weights (N, 3)); raises OutOfDomainError."""
        n = len(pts)
        found = np.full(n, -1, dtype=np.int64)
        weights = np.zeros((n, 3))
        tol = -1e-9
        pending = np.arange(n)
        n_tri = self.mesh.n_triangles
        for k in (8, 64, n_tri):
            k = min(k, n_tri)
            _, cand = self.tree.query(pts[pending], k=k)
            cand = np.atleast_2d(cand)
            if cand.shape[0] != len(pending):
                cand = cand.reshape(len(pending), -1)
            w = self._bary_candidates(pts[pending], cand)
            ok = np.all(w >= tol, axis=-1)
            hit = ok.any(axis=1)
            first = np.argmax(ok, axis=1)
            rows = np.nonzero(hit)[0]
            sel = pending[rows]
            found[sel] = cand[rows, first[rows]]
            weights[sel] = w[rows, first[rows]]
            pending = pending[~hit]
            if pending.size == 0:
                break
        if pending.size:
            raise OutOfDomainError(
                f"location index {int(pending[0])} lies outside the mesh"
            )
        weights = np.clip(weights, 0.0, 1.0)
        weights /= weights.sum(axis=1, keepdims=True)
        return found, weights


def projection(mesh: Mesh, locations) -> sp.csr_matrix:
    """Barycentric projection matrix A (N x N*), <= 3 nonzeros per row.

    ``locations`` is (N, 2): planar coordinates or (lon, lat) degrees.
    Raises ``OutOfDomainError`` naming the first outside location.
    """
    locations = np.asarray(locations, dtype=float)
    if locations.ndim != 2 or locations.shape[1] != 2:
        raise ValidationError("locations must be a (N, 2) array")
    pts = locations if mesh.mode == "planar" else lonlat_to_xyz(locations)
    tri_idx, weights = _Locator(mesh).locate(pts)
    cols = mesh.triangles[tri_idx].ravel()
    rows = np.repeat(np.arange(len(locations)), 3)
    A = sp.coo_matrix(
        (weights.ravel(), (rows, cols)), shape=(len(locations), mesh.n_nodes)
    ).tocsr()
    A.sum_duplicates()
    return A


def geodesic_distance(p, q, mode: str) -> float:
    """Great-circle km between (lon, lat) degrees, or planar Euclidean."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if mode == "planar":
        return float(np.linalg.norm(p - q))
    if mode != "spherical":
        raise ValidationError(f"unknown mode {mode!r}")
    u, v = lonlat_to_xyz(p), lonlat_to_xyz(q)
    return float(
        EARTH_RADIUS_KM * np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v))
    )


def pairwise_geodesic(points_a, points_b, mode: str) -> np.ndarray:
    """Distance matrix between two (n, 2) coordinate sets."""
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    if mode == "planar":
        return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    u, v = lonlat_to_xyz(a), lonlat_to_xyz(b)
    dots = np.clip(u @ v.T, -1.0, 1.0)
    crossn = np.linalg.norm(np.cross(u[:, None, :], v[None, :, :]), axis=-1)
    return EARTH_RADIUS_KM * np.arctan2(crossn, dots)


def marginal_variance_diagnostic(fem: FemTriple, psi: float, probes) -> np.ndarray:
    """diag(A Q_psi^{-1} A^T) at probe locations via sparse solves.

    Values near 1 confirm the unit-variance normalization of the SPDE
    construction away from the mesh boundary.
    """
    A = projection(fem.mesh, probes)
    F = factorize(fem.precision(psi))
    out = np.empty(A.shape[0])
    for i in range(A.shape[0]):
        a0 = np.asarray(A.getrow(i).todense()).ravel()
        out[i] = float(a0 @ solve(F, a0))
    return out
