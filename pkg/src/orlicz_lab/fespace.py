"""Piecewise-linear vector fields on structured planar triangulations.

The mesh of ``[-L, L]^2`` uses alternating diagonals (a union-jack
pattern), so every triangle is right-angled and the stiffness matrix of
the Laplacian is an M-matrix.  Balls are handled by quadrature regions:
triangles fully inside a ball use the 3-point mid-edge rule, triangles
cut by the circle are subdivided and their sub-centroids tested.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "TriMesh", "FieldP1", "Ball", "AffineField", "Region", "MeshError",
    "build_mesh", "gradient", "ball_region", "domain_region",
    "ball_average", "modular", "luxemburg_norm", "submesh", "interpolate",
    "factorize", "stiffness_matrix", "tensor_stiffness", "flux_load", "harmonic_fill",
    "SubMesh", "export_field_csv", "import_field_csv", "export_mesh_csv",
]

MAX_VERTICES = 10_000_000


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangulation with per-triangle geometry precomputed.

    ``domain`` is the half-width ``L`` of the square ``[-L, L]^2`` for
    meshes from :func:`build_mesh` and ``None`` for sub-meshes.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    h: float
    boundary_nodes: np.ndarray
    domain: float | None = None

    @functools.cached_property
    def areas(self):
        x = self.vertices[self.triangles]
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @functools.cached_property
    def grad_basis(self):
        """Gradients of the three barycentric coordinates, shape (T, 3, 2)."""
        x = self.vertices[self.triangles]
        twice = 2.0 * self.areas
        out = np.empty((len(self.triangles), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            out[:, i, 0] = (x[:, j, 1] - x[:, k, 1]) / twice
            out[:, i, 1] = (x[:, k, 0] - x[:, j, 0]) / twice
        return out

    @functools.cached_property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @functools.cached_property
    def reach(self):
        """Largest centroid-to-vertex distance."""
        x = self.vertices[self.triangles]
        return float(np.linalg.norm(x - self.centroids[:, None], axis=2).max())

    @functools.cached_property
    def interior_nodes(self):
        mask = np.ones(len(self.vertices), dtype=bool)
        mask[self.boundary_nodes] = False
        return np.nonzero(mask)[0]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def area(self):
        return float(self.areas.sum())

    def edges(self):
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)


def build_mesh(L, h):
    """Structured alternating-diagonal triangulation of ``[-L, L]^2``.

    ``2L/h`` is rounded up to an integer cell count, so the realized mesh
    size never exceeds ``h``.
    """
    L, h = float(L), float(h)
    if not (0 < h <= L):
        raise MeshError(f"mesh size h={h} must satisfy 0 < h <= L={L}")
    n = int(np.ceil(2 * L / h - 1e-9))
    if (n + 1) ** 2 > MAX_VERTICES:
        raise MeshError(f"h={h} would need {(n + 1) ** 2} vertices")
    xs = np.linspace(-L, L, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a, b = idx[i, j], idx[i + 1, j]
    c, d = idx[i + 1, j + 1], idx[i, j + 1]
    even = (i + j) % 2 == 0
    tri = np.empty((2 * n * n, 3), dtype=np.int64)
    # even cells split along a-c, odd cells along b-d; all counter-clockwise
    tri[0::2] = np.where(even[:, None], np.column_stack([a, b, c]),
                         np.column_stack([a, b, d]))
    tri[1::2] = np.where(even[:, None], np.column_stack([a, c, d]),
                         np.column_stack([b, c, d]))
    on_edge = (np.abs(np.abs(vertices) - L) < 1e-12 * L).any(axis=1)
    return TriMesh(vertices=vertices, triangles=tri, h=2 * L / n,
                   boundary_nodes=np.nonzero(on_edge)[0], domain=L)


@dataclass(frozen=True, eq=False)
class FieldP1:
    """Vector-valued P1 field; ``values`` has shape (V, N)."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.mesh.n_vertices:
            raise ValueError("field length does not match the mesh")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def components(self):
        return self.values.shape[1]

    def gradient(self):
        return gradient(self)

    def __add__(self, other):
        other = other.values if isinstance(other, FieldP1) else other
        return FieldP1(self.mesh, self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, FieldP1) else other
        return FieldP1(self.mesh, self.values - other)

    def __mul__(self, c):
        return FieldP1(self.mesh, self.values * c)

    __rmul__ = __mul__


def interpolate(mesh, fn, components=None):
    """Nodal interpolant of ``fn(x, y) -> (..., N)`` arrays."""
    vals = np.asarray(fn(mesh.vertices[:, 0], mesh.vertices[:, 1]), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    elif vals.shape[0] != mesh.n_vertices:
        vals = np.moveaxis(vals, 0, -1)
    if components is not None and vals.shape[1] != components:
        raise ValueError("component count mismatch")
    return FieldP1(mesh, vals)


@dataclass(frozen=True)
class AffineField:
    """``x -> Q x + b`` with ``Q`` of shape (N, 2)."""

    Q: np.ndarray
    b: np.ndarray | None = None

    def __call__(self, x, y):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        b = np.zeros(Q.shape[0]) if self.b is None else np.asarray(self.b, float)
        pts = np.stack([np.asarray(x, float), np.asarray(y, float)], axis=-1)
        return pts @ Q.T + b

    def interpolate(self, mesh):
        return interpolate(mesh, self)


def gradient(u):
    """Per-triangle gradients, shape (T, N, 2)."""
    mesh = u.mesh
    local = u.values[mesh.triangles]
    return np.matmul(local.transpose(0, 2, 1), mesh.grad_basis)


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def scaled(self, factor):
        return Ball(self.center, self.radius * factor)

    def inside(self, mesh, factor=1.0, tol=1e-12):
        """Whether ``factor * B`` lies in the square domain of ``mesh``."""
        if mesh.domain is None:
            return False
        reach = np.abs(np.asarray(self.center)) + factor * self.radius
        return bool(np.all(reach <= mesh.domain * (1 + tol)))


@dataclass(frozen=True)
class Region:
    """Quadrature points: triangle index, barycentric coords and weights."""

    tri: np.ndarray
    bary: np.ndarray
    weight: np.ndarray
    n_triangles: int

    @property
    def area(self):
        return float(self.weight.sum())

    @functools.cached_property
    def cell_weights(self):
        return np.bincount(self.tri, weights=self.weight, minlength=self.n_triangles)

    @functools.cached_property
    def cells(self):
        return np.nonzero(self.cell_weights > 0)[0]

    def evaluate(self, mesh, data):
        """Values of per-vertex or per-triangle data at the points."""
        data = np.asarray(data, dtype=float)
        if data.shape[0] == mesh.n_triangles:
            return data[self.tri]
        if data.shape[0] == mesh.n_vertices:
            local = data[mesh.triangles[self.tri]]
            return np.einsum("mk,mk...->m...", self.bary, local)
        raise ValueError("data matches neither vertices nor triangles")

    def integrate(self, values):
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weight, values, axes=(0, 0))

    def average(self, values):
        return self.integrate(values) / self.area


_MIDEDGE = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


@functools.lru_cache(maxsize=8)
def _subdivision_centroids(depth):
    tris = [np.eye(3)]
    for _ in range(depth):
        nxt = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            nxt += [np.array([t[0], m01, m20]), np.array([m01, t[1], m12]),
                    np.array([m20, m12, t[2]]), np.array([m01, m12, m20])]
        tris = nxt
    return np.array([t.mean(axis=0) for t in tris])


def _point_triangle_distance(p, x):
    """Distance from point ``p`` to each triangle ``x`` (T, 3, 2)."""
    best = np.full(len(x), np.inf)
    for i in range(3):
        a, b = x[:, i], x[:, (i + 1) % 3]
        ab = b - a
        s = np.clip(np.einsum("td,td->t", p - a, ab) / np.einsum("td,td->t", ab, ab), 0, 1)
        best = np.minimum(best, np.linalg.norm(a + s[:, None] * ab - p, axis=1))
    d = x - p
    cross = [d[:, i, 0] * d[:, (i + 1) % 3, 1] - d[:, i, 1] * d[:, (i + 1) % 3, 0]
             for i in range(3)]
    inside = (cross[0] >= 0) & (cross[1] >= 0) & (cross[2] >= 0)
    return np.where(inside, 0.0, best)


def _mesh_cache(mesh):
    cache = mesh.__dict__.setdefault("_region_cache", {})
    if len(cache) > 256:
        cache.clear()
    return cache


def ball_region(mesh, ball, depth=2):
    """Quadrature region of ``ball`` intersected with the mesh."""
    key = (ball.center, ball.radius, depth)
    cache = _mesh_cache(mesh)
    if key in cache:
        return cache[key]
    c = np.asarray(ball.center)
    r = ball.radius
    # centroid prefilter: a triangle is within its circumradius of its centroid
    near = np.nonzero(np.linalg.norm(mesh.centroids - c, axis=1)
                      <= r + mesh.reach)[0]
    x = mesh.vertices[mesh.triangles[near]]
    far = np.linalg.norm(x - c, axis=2).max(axis=1)
    full = near[far <= r]
    cand = np.nonzero(far > r)[0]
    cut = near[cand[_point_triangle_distance(c, x[cand]) < r]]
    x = mesh.vertices[mesh.triangles]
    parts_tri = [np.repeat(full, 3)]
    parts_bary = [np.tile(_MIDEDGE, (len(full), 1))]
    parts_w = [np.repeat(mesh.areas[full] / 3.0, 3)]
    if cut.size:
        sub = _subdivision_centroids(depth)
        pts = np.einsum("sk,tkd->tsd", sub, x[cut])
        hit = np.linalg.norm(pts - c, axis=2) <= r
        t_idx, s_idx = np.nonzero(hit)
        parts_tri.append(cut[t_idx])
        parts_bary.append(sub[s_idx])
        parts_w.append(mesh.areas[cut[t_idx]] / len(sub))
    region = Region(np.concatenate(parts_tri), np.concatenate(parts_bary),
                    np.concatenate(parts_w), mesh.n_triangles)
    if region.area <= 0:
        raise MeshError(f"ball {ball} does not meet the mesh")
    cache[key] = region
    return region


def domain_region(mesh):
    cache = _mesh_cache(mesh)
    if "domain" not in cache:
        T = mesh.n_triangles
        cache["domain"] = Region(np.repeat(np.arange(T), 3),
                                 np.tile(_MIDEDGE, (T, 1)),
                                 np.repeat(mesh.areas / 3.0, 3), T)
    return cache["domain"]


def _region(mesh, region):
    if region is None:
        return domain_region(mesh)
    if isinstance(region, Ball):
        return ball_region(mesh, region)
    return region


def _magnitude(values):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return np.abs(values)
    return np.sqrt(np.sum(values.reshape(len(values), -1) ** 2, axis=1))


def ball_average(mesh, data, ball):
    """Area-weighted mean of per-vertex or per-triangle data over ``ball``."""
    if isinstance(data, FieldP1):
        data = data.values
    reg = ball_region(mesh, ball)
    return reg.average(reg.evaluate(mesh, data))


def modular(psi, mesh, data, region=None):
    """``int_region psi(|data|) dx``."""
    if isinstance(data, FieldP1):
        data = data.values
    reg = _region(mesh, region)
    return float(reg.integrate(psi(_magnitude(reg.evaluate(mesh, data)))))


def luxemburg_norm(psi, mesh, data, region=None, iters=60):
    """``inf{lam > 0 : int psi(|data| / lam) <= 1}`` by bisection."""
    if isinstance(data, FieldP1):
        data = data.values
    reg = _region(mesh, region)
    mag = _magnitude(reg.evaluate(mesh, data))
    if not np.any(mag > 0):
        return 0.0
    w = reg.weight

    def rho(lam):
        return float(w @ psi(mag / lam))

    lo = hi = float(mag.max())
    while rho(lo) <= 1.0:
        lo *= 0.5
    while rho(hi) > 1.0:
        hi *= 2.0
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        if rho(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return float(hi)


def factorize(A):
    """Sparse LU with a symmetric fill-reducing ordering."""
    return spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A")


def tensor_stiffness(mesh, A):
    """Sparse matrix of ``int A grad w : grad xi`` on ``V*N`` unknowns.

    ``A`` is one tensor ``(N, 2, N, 2)`` or one per triangle
    ``(T, N, 2, N, 2)``, indexed ``[i, a, j, b]``; unknowns are ordered
    vertex-major.
    """
    A = np.asarray(A, dtype=float)
    T = mesh.n_triangles
    g = mesh.grad_basis
    if A.ndim == 4:
        N = A.shape[0]
        local = np.einsum("tka,iajb,tlb->tkilj", g, A, g, optimize=True)
        local *= mesh.areas[:, None, None, None, None]
    else:
        N = A.shape[1]
        local = np.einsum("tka,tiajb,tlb->tkilj", g,
                          A * mesh.areas[:, None, None, None, None], g, optimize=True)
    local = local.reshape(T, 3 * N, 3 * N)
    dof = (mesh.triangles[:, :, None] * N + np.arange(N)).reshape(T, 3 * N)
    rows = np.repeat(dof, 3 * N, axis=1).ravel()
    cols = np.tile(dof, (1, 3 * N)).ravel()
    n = mesh.n_vertices * N
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def flux_load(mesh, G):
    """Nodal vector ``int G : grad phi_k e_i``, shape (V, N).

    ``G`` holds one ``N x 2`` matrix per triangle.
    """
    G = np.asarray(G, dtype=float) * mesh.areas[:, None, None]
    local = np.einsum("tia,tka->tki", G, mesh.grad_basis)
    out = np.zeros((mesh.n_vertices, G.shape[1]))
    np.add.at(out, mesh.triangles, local)
    return out


def stiffness_matrix(mesh):
    """Scalar P1 Laplacian stiffness matrix (V x V, CSR)."""
    g = mesh.grad_basis
    local = np.einsum("tkd,tld->tkl", g, g) * mesh.areas[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def harmonic_fill(mesh, values, fixed):
    """Discrete harmonic values on the free vertices.

    ``values`` (V, N) supplies Dirichlet data on the vertices where the
    boolean mask ``fixed`` holds; the remaining rows are replaced.
    """
    values = np.array(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    free = np.nonzero(~np.asarray(fixed))[0]
    if free.size == 0:
        return values
    K = stiffness_matrix(mesh)
    fix = np.nonzero(np.asarray(fixed))[0]
    rhs = -K[free][:, fix] @ values[fix]
    sol = factorize(K[free][:, free]).solve(rhs)
    values[free] = sol.reshape(len(free), -1)
    return values


@dataclass(frozen=True, eq=False)
class SubMesh:
    mesh: TriMesh
    parent: TriMesh
    vertex_map: np.ndarray
    triangle_map: np.ndarray

    def restrict(self, u):
        return FieldP1(self.mesh, u.values[self.vertex_map])


def submesh(mesh, ball):
    """Triangles whose centroid lies in ``ball``; boundary is topological."""
    c = np.asarray(ball.center)
    keep = np.nonzero(np.linalg.norm(mesh.centroids - c, axis=1) <= ball.radius)[0]
    if keep.size == 0:
        raise MeshError(f"ball {ball} contains no triangle centroid")
    tri = mesh.triangles[keep]
    used, local = np.unique(tri, return_inverse=True)
    local = local.reshape(tri.shape)
    e = np.sort(np.concatenate([local[:, [0, 1]], local[:, [1, 2]], local[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    bnd = np.unique(uniq[counts == 1])
    sub = TriMesh(vertices=mesh.vertices[used], triangles=local, h=mesh.h,
                  boundary_nodes=bnd, domain=None)
    return SubMesh(sub, mesh, used, keep)


def export_field_csv(u, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vertex", "x", "y"] + [f"u{i}" for i in range(u.components)])
        for k, (p, v) in enumerate(zip(u.mesh.vertices, u.values)):
            writer.writerow([k, repr(float(p[0])), repr(float(p[1]))]
                            + [repr(float(x)) for x in v])


def import_field_csv(mesh, path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if header[:3] != ["vertex", "x", "y"] or len(body) != mesh.n_vertices:
        raise ValueError("field CSV does not match the mesh")
    order = body[:, 0].astype(int)
    if not np.allclose(body[:, 1:3], mesh.vertices[order]):
        raise ValueError("field CSV coordinates do not match the mesh")
    vals = np.empty((mesh.n_vertices, len(header) - 3))
    vals[order] = body[:, 3:]
    return FieldP1(mesh, vals)


def export_mesh_csv(mesh, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["v0", "v1"])
        writer.writerows(mesh.edges().tolist())
